//! Jensen-Shannon divergence between discrete distributions, base-2 logs so
//! the range is [0, 1].

use crate::error::{Error, Result};

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Input(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// 0.5*KL(p||m) + 0.5*KL(q||m) with m = (p+q)/2 and base-2 logs.
/// Symmetric, zero iff p = q, bounded by 1.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Input(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / mi).log2();
        }
    }
    Ok(acc)
}
