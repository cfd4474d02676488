//! Dynamic time warping distance between real-valued series.

use crate::error::{Error, Result};

/// Minimum cumulative |a_i - b_j| cost over monotone warping paths, with an
/// optional Sakoe-Chiba band restricting |i - j| <= band.
pub fn dtw_distance(a: &[f64], b: &[f64], band: Option<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("dtw of an empty series".into()));
    }
    if let Some(w) = band {
        let min_band = a.len().abs_diff(b.len());
        if w < min_band {
            return Err(Error::Input(format!(
                "band {w} infeasible for lengths {} and {} (need >= {min_band})",
                a.len(),
                b.len()
            )));
        }
    }
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(f64::INFINITY);
        let (lo, hi) = match band {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in lo..=hi {
            let cost = (a[i - 1] - b[j - 1]).abs();
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_series_have_zero_distance() {
        let x = [0.5, -1.0, 3.0, 2.0];
        assert_eq!(dtw_distance(&x, &x, None).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_pair() {
        assert_eq!(dtw_distance(&[0.0, 0.0], &[1.0, 1.0], None).unwrap(), 2.0);
    }

    #[test]
    fn repeat_aligns_at_zero_cost() {
        assert_eq!(
            dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0], None).unwrap(),
            0.0
        );
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = [1.0, 4.0, 2.0];
        let b = [0.0, 3.0, 3.0, 1.0];
        assert_eq!(
            dtw_distance(&a, &b, None).unwrap(),
            dtw_distance(&b, &a, None).unwrap()
        );
    }

    #[test]
    fn empty_series_rejected() {
        assert!(dtw_distance(&[], &[1.0], None).is_err());
    }

    #[test]
    fn infeasible_band_rejected() {
        assert!(dtw_distance(&[1.0], &[1.0, 2.0, 3.0], Some(1)).is_err());
        assert!(dtw_distance(&[1.0], &[1.0, 2.0, 3.0], Some(2)).is_ok());
    }

    #[test]
    fn full_band_matches_unbanded() {
        let a = [0.0, 2.0, 1.0, 5.0];
        let b = [1.0, 1.0, 4.0];
        assert_eq!(
            dtw_distance(&a, &b, Some(4)).unwrap(),
            dtw_distance(&a, &b, None).unwrap()
        );
    }
}
