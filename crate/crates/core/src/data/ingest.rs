//! CSV + JSON-metadata dataset ingestion.
//!
//! The metadata document declares node ids, the sampling interval and one
//! CSV file per channel; each channel file holds T rows by N columns.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};

/// Channel declaration inside [`DatasetMetadata`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub name: String,
    /// CSV path, resolved relative to the metadata file.
    pub csv: String,
}

/// JSON document describing a CSV dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub nodes: Vec<String>,
    pub interval_minutes: u32,
    pub channels: Vec<ChannelMeta>,
}

fn read_channel(path: &Path, nodes: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != nodes {
            return Err(Error::Input(format!(
                "{} line {}: {} columns, expected {nodes}",
                path.display(),
                lineno + 1,
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(nodes);
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Input(format!(
                    "{} line {}: non-numeric cell '{cell}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: empty channel file", path.display())));
    }
    Ok(rows)
}

/// Load a dataset from its metadata document.
pub fn ingest_csv(metadata_path: &Path) -> Result<RawSeries> {
    let meta: DatasetMetadata = serde_json::from_str(
        &fs::read_to_string(metadata_path)
            .map_err(|e| Error::Input(format!("{}: {e}", metadata_path.display())))?,
    )
    .map_err(|e| Error::Input(format!("{}: {e}", metadata_path.display())))?;
    if meta.channels.is_empty() {
        return Err(Error::Input("metadata declares no channels".into()));
    }
    let nodes = meta.nodes.len();
    if nodes == 0 {
        return Err(Error::Input("metadata declares no nodes".into()));
    }
    let base = metadata_path.parent().unwrap_or(Path::new("."));
    let mut channels: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut steps = 0usize;
    for (c, ch) in meta.channels.iter().enumerate() {
        let path: PathBuf = base.join(&ch.csv);
        let rows = read_channel(&path, nodes)?;
        if c == 0 {
            steps = rows.len();
        } else if rows.len() != steps {
            return Err(Error::Input(format!(
                "channel '{}' has {} steps, channel '{}' has {steps}",
                ch.name,
                rows.len(),
                meta.channels[0].name
            )));
        }
        channels.push(rows);
    }
    let d = channels.len();
    let mut data = vec![0.0; steps * nodes * d];
    for (c, rows) in channels.iter().enumerate() {
        for (t, row) in rows.iter().enumerate() {
            for (n, &v) in row.iter().enumerate() {
                data[(t * nodes + n) * d + c] = v;
            }
        }
    }
    RawSeries::new(
        data,
        steps,
        nodes,
        d,
        meta.interval_minutes,
        Some(meta.nodes),
        Some(meta.channels.iter().map(|c| c.name.clone()).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_meta(dir: &Path, channels: &[(&str, &str)]) -> PathBuf {
        let meta = DatasetMetadata {
            nodes: vec!["a".into(), "b".into()],
            interval_minutes: 5,
            channels: channels
                .iter()
                .map(|(name, csv)| ChannelMeta {
                    name: name.to_string(),
                    csv: csv.to_string(),
                })
                .collect(),
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string(&meta).unwrap()).unwrap();
        path
    }

    #[test]
    fn small_file_shapes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("speed.csv"), "1,2\n3,4\n5,6\n").unwrap();
        let meta = write_meta(dir.path(), &[("speed", "speed.csv")]);
        let rs = ingest_csv(&meta).unwrap();
        assert_eq!((rs.steps(), rs.nodes(), rs.channels()), (3, 2, 1));
        assert_eq!(rs.at(1, 0, 0), 3.0);
        assert_eq!(rs.at(2, 1, 0), 6.0);
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("speed.csv"), "1,2\n3,oops\n").unwrap();
        let meta = write_meta(dir.path(), &[("speed", "speed.csv")]);
        let err = ingest_csv(&meta).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("oops"), "{msg}");
    }

    #[test]
    fn channel_length_disagreement_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "1,2\n3,4\n").unwrap();
        fs::write(dir.path().join("b.csv"), "1,2\n").unwrap();
        let meta = write_meta(dir.path(), &[("a", "a.csv"), ("b", "b.csv")]);
        assert!(ingest_csv(&meta).is_err());
    }

    #[test]
    fn column_count_disagreement_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "1,2\n3,4,5\n").unwrap();
        let meta = write_meta(dir.path(), &[("a", "a.csv")]);
        let err = ingest_csv(&meta).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
