//! Soft-label CSV (`example_id,p_0,...,p_{K-1}`) and its meta JSON.

use std::fs;
use std::path::Path;

use super::{LabelMeta, SoftLabels};
use crate::{Error, Result};

pub fn write_soft_labels(soft: &SoftLabels, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["example_id".to_string()];
    header.extend((0..soft.k()).map(|c| format!("p_{c}")));
    w.write_record(&header)?;
    for (id, row) in soft.example_ids.iter().zip(&soft.rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads soft labels; `prior` and `model` are not stored in the CSV.
pub fn read_soft_labels(path: impl AsRef<Path>, prior: &[f64], model: &str) -> Result<SoftLabels> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::load(path, e))?;
    let k = r.headers()?.len().saturating_sub(1);
    if k != prior.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            reason: format!("{k} probability columns for {} classes", prior.len()),
        });
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            reason,
        };
        if rec.len() != k + 1 {
            return Err(parse_err(format!(
                "{} fields, expected {}",
                rec.len(),
                k + 1
            )));
        }
        ids.push(rec[0].to_string());
        rows.push(
            rec.iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| parse_err(format!("{f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    SoftLabels::new(ids, rows, model, prior.to_vec())
}

pub fn write_label_meta(meta: &LabelMeta, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_label_meta(path: impl AsRef<Path>) -> Result<LabelMeta> {
    let path = path.as_ref();
    Ok(serde_json::from_slice(
        &fs::read(path).map_err(|e| Error::load(path, e))?,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_labels_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let third = 1.0 / 3.0;
        let soft = SoftLabels::new(
            vec!["a".into(), "b,c".into()],
            vec![vec![third, 1.0 - third], vec![0.5, 0.5]],
            "ds",
            vec![0.5, 0.5],
        )
        .unwrap();
        write_soft_labels(&soft, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("example_id,p_0,p_1\n"));
        assert_eq!(read_soft_labels(&path, &[0.5, 0.5], "ds").unwrap(), soft);
        assert!(read_soft_labels(&path, &[0.2, 0.3, 0.5], "ds").is_err());
    }
}
