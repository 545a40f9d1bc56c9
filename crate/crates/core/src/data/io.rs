//! Dataset directories and vote-matrix files.
//!
//! A dataset directory holds `classes.json` and one JSON-lines file per
//! split. A vote matrix is a CSV of class codes (`-1` abstains), with a
//! sidecar CSV of confidences and a `.meta.json` carrying provenance.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassSpace, Dataset, Example, Provenance, Split, Vote, VoteMatrix, ABSTAIN_CODE};
use crate::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Serialize, Deserialize)]
struct ClassesFile {
    names: Vec<String>,
    positive: String,
    prior: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    fields: BTreeMap<String, String>,
    label: Option<i64>,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let classes_path = dir.join("classes.json");
    let classes: ClassesFile = serde_json::from_slice(
        &fs::read(&classes_path).map_err(|e| Error::load(&classes_path, e))?,
    )
    .map_err(|e| Error::load(&classes_path, e))?;
    let positive = classes
        .names
        .iter()
        .position(|n| *n == classes.positive)
        .ok_or_else(|| {
            Error::Validation(format!(
                "positive class {:?} is not among {:?}",
                classes.positive, classes.names
            ))
        })?;
    let class_space = ClassSpace::new(classes.names, positive)?;

    let mut splits = Vec::new();
    for name in SPLITS {
        let path = dir.join(format!("{name}.jsonl"));
        let file = File::open(&path).map_err(|e| Error::load(&path, e))?;
        let mut examples = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                row: lineno + 1,
                reason: e.to_string(),
            })?;
            let gold = match rec.label {
                None => None,
                Some(l) if l >= 0 => Some(l as usize),
                Some(l) => {
                    return Err(Error::Parse {
                        path: path.clone(),
                        row: lineno + 1,
                        reason: format!("negative label {l}"),
                    })
                }
            };
            examples.push(Example {
                id: rec.id,
                fields: rec
                    .fields
                    .into_iter()
                    .map(|(k, v)| (k.to_ascii_lowercase(), v))
                    .collect(),
                gold,
            });
        }
        splits.push(Split::new(name, examples));
    }
    Dataset::new(class_space, splits, classes.prior)
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let classes = ClassesFile {
        names: dataset.class_space.names().to_vec(),
        positive: dataset
            .class_space
            .name(dataset.class_space.positive_index())
            .to_string(),
        prior: dataset.prior.clone(),
    };
    fs::write(
        dir.join("classes.json"),
        serde_json::to_string_pretty(&classes)? + "\n",
    )?;
    for name in SPLITS {
        let mut out = BufWriter::new(File::create(dir.join(format!("{name}.jsonl")))?);
        if let Some(split) = dataset.splits.get(name) {
            for e in &split.examples {
                let rec = Record {
                    id: e.id.clone(),
                    fields: e.fields.clone(),
                    label: e.gold.map(|g| g as i64),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
    }
    Ok(())
}

/// `votes.csv` -> (`votes.conf.csv`, `votes.meta.json`).
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parent = path.parent().unwrap_or_else(|| Path::new(""));
    (
        parent.join(format!("{stem}.conf.csv")),
        parent.join(format!("{stem}.meta.json")),
    )
}

#[derive(Serialize, Deserialize)]
struct MatrixMeta {
    split: String,
    lf_names: Vec<String>,
    provenance: BTreeMap<String, Provenance>,
}

pub fn write_vote_matrix(matrix: &VoteMatrix, path: impl AsRef<Path>) -> Result<()> {
    matrix.validate()?;
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let (conf_path, meta_path) = sidecar_paths(path);
    let mut header = vec!["example_id".to_string()];
    header.extend(matrix.lf_names.iter().cloned());

    let mut votes = csv::Writer::from_path(path)?;
    let mut confs = csv::Writer::from_path(&conf_path)?;
    votes.write_record(&header)?;
    confs.write_record(&header)?;
    for (id, row) in matrix.example_ids.iter().zip(&matrix.rows) {
        let mut v = vec![id.clone()];
        let mut c = vec![id.clone()];
        for vote in row {
            v.push(vote.code().to_string());
            c.push(vote.confidence.to_string());
        }
        votes.write_record(&v)?;
        confs.write_record(&c)?;
    }
    votes.flush()?;
    confs.flush()?;

    let meta = MatrixMeta {
        split: matrix.split.clone(),
        lf_names: matrix.lf_names.clone(),
        provenance: matrix.provenance.clone(),
    };
    fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<String>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::load(path, e))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("example_id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            reason: "header must start with `example_id`".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: i + 1,
                reason: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let id = rec[0].to_string();
        rows.push((id, rec.iter().skip(1).map(str::to_string).collect()));
    }
    Ok((header[1..].to_vec(), rows))
}

pub fn read_vote_matrix(path: impl AsRef<Path>) -> Result<VoteMatrix> {
    let path = path.as_ref();
    let (conf_path, meta_path) = sidecar_paths(path);
    let (lf_names, vote_rows) = read_table(path)?;

    let conf_rows = if conf_path.exists() {
        let (conf_names, rows) = read_table(&conf_path)?;
        if conf_names != lf_names || rows.len() != vote_rows.len() {
            return Err(Error::load(
                &conf_path,
                "confidence sidecar shape differs from votes",
            ));
        }
        Some(rows)
    } else {
        None
    };

    let mut example_ids = Vec::with_capacity(vote_rows.len());
    let mut rows = Vec::with_capacity(vote_rows.len());
    for (i, (id, cells)) in vote_rows.into_iter().enumerate() {
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            reason,
        };
        let confs = conf_rows.as_ref().map(|r| &r[i]);
        if let Some((cid, _)) = confs {
            if *cid != id {
                return Err(parse_err(format!("confidence row id {cid:?} != {id:?}")));
            }
        }
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let code: i64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad vote {cell:?}")))?;
            let confidence = match confs {
                Some((_, c)) => c[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad confidence {:?}", c[j])))?,
                None => 1.0,
            };
            row.push(match code {
                ABSTAIN_CODE => Vote::abstain(confidence),
                c if c >= 0 => Vote::class(c as usize, confidence),
                c => return Err(parse_err(format!("invalid vote code {c}"))),
            });
        }
        example_ids.push(id);
        rows.push(row);
    }

    let (split, provenance) = if meta_path.exists() {
        let meta: MatrixMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        if meta.lf_names != lf_names {
            return Err(Error::load(
                &meta_path,
                "labeling functions differ from CSV header",
            ));
        }
        (meta.split, meta.provenance)
    } else {
        ("train".to_string(), BTreeMap::new())
    };

    let matrix = VoteMatrix {
        lf_names,
        example_ids,
        rows,
        split,
        provenance,
    };
    matrix.validate()?;
    Ok(matrix)
}
