//! Text file formats.
//!
//! Embedding files start with a `d=<int>` header followed by one record per
//! sample: `<v|r>,<true_id or -1>,<f_1>,...,<f_d>`. An empty modality field
//! is read as a missing tag so that validation can report it. Floats are
//! written in shortest round-trip form, so reading a written file yields the
//! same bits.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{EmbeddingSet, Modality, RawEmbeddings};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
/// Returns `(line, key, value)` triples in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected key=value, got `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_embeddings(text: &str) -> Result<RawEmbeddings> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        reason: "empty file".into(),
    })?;
    let dim: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: hline + 1,
            reason: format!("expected header `d=<int>`, got `{}`", header.trim()),
        })?;

    let mut features = Vec::new();
    let mut modality = Vec::new();
    let mut ids = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {} fields, found {}", dim + 2, fields.len()),
            });
        }
        let tag = fields[0].trim();
        modality.push(if tag.is_empty() {
            None
        } else {
            Some(Modality::from_tag(tag).ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("unknown modality tag `{tag}`"),
            })?)
        });
        let id: i64 = fields[1].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            reason: format!("bad identity `{}`", fields[1]),
        })?;
        ids.push(match id {
            -1 => None,
            id if id >= 0 && id <= u32::MAX as i64 => Some(id as u32),
            id => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("identity {id} out of range"),
                })
            }
        });
        for f in &fields[2..] {
            features.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("bad feature value `{f}`"),
            })?);
        }
    }
    let rows = modality.len();
    let features =
        Array2::from_shape_vec((rows, dim), features).map_err(|e| Error::Shape(e.to_string()))?;
    let true_identity = if ids.iter().all(Option::is_none) {
        None
    } else {
        Some(ids)
    };
    Ok(RawEmbeddings {
        features,
        modality,
        true_identity,
    })
}

pub fn write_embeddings(set: &EmbeddingSet) -> String {
    let mut out = format!("d={}\n", set.dim());
    for i in 0..set.len() {
        let id = set
            .true_identity()
            .map_or(-1, |ids| i64::from(ids[i]));
        let _ = write!(out, "{},{id}", set.modality()[i].tag());
        for v in set.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Row-major decimal dump of a square matrix, one row per line.
pub fn write_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
