//! Column schemas of every CSV the pipeline writes, and a validator.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Int,
    Real,
    /// 0 or 1.
    Flag,
    Text,
    /// Real or empty.
    OptionalReal,
    /// Action index or empty.
    OptionalAction,
}

#[derive(Clone, Copy, Debug)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [(&'static str, Column)],
}

use Column::*;

pub const DATASET: Schema = Schema {
    name: "dataset",
    columns: &[
        ("x", Real),
        ("xdot", Real),
        ("theta", Real),
        ("thetadot", Real),
        ("action", Flag),
        ("x'", Real),
        ("xdot'", Real),
        ("theta'", Real),
        ("thetadot'", Real),
        ("reward", Real),
    ],
};

pub const LEARNING_CURVE: Schema =
    Schema { name: "learning_curve", columns: &[("epoch", Int), ("train_loss", Real), ("val_loss", Real)] };

pub const ONE_STEP_ERRORS: Schema = Schema {
    name: "one_step_errors",
    columns: &[
        ("tier", Text),
        ("epoch", Int),
        ("rmse_x", Real),
        ("rmse_xdot", Real),
        ("rmse_theta", Real),
        ("rmse_thetadot", Real),
        ("mean_scaled", Real),
        ("reward_rmse", Real),
    ],
};

pub const DIVERGENCE: Schema = Schema { name: "divergence", columns: &[("step", Int), ("divergence", Real)] };

pub const ROLLOUT: Schema = Schema {
    name: "rollout",
    columns: &[
        ("step", Int),
        ("x", Real),
        ("xdot", Real),
        ("theta", Real),
        ("thetadot", Real),
        ("action", OptionalAction),
        ("reward", OptionalReal),
    ],
};

pub const VALUE_ROWS: Schema = Schema {
    name: "value_rows",
    columns: &[
        ("seed", Int),
        ("index", Int),
        ("x", Real),
        ("xdot", Real),
        ("theta", Real),
        ("thetadot", Real),
        ("true_return", Real),
        ("v_mbro", Real),
        ("v_fqe", Real),
        ("v_fitted_mbro", Real),
    ],
};

pub const VALUE_ERRORS: Schema = Schema {
    name: "value_errors",
    columns: &[("seed", Int), ("index", Int), ("estimator", Text), ("estimate", Real), ("error", Real)],
};

pub const LEARNING_RUN: Schema = Schema {
    name: "learning_run",
    columns: &[
        ("iteration", Int),
        ("mean_target", Real),
        ("mean_return", Real),
        ("mean_steps", Real),
        ("survival_fraction", Real),
        ("perfect", Flag),
        ("q_checkpoint", Text),
    ],
};

pub const ALL: [Schema; 9] =
    [DATASET, LEARNING_CURVE, ONE_STEP_ERRORS, DIVERGENCE, ROLLOUT, VALUE_ROWS, VALUE_ERRORS, LEARNING_RUN, SUMMARY_TABLE];

/// Flattened summary tables written by `report`.
pub const SUMMARY_TABLE: Schema =
    Schema { name: "summary_table", columns: &[("quantity", Text), ("label", Text), ("mean", Real), ("stderr", OptionalReal)] };

fn cell_ok(kind: Column, v: &str) -> bool {
    match kind {
        Int => v.parse::<u64>().is_ok(),
        Real => v.parse::<f64>().is_ok(),
        Flag => v == "0" || v == "1",
        Text => !v.is_empty(),
        OptionalReal => v.is_empty() || v.parse::<f64>().is_ok(),
        OptionalAction => v.is_empty() || v == "0" || v == "1",
    }
}

impl Schema {
    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|(n, _)| *n).collect()
    }

    /// Checks header, field counts and cell types; returns the row count.
    pub fn validate_bytes(&self, bytes: &[u8], label: &Path) -> Result<usize> {
        let err = |line: u64, message: String| Error::Parse { path: label.to_path_buf(), line, message };
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
        let mut rows = 0;
        for (i, rec) in reader.records().enumerate() {
            let line = i as u64 + 1;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            if i == 0 {
                let got: Vec<&str> = rec.iter().collect();
                if got != self.header() {
                    return Err(err(line, format!("header {got:?} does not match {} schema", self.name)));
                }
                continue;
            }
            if rec.len() != self.columns.len() {
                return Err(err(line, format!("expected {} fields, found {}", self.columns.len(), rec.len())));
            }
            for ((name, kind), v) in self.columns.iter().zip(rec.iter()) {
                if !cell_ok(*kind, v) {
                    return Err(err(line, format!("column {name}: invalid value '{v}'")));
                }
            }
            rows += 1;
        }
        if rows == 0 && reader.position().line() == 1 {
            return Err(err(1, "missing header".into()));
        }
        Ok(rows)
    }

    pub fn validate_file(&self, path: &Path) -> Result<usize> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.validate_bytes(&bytes, path)
    }
}

/// Picks the schema whose header matches the first line of `bytes`.
pub fn detect(bytes: &[u8]) -> Option<Schema> {
    let first = bytes.split(|&b| b == b'\n').next()?;
    let first = std::str::from_utf8(first).ok()?.trim_end_matches('\r');
    ALL.into_iter().find(|s| s.header().join(",") == first)
}

/// Validates every `.csv` below `dir`; returns `(path, rows)` per file.
pub fn validate_tree(dir: &Path) -> Result<Vec<(std::path::PathBuf, usize)>> {
    let mut files = Vec::new();
    collect_csv(dir, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let schema = detect(&bytes).ok_or_else(|| Error::Parse {
                path: p.clone(),
                line: 1,
                message: "header matches no known schema".into(),
            })?;
            let n = schema.validate_bytes(&bytes, &p)?;
            Ok((p, n))
        })
        .collect()
}

fn collect_csv(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_csv(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_are_unique() {
        for (i, a) in ALL.iter().enumerate() {
            for b in &ALL[i + 1..] {
                assert_ne!(a.header(), b.header(), "{} vs {}", a.name, b.name);
            }
        }
    }

    #[test]
    fn accepts_and_rejects() {
        let p = Path::new("t.csv");
        assert_eq!(DIVERGENCE.validate_bytes(b"step,divergence\n0,0\n1,0.5\n", p).unwrap(), 2);
        assert!(DIVERGENCE.validate_bytes(b"step,div\n0,0\n", p).is_err());
        let e = DIVERGENCE.validate_bytes(b"step,divergence\n0,0\n1,abc\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(DIVERGENCE.validate_bytes(b"step,divergence\n0,0,1\n", p).is_err());
        assert!(DIVERGENCE.validate_bytes(b"", p).is_err());
    }

    #[test]
    fn detects_schema_by_header() {
        assert_eq!(detect(b"step,divergence\n").unwrap().name, "divergence");
        assert!(detect(b"a,b\n").is_none());
    }
}
