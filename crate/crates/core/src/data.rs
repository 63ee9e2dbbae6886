//! Offline transition datasets: random-policy generation, CSV persistence
//! with a JSON metadata sidecar, and seeded train/validation splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::env::{self, Action, EnvConfig, State};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] =
    ["x", "xdot", "theta", "thetadot", "action", "x'", "xdot'", "theta'", "thetadot'", "reward"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationTuple {
    pub s: State,
    pub a: Action,
    pub s_next: State,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub policy: String,
    pub n_tuples: usize,
    pub env_config: EnvConfig,
    pub env_config_hash: String,
    /// SHA-256 of the CSV file bytes; filled in on save.
    #[serde(default)]
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tuples: Vec<ObservationTuple>,
    pub meta: DatasetMeta,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn env_config_hash(cfg: &EnvConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

/// Collects exactly `n_tuples` transitions under the uniform random policy,
/// resetting whenever an episode terminates. The last episode may be cut
/// short.
pub fn generate_dataset(n_tuples: usize, seed: u64, cfg: &EnvConfig) -> Result<Dataset> {
    if n_tuples == 0 {
        return Err(Error::InvalidArgument("n_tuples must be >= 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n_tuples);
    let mut s = env::reset(rng.gen(), cfg);
    while tuples.len() < n_tuples {
        let a = if rng.gen::<bool>() { Action::Right } else { Action::Left };
        let s_next = env::physics_step(&s, a, cfg);
        let r = env::transition_reward(&s, &s_next, cfg);
        tuples.push(ObservationTuple { s, a, s_next, r });
        s = if env::is_terminal(&s_next, cfg) { env::reset(rng.gen(), cfg) } else { s_next };
    }
    Ok(Dataset {
        tuples,
        meta: DatasetMeta {
            seed,
            policy: "uniform_random".into(),
            n_tuples,
            env_config: cfg.clone(),
            env_config_hash: env_config_hash(cfg),
            content_hash: String::new(),
        },
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.meta.env_config
    }

    /// Indices of tuples that begin an episode.
    pub fn episode_starts(&self) -> Vec<usize> {
        let cfg = &self.meta.env_config;
        (0..self.tuples.len())
            .filter(|&i| i == 0 || env::is_terminal(&self.tuples[i - 1].s_next, cfg))
            .collect()
    }

    /// Rows whose stored reward differs from the environment's reward by more
    /// than `1e-12`.
    pub fn reward_mismatches(&self) -> Vec<usize> {
        let cfg = &self.meta.env_config;
        self.tuples
            .iter()
            .enumerate()
            .filter(|(_, t)| (t.r - env::transition_reward(&t.s, &t.s_next, cfg)).abs() > 1e-12)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of tuples with a state far from the track center while the pole
    /// is nearly upright: `|x| > x_min` and `|theta| < theta_max`.
    pub fn off_center_upright_count(&self, x_min: f64, theta_max: f64) -> usize {
        self.tuples
            .iter()
            .filter(|t| {
                [t.s, t.s_next].iter().any(|s| s.x.abs() > x_min && s.theta.abs() < theta_max)
            })
            .count()
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for t in &self.tuples {
            let mut row: Vec<String> = Vec::with_capacity(10);
            row.extend(t.s.to_array().iter().map(f64::to_string));
            row.push(t.a.index().to_string());
            row.extend(t.s_next.to_array().iter().map(f64::to_string));
            row.push(t.r.to_string());
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `<path>` (CSV) and `<path stem>.meta.json`.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let bytes = d.to_csv_bytes()?;
    let mut meta = d.meta.clone();
    meta.n_tuples = d.tuples.len();
    meta.content_hash = sha256_hex(&bytes);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Loads and verifies a dataset: file hash, row count and config hash must
/// match the sidecar.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
    let tuples = parse_csv(&bytes, path)?;

    let integrity = |message: String| Error::Integrity { path: path.to_path_buf(), message };
    if tuples.len() != meta.n_tuples {
        return Err(integrity(format!("expected {} rows, found {}", meta.n_tuples, tuples.len())));
    }
    let actual = sha256_hex(&bytes);
    if actual != meta.content_hash {
        return Err(integrity(format!("content hash {actual} does not match sidecar {}", meta.content_hash)));
    }
    if env_config_hash(&meta.env_config) != meta.env_config_hash {
        return Err(integrity("environment config hash mismatch".into()));
    }
    Ok(Dataset { tuples, meta })
}

fn parse_csv(bytes: &[u8], path: &Path) -> Result<Vec<ObservationTuple>> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut tuples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != CSV_HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let mut v = [0.0f64; 10];
        for (i, field) in rec.iter().enumerate() {
            v[i] = field
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", CSV_HEADER[i])))?;
            if !v[i].is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", CSV_HEADER[i])));
            }
        }
        let a = match v[4] {
            x if x == 0.0 => Action::Left,
            x if x == 1.0 => Action::Right,
            x => return Err(parse_err(line, format!("action must be 0 or 1, got {x}"))),
        };
        tuples.push(ObservationTuple {
            s: State::new(v[0], v[1], v[2], v[3]),
            a,
            s_next: State::new(v[5], v[6], v[7], v[8]),
            r: v[9],
        });
    }
    Ok(tuples)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` and cuts at `round(ratio * n)`.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows at ratio {ratio} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = idx.split_off(n_train);
    Ok(Split { train: idx, validation })
}

pub fn split_dataset(d: &Dataset, ratio: f64, seed: u64) -> Result<Split> {
    split_indices(d.len(), ratio, seed)
}
