//! File formats: configuration JSON, sample CSV, run manifests, oracle
//! reports, and atomic whole-file writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{Boundary, EnsembleConfig, NO_CEILING, NO_FLOOR};
use crate::error::{Error, Result};
use crate::increments::{to_grid, ModelSpec};
use crate::oracle::{Marginal, OracleTable};
use crate::sampler::{ChainCounters, SampleSet};

/// Floor or ceiling in height units. Table entries may be `null` for ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundaryJson {
    Const(f64),
    Table(Vec<Option<f64>>),
}

/// JSON form of an [`EnsembleConfig`]; heights in height units. A missing
/// floor means no floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigJson {
    pub n: usize,
    pub interval: [i64; 2],
    pub tilt_normalizer: f64,
    pub a: f64,
    pub b: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<BoundaryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<BoundaryJson>,
    pub model: ModelSpec,
}

impl ConfigJson {
    pub fn build(&self) -> Result<EnsembleConfig> {
        let model = self.model.resolve()?;
        let eps = model.grid_step();
        let grid_vec = |xs: &[f64]| xs.iter().map(|&x| to_grid(x, eps)).collect::<Result<Vec<_>>>();
        let boundary = |b: &BoundaryJson| -> Result<Boundary> {
            Ok(match b {
                BoundaryJson::Const(c) => Boundary::Const(to_grid(*c, eps)?),
                BoundaryJson::Table(t) => Boundary::Table(
                    t.iter().map(|x| x.map(|x| to_grid(x, eps)).transpose()).collect::<Result<_>>()?,
                ),
            })
        };
        let mut builder = EnsembleConfig::builder(model.clone(), self.n, (self.interval[0], self.interval[1]))
            .tilt(self.a, self.b, self.tilt_normalizer)
            .boundaries(grid_vec(&self.u)?, grid_vec(&self.v)?);
        builder = match &self.floor {
            Some(f) => builder.floor(boundary(f)?),
            None => builder.no_floor(),
        };
        builder.ceiling(self.ceiling.as_ref().map(boundary).transpose()?).build()
    }

    pub fn from_config(config: &EnsembleConfig) -> Self {
        let eps = config.grid_step();
        let h = |x: i32| x as f64 * eps;
        let floor = if config.floor().iter().all(|&x| x == NO_FLOOR) {
            None
        } else if config.floor().windows(2).all(|w| w[0] == w[1]) {
            Some(BoundaryJson::Const(h(config.floor()[0])))
        } else {
            Some(BoundaryJson::Table(
                config.floor().iter().map(|&x| (x != NO_FLOOR).then(|| h(x))).collect(),
            ))
        };
        let ceiling = config.ceiling().map(|g| {
            if g.windows(2).all(|w| w[0] == w[1]) && g[0] != NO_CEILING {
                BoundaryJson::Const(h(g[0]))
            } else {
                BoundaryJson::Table(g.iter().map(|&x| (x != NO_CEILING).then(|| h(x))).collect())
            }
        });
        Self {
            n: config.n(),
            interval: [config.left(), config.right()],
            tilt_normalizer: config.tilt_normalizer(),
            a: config.a(),
            b: config.b(),
            u: config.u().iter().map(|&x| h(x)).collect(),
            v: config.v().iter().map(|&x| h(x)).collect(),
            floor,
            ceiling,
            model: ModelSpec::Inline(config.model().to_json()),
        }
    }
}

/// Parse JSON, reporting unknown fields and type errors with their path.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidConfig(format!("at `{path}`: {}", e.into_inner()))
    })
}

/// SHA-256 of the canonical JSON of a configuration, as hex.
pub fn config_hash(config: &EnsembleConfig) -> String {
    let json = serde_json::to_string(&ConfigJson::from_config(config)).expect("config serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Samples as CSV with columns `chain,sweep,curve,site,height`.
pub fn samples_csv(samples: &SampleSet) -> String {
    let mut out = String::from("chain,sweep,curve,site,height\n");
    let g = samples.grid_step();
    for k in 0..samples.len() {
        let (chain, sweep) = samples.label(k);
        for i in 0..samples.n() {
            for (col, &x) in samples.curve(k, i).iter().enumerate() {
                let site = samples.left() + col as i64;
                let _ = writeln!(out, "{chain},{sweep},{i},{site},{}", x as f64 * g);
            }
        }
    }
    out
}

/// Read a CSV written by [`samples_csv`] back into a sample set.
pub fn parse_samples_csv(text: &str, n: usize, left: i64, width: usize, grid_step: f64) -> Result<SampleSet> {
    let mut set = SampleSet::with_shape(n, width, left, grid_step);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("chain,sweep,curve,site,height") {
        return Err(Error::InvalidState("missing sample CSV header".into()));
    }
    let bad = |line: &str| Error::InvalidState(format!("malformed sample row `{line}`"));
    let mut current: Option<(u32, u64)> = None;
    let mut buf = Vec::with_capacity(n * width);
    let mut flush = |label: Option<(u32, u64)>, buf: &mut Vec<i32>| -> Result<()> {
        if let Some((c, s)) = label {
            let state = crate::ensemble::EnsembleState::from_flat(n, width, std::mem::take(buf))?;
            set.push(c, s, &state);
        }
        Ok(())
    };
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(line));
        }
        let label = (f[0].parse().map_err(|_| bad(line))?, f[1].parse().map_err(|_| bad(line))?);
        if current != Some(label) {
            flush(current, &mut buf)?;
            current = Some(label);
        }
        let h: f64 = f[4].parse().map_err(|_| bad(line))?;
        buf.push(to_grid(h, grid_step)?);
    }
    flush(current, &mut buf)?;
    Ok(set)
}

/// Run manifest written beside each sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub sweeps: u64,
    pub burnin: u64,
    pub thin: u64,
    pub chains: u32,
    pub samples: usize,
    pub counters: Vec<CounterJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterJson {
    pub chain: u32,
    pub steps: u64,
    pub accepts: u64,
}

impl From<&ChainCounters> for CounterJson {
    fn from(c: &ChainCounters) -> Self {
        Self { chain: c.chain, steps: c.steps, accepts: c.accepts }
    }
}

/// Oracle output: `{"Z", "log_Z", "truncation_bound", "marginals"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub truncation_bound: f64,
    pub marginals: Vec<Marginal>,
}

impl OracleReport {
    /// Partition function and every one-point marginal of the table.
    pub fn from_table(table: &OracleTable) -> Result<Self> {
        let p = table.partition();
        let config = table.config();
        let mut marginals = Vec::new();
        if p.z > 0.0 {
            for i in 0..config.n() {
                for site in config.left()..=config.right() {
                    marginals.push(table.marginal(i, site)?);
                }
            }
        }
        Ok(Self { z: p.z, log_z: p.log_z, truncation_bound: p.truncation_bound, marginals })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::IncrementModel;
    use crate::sampler::run_chains;

    fn sample_config() -> EnsembleConfig {
        EnsembleConfig::builder(IncrementModel::lazy_srw(), 2, (0, 6))
            .tilt(1.0, 2.0, 8.0)
            .boundaries(vec![2, 0], vec![1, 0])
            .build()
            .unwrap()
    }

    #[test]
    fn config_json_round_trip() {
        let c = sample_config();
        let j = ConfigJson::from_config(&c);
        let text = serde_json::to_string(&j).unwrap();
        let back: ConfigJson = from_json_str(&text).unwrap();
        let c2 = back.build().unwrap();
        assert_eq!(config_hash(&c), config_hash(&c2));
        assert_eq!(c2.u(), c.u());
        assert_eq!(c2.floor(), c.floor());
    }

    #[test]
    fn named_model_and_unknown_field() {
        let text = r#"{"n": 1, "interval": [0, 4], "tilt_normalizer": 4, "a": 1, "b": 2,
            "u": [1], "v": [1], "floor": {"const": 0}, "model": "lazy-srw"}"#;
        let c: ConfigJson = from_json_str(text).unwrap();
        assert_eq!(c.build().unwrap().width(), 5);
        let bad = text.replace("\"a\"", "\"aa\"");
        let err = from_json_str::<ConfigJson>(&bad).unwrap_err().to_string();
        assert!(err.contains("aa"), "{err}");
        let nested = text.replace("{\"const\": 0}", "{\"cnst\": 0}");
        let err = from_json_str::<ConfigJson>(&nested).unwrap_err().to_string();
        assert!(err.contains("floor"), "{err}");
    }

    #[test]
    fn csv_round_trip_and_atomic_write() {
        let c = sample_config();
        let s = run_chains(&c, 3, 2, 5, 1, 2).unwrap();
        let text = samples_csv(&s);
        let back = parse_samples_csv(&text, 2, 0, 7, 1.0).unwrap();
        for k in 0..s.len() {
            assert_eq!(back.state(k), s.state(k));
            assert_eq!(back.label(k), s.label(k));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        write_atomic(&path, text.as_bytes()).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn oracle_report_json_keys() {
        let table = OracleTable::build(&sample_config(), Some(4)).unwrap();
        let r = OracleReport::from_table(&table).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["Z", "log_Z", "truncation_bound", "marginals"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r.marginals.len(), 14);
    }
}
