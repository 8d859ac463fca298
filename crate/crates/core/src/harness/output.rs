//! Result bundles: files on disk plus a hashed manifest, and the
//! aggregation self-audit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::statistics::Statistics;

use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";
const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
const AUDIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything except `created_unix` is a function of config and seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub created_unix: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for a single
/// value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mean = values.mean();
    let sd = if values.len() < 2 { 0.0 } else { values.std_dev() };
    (mean, sd)
}

/// Output directory being filled; only the collector thread writes to it.
#[derive(Debug)]
pub struct ResultBundle {
    dir: PathBuf,
    files: BTreeMap<String, ManifestEntry>,
}

impl ResultBundle {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        self.files.insert(
            name.to_string(),
            ManifestEntry {
                path: name.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Audit(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// CSV with a header decided at run time (per-layer columns).
    pub fn write_table(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Audit(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes the manifest; `config_toml` is the canonical effective config.
    pub fn finish(mut self, experiment: &str, config_toml: &str, seeds: &[u64]) -> Result<Manifest, HarnessError> {
        self.files.remove(MANIFEST_FILE);
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let manifest = Manifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            experiment: experiment.to_string(),
            config_hash: sha256_hex(config_toml.as_bytes()),
            seeds: seeds.to_vec(),
            created_unix,
            files: self.files.into_values().collect(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Checks that every listed file exists with its recorded hash and that
/// every file in `dir` is listed.
pub fn verify_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    for entry in &manifest.files {
        let p = dir.join(&entry.path);
        let bytes = fs::read(&p).map_err(|e| HarnessError::io(&p, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(HarnessError::Audit(format!(
                "{} does not match its manifest hash",
                entry.path
            )));
        }
    }
    for item in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let item = item.map_err(|e| HarnessError::io(dir, e))?;
        let name = item.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_FILE && !manifest.files.iter().any(|f| f.path == name) {
            return Err(HarnessError::Audit(format!("{name} is not listed in the manifest")));
        }
    }
    Ok(manifest)
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn read_table(path: &Path) -> Result<Table, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn column(table: &Table, name: &str) -> Result<usize, HarnessError> {
    table
        .0
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| HarnessError::Audit(format!("missing column {name}")))
}

fn parse_f64(s: &str) -> Result<f64, HarnessError> {
    s.parse()
        .map_err(|_| HarnessError::Audit(format!("not a number: {s:?}")))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= AUDIT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Groups `value` of the per-seed table by `keys` and compares against the
/// `mean`/`sd` columns of the aggregate table.
fn audit_groups(
    per_seed: &Table,
    aggregate: &Table,
    keys: &[&str],
    value: &str,
    mean: &str,
    sd: &str,
) -> Result<usize, HarnessError> {
    let key_idx: Vec<usize> = keys.iter().map(|k| column(per_seed, k)).collect::<Result<_, _>>()?;
    let v = column(per_seed, value)?;
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for row in &per_seed.1 {
        groups
            .entry(key_idx.iter().map(|&i| row[i].clone()).collect())
            .or_default()
            .push(parse_f64(&row[v])?);
    }
    let agg_idx: Vec<usize> = keys.iter().map(|k| column(aggregate, k)).collect::<Result<_, _>>()?;
    let (m, s) = (column(aggregate, mean)?, column(aggregate, sd)?);
    for row in &aggregate.1 {
        let key: Vec<String> = agg_idx.iter().map(|&i| row[i].clone()).collect();
        let vals = groups
            .get(&key)
            .ok_or_else(|| HarnessError::Audit(format!("aggregate key {key:?} has no per-seed rows")))?;
        let (em, es) = mean_sd(vals);
        if !close(em, parse_f64(&row[m])?) || !close(es, parse_f64(&row[s])?) {
            return Err(HarnessError::Audit(format!("{value} mean/sd mismatch at {key:?}")));
        }
    }
    if groups.len() != aggregate.1.len() {
        return Err(HarnessError::Audit(format!(
            "{value}: per-seed groups and aggregate rows differ in number"
        )));
    }
    Ok(aggregate.1.len())
}

/// Recomputes every mean/sd column in `dir` from its per-seed source and
/// returns the number of rows checked.
pub fn audit_bundle(dir: &Path) -> Result<usize, HarnessError> {
    let mut checked = 0;
    let exists = |name: &str| dir.join(name).exists();
    if exists("supervised.csv") {
        let runs = read_table(&dir.join("supervised_runs.csv"))?;
        let agg = read_table(&dir.join("supervised.csv"))?;
        checked += audit_groups(&runs, &agg, &["n", "layer"], "err_bar", "err_bar_mean", "err_bar_sd")?;
        checked += audit_groups(&runs, &agg, &["n", "layer"], "err_hat", "err_hat_mean", "err_hat_sd")?;
    }
    if exists("lift_table.csv") {
        let runs = read_table(&dir.join("lift_runs.csv"))?;
        let agg = read_table(&dir.join("lift_table.csv"))?;
        checked += audit_groups(&runs, &agg, &["policy", "layer"], "lift", "lift_mean", "lift_sd")?;
    }
    if exists("prediction_error.csv") {
        let runs = read_table(&dir.join("prediction_runs.csv"))?;
        let agg = read_table(&dir.join("prediction_error.csv"))?;
        checked += audit_groups(&runs, &agg, &["policy", "t"], "cum_sq_error", "mean", "sd")?;
    }
    checked += audit_regret_curves(dir)?;
    Ok(checked)
}

/// `regret_<policy>.csv` against the `cum_regret` field of the policy's
/// NDJSON run streams.
fn audit_regret_curves(dir: &Path) -> Result<usize, HarnessError> {
    let mut streams: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut curves = Vec::new();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in names {
        if let Some(stem) = name.strip_prefix("run_").and_then(|s| s.strip_suffix(".ndjson")) {
            let (policy, _seed) = stem
                .rsplit_once('_')
                .ok_or_else(|| HarnessError::Audit(format!("bad run file name {name}")))?;
            let path = dir.join(&name);
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let cum = text
                .lines()
                .map(|l| {
                    let row: crate::bandit::NdjsonRow = serde_json::from_str(l)?;
                    row.cum_regret
                        .ok_or_else(|| HarnessError::Audit(format!("{name}: missing cum_regret")))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            streams.entry(policy.to_string()).or_default().push(cum);
        } else if let Some(policy) = name.strip_prefix("regret_").and_then(|s| s.strip_suffix(".csv")) {
            curves.push(policy.to_string());
        }
    }
    let mut checked = 0;
    for policy in curves {
        let runs = streams
            .get(&policy)
            .ok_or_else(|| HarnessError::Audit(format!("regret_{policy}.csv has no run streams")))?;
        let agg = read_table(&dir.join(format!("regret_{policy}.csv")))?;
        let (t, m, s) = (column(&agg, "t")?, column(&agg, "mean")?, column(&agg, "sd")?);
        for row in &agg.1 {
            let step: usize = row[t]
                .parse()
                .map_err(|_| HarnessError::Audit(format!("bad step {:?}", row[t])))?;
            let vals: Vec<f64> = runs
                .iter()
                .map(|r| r.get(step.wrapping_sub(1)).copied())
                .collect::<Option<_>>()
                .ok_or_else(|| HarnessError::Audit(format!("{policy}: step {step} beyond run length")))?;
            let (em, es) = mean_sd(&vals);
            if !close(em, parse_f64(&row[m])?) || !close(es, parse_f64(&row[s])?) {
                return Err(HarnessError::Audit(format!(
                    "{policy}: regret mean/sd mismatch at t = {step}"
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_uses_sample_denominator() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_detects_tampering_and_strays() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ResultBundle::create(dir.path()).unwrap();
        b.write_bytes("a.txt", b"hello").unwrap();
        b.finish("bounds", "x = 1", &[0]).unwrap();
        verify_manifest(dir.path()).unwrap();
        fs::write(dir.path().join("stray.txt"), "x").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
        fs::remove_file(dir.path().join("stray.txt")).unwrap();
        fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }

    #[test]
    fn audit_catches_a_wrong_mean() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ResultBundle::create(dir.path()).unwrap();
        let runs = "seed,policy,layer,lift\n0,p,1,1.0\n1,p,1,3.0\n";
        b.write_bytes("lift_runs.csv", runs.as_bytes()).unwrap();
        b.write_bytes(
            "lift_table.csv",
            b"policy,layer,lift_mean,lift_sd,seeds\np,1,2.0,1.4142135623730951,2\n",
        )
        .unwrap();
        assert_eq!(audit_bundle(dir.path()).unwrap(), 1);
        b.write_bytes(
            "lift_table.csv",
            b"policy,layer,lift_mean,lift_sd,seeds\np,1,2.5,1.4142135623730951,2\n",
        )
        .unwrap();
        assert!(matches!(audit_bundle(dir.path()), Err(HarnessError::Audit(_))));
    }
}
