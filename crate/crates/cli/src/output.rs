//! Result rows, run manifest and artifact files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::pipeline::{depth, PointOutcome};

pub const CSV_HEADER: &str = "run_id,solver,K,D,N_t,N_r,O,snr_db,P_dbm,L,I,seed,objective_mcr2,accuracy_mean,accuracy_stderr,wall_ms";

pub const MANIFEST_FORMAT: &str = "taskcomm.run-manifest";

/// One results line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub run_id: usize,
    pub solver: String,
    pub devices: usize,
    pub feature_dim: usize,
    /// Transmit antennas of device 0.
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub slots: usize,
    pub snr_db: f64,
    pub power_dbm: f64,
    pub depth: usize,
    pub inner: usize,
    pub seed: u64,
    pub objective: f64,
    pub accuracy_mean: f64,
    pub accuracy_stderr: f64,
    /// 0 unless `run.timing` is set.
    pub wall_ms: u128,
}

impl ResultRow {
    pub fn new(run_id: usize, cfg: &ExperimentConfig, point: &PointOutcome) -> Self {
        let system = cfg.system_config(point.slots, point.snr_db);
        let (depth, inner) = depth(cfg, point.kind);
        Self {
            run_id,
            solver: point.kind.name().into(),
            devices: system.num_devices(),
            feature_dim: system.feature_dim(),
            tx_antennas: system.devices[0].tx_antennas,
            rx_antennas: system.rx_antennas,
            slots: point.slots,
            snr_db: point.snr_db,
            power_dbm: cfg.power_dbm_at(point.snr_db),
            depth,
            inner,
            seed: cfg.run.seed,
            objective: point.stats.objective_mean,
            accuracy_mean: point.stats.mean,
            accuracy_stderr: point.stats.stderr,
            wall_ms: if cfg.run.timing { point.wall_ms } else { 0 },
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.solver,
            self.devices,
            self.feature_dim,
            self.tx_antennas,
            self.rx_antennas,
            self.slots,
            self.snr_db,
            self.power_dbm,
            self.depth,
            self.inner,
            self.seed,
            self.objective,
            self.accuracy_mean,
            self.accuracy_stderr,
            self.wall_ms
        )
    }
}

/// Header plus one LF-terminated line per row.
pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").expect("writing to a String cannot fail");
    }
    hex
}

/// Output directory that records the hash of everything written to it.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.hashes.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(path)
    }

    /// Records the hash of an input artifact read from elsewhere.
    pub fn record_input(&mut self, label: &str, contents: &str) {
        self.hashes.insert(label.to_string(), sha256_hex(contents.as_bytes()));
    }

    /// Writes `manifest.json` last so it covers every other file.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig, points: &[(usize, f64)], stages: Value) -> Result<PathBuf> {
        let manifest = manifest(command, cfg, points, stages, &self.hashes);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write("manifest.json", &text)
    }
}

/// Values the configuration implies at one operating point.
pub fn derived(cfg: &ExperimentConfig, slots: usize, snr_db: f64) -> Value {
    let system = cfg.system_config(slots, snr_db);
    let scenario = cfg.scenario(slots, snr_db);
    json!({
        "slots": slots,
        "snr_db": snr_db,
        "power_dbm": cfg.power_dbm_at(snr_db),
        "power_mw": system.devices[0].power,
        "pathloss_db": cfg.pathloss_db(),
        "noise_var_mw": scenario.noise_var,
        "rx_dim": system.rx_dim(),
        "feature_dim": system.feature_dim(),
        "alpha": system.alpha(),
        "gamma": system.gamma(scenario.sigma()),
        "evaluation_seed": crate::pipeline::stage_seed(cfg, crate::pipeline::stream::EVALUATION),
    })
}

pub fn manifest(command: &str, cfg: &ExperimentConfig, points: &[(usize, f64)], stages: Value, hashes: &BTreeMap<String, String>) -> Value {
    json!({
        "format": MANIFEST_FORMAT,
        "version": taskcomm::artifact::FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "derived": points.iter().map(|&(o, s)| derived(cfg, o, s)).collect::<Vec<_>>(),
        "stages": stages,
        "artifacts": hashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn csv_has_the_fixed_columns() {
        assert_eq!(CSV_HEADER.split(',').count(), 16);
        let row = ResultRow {
            run_id: 0,
            solver: "bca".into(),
            devices: 2,
            feature_dim: 4,
            tx_antennas: 2,
            rx_antennas: 4,
            slots: 1,
            snr_db: -6.0,
            power_dbm: 16.44,
            depth: 50,
            inner: 0,
            seed: 7,
            objective: 0.25,
            accuracy_mean: 0.5,
            accuracy_stderr: 0.01,
            wall_ms: 0,
        };
        let text = render_csv(&[row]);
        assert_eq!(text.lines().nth(1).unwrap(), "0,bca,2,4,2,4,1,-6,16.44,50,0,7,0.25,0.5,0.01,0");
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn manifest_lists_every_config_section() {
        let cfg = ExperimentConfig::default();
        let m = manifest("run", &cfg, &[(1, 6.0)], json!({}), &BTreeMap::new());
        for key in ["run", "system", "channel", "features", "solver", "unfolded", "finetune", "evaluation", "sweep"] {
            assert!(m["config"].get(key).is_some(), "{key}");
        }
        assert!((m["derived"][0]["pathloss_db"].as_f64().unwrap() - 102.44).abs() < 0.01);
    }
}
