//! Run directories: `manifest.json`, `snapshots/*.csv`, `traces.csv`, and the fit outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kinklab_core::evolve::TrajectoryRecord;
use kinklab_core::fields::FieldPair;
use kinklab_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::pipeline::{dynamics_for, Analysis, Model};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// The full configuration, sufficient to re-run.
    pub config: RunConfig,
    pub config_toml: String,
    pub config_sha256: String,
    pub potential: serde_json::Value,
    pub eps: f64,
    pub z0: [f64; 2],
    pub lambda1: f64,
    pub mu: f64,
    pub dt: f64,
    pub snapshot_count: usize,
    pub snapshot_files: Vec<String>,
    pub traces_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// `traces.csv`: time, energy, one column per recorded norm, and `z`.
pub fn traces_csv(traj: &TrajectoryRecord, model: &Model) -> String {
    let proj = &model.normal_form.projector;
    let mut out = String::from("time,energy");
    for t in &traj.norm_traces {
        let _ = write!(out, ",{}", t.spec.label());
    }
    out.push_str(",z_re,z_im\n");
    for (k, t) in traj.times.iter().enumerate() {
        let _ = write!(out, "{t:e},{:e}", traj.energy_trace[k]);
        for tr in &traj.norm_traces {
            let _ = write!(out, ",{:e}", tr.values[k]);
        }
        let z = proj.z(&traj.snapshots[k]);
        let _ = writeln!(out, ",{:e},{:e}", z.re, z.im);
    }
    out
}

fn snapshot_name(k: usize) -> String {
    format!("snap_{k:06}.csv")
}

pub fn write_run(dir: &Path, cfg: &RunConfig, model: &Model, traj: &TrajectoryRecord) -> Result<Manifest> {
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    let mut files = Vec::with_capacity(traj.snapshots.len());
    for (k, (st, t)) in traj.snapshots.iter().zip(&traj.times).enumerate() {
        let name = snapshot_name(k);
        st.save_csv(&snap_dir.join(&name), &format!("{t:e}"))?;
        files.push(name);
    }
    let traces = traces_csv(traj, model);
    fs::write(dir.join("traces.csv"), &traces)?;
    let config_toml = cfg.to_toml();
    let z0 = model.normal_form.projector.z(&traj.snapshots[0]);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_sha256: sha256_hex(config_toml.as_bytes()),
        config_toml,
        potential: serde_json::to_value(&model.potential)?,
        eps: z0.norm_sqr(),
        z0: [z0.re, z0.im],
        lambda1: model.spectral.lambda1,
        mu: model.normal_form.projector.mu,
        dt: traj.config.dt,
        snapshot_count: files.len(),
        snapshot_files: files,
        traces_sha256: sha256_hex(traces.as_bytes()),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A persisted run, reloaded. Missing snapshot files shorten the trajectory and are reported.
pub struct LoadedRun {
    pub manifest: Manifest,
    pub trajectory: TrajectoryRecord,
    pub warnings: Vec<String>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
}

pub fn load_run(dir: &Path, manifest: Manifest, model: &Model) -> Result<LoadedRun> {
    let cfg = &manifest.config;
    let mut snapshots = Vec::new();
    let mut times = Vec::new();
    let mut warnings = Vec::new();
    for name in &manifest.snapshot_files {
        let path = dir.join("snapshots").join(name);
        if !path.exists() {
            break;
        }
        let (st, label) = FieldPair::load_csv(&path)?;
        let t: f64 = label.parse().map_err(|_| Error::Parse(format!("bad time label '{label}' in {name}")))?;
        snapshots.push(st);
        times.push(t);
    }
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no snapshots", dir.display())));
    }
    if snapshots.len() < manifest.snapshot_count {
        warnings.push(format!(
            "truncated run directory: {} of {} snapshots present",
            snapshots.len(),
            manifest.snapshot_count
        ));
    }
    let config = cfg.evolution_config()?;
    let dynamics = dynamics_for(cfg.evolution.flavor, model);
    let energy_trace = snapshots.iter().map(|s| dynamics.energy(s)).collect();
    let trajectory = TrajectoryRecord {
        grid: snapshots[0].grid,
        config,
        times,
        snapshots,
        energy_trace,
        norm_traces: Vec::new(),
        provenance: format!("loaded from {}", dir.display()),
    };
    Ok(LoadedRun { manifest, trajectory, warnings })
}

/// Writes `fits.json` and `plotdata/<series>.csv` (two columns `t,value`).
pub fn write_fits(dir: &Path, analysis: &Analysis) -> Result<PathBuf> {
    let plot = dir.join("plotdata");
    fs::create_dir_all(&plot)?;
    for (name, t, v) in &analysis.series {
        let mut s = String::from("t,value\n");
        for (a, b) in t.iter().zip(v) {
            let _ = writeln!(s, "{a:e},{b:e}");
        }
        fs::write(plot.join(format!("{name}.csv")), s)?;
    }
    let path = dir.join("fits.json");
    fs::write(&path, serde_json::to_string_pretty(analysis)?)?;
    Ok(path)
}
