//! Run configuration, read from TOML and overridden from the command line.

use std::path::{Path, PathBuf};

use kinklab_core::evolve::{EvolutionConfig, Flavor};
use kinklab_core::fields::{make_grid, NormSpec, OddGrid};
use kinklab_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PotentialChoice {
    Gl,
    Perturbed,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialChoice,
    pub delta: Option<f64>,
    /// Potential JSON file for `kind = "table"`, relative to the config file.
    pub table: Option<PathBuf>,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec { kind: PotentialChoice::Gl, delta: None, table: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub l: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { l: 80.0, n: 4096 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSpec {
    /// `dt = dt_factor * dx`.
    pub dt_factor: f64,
    pub t_final: f64,
    /// Steps between recorded snapshots.
    pub stride: usize,
    pub flavor: Flavor,
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        EvolutionSpec { dt_factor: 0.4, t_final: 50.0, stride: 25, flavor: Flavor::Nonlinear }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// `X0 = w(amplitude)`, so `|z(0)| = amplitude`.
    EigenmodeKick,
    /// `psi = amplitude * x exp(-x²/width²)`, `pi = 0`.
    GaussianOdd,
    /// Field CSV as written in `snapshots/`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub mode: InitialMode,
    /// `eps^{1/2}` for the eigenmode kick.
    pub amplitude: f64,
    pub width: f64,
    pub file: Option<PathBuf>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec { mode: InitialMode::EigenmodeKick, amplitude: 0.1, width: 2.0, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Weight exponent of the `E_{-sigma}` norm of `f`.
    pub sigma: f64,
    /// `h` is measured in `E_{-(5/2 + nu)}`.
    pub nu: f64,
    pub diag_radius: f64,
    /// Defaults to `[10, min(T, L - diag_radius)]`.
    pub fit_window: Option<[f64; 2]>,
    pub majorant_ceiling: f64,
    /// Window for the modulation-equation residual.
    pub residual_window: [f64; 2],
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            sigma: 3.0,
            nu: 0.1,
            diag_radius: 20.0,
            fit_window: None,
            majorant_ceiling: 100.0,
            residual_window: [0.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub grid: GridSpec,
    pub evolution: EvolutionSpec,
    pub initial: InitialSpec,
    pub diagnostics: DiagnosticsSpec,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a TOML file; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.potential.table);
        fix(&mut cfg.initial.file);
        fix(&mut cfg.output);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is TOML-serializable")
    }

    pub fn grid(&self) -> Result<OddGrid> {
        make_grid(self.grid.l, self.grid.n)
    }

    /// `eps = |z(0)|²` for the eigenmode kick; otherwise measured after projection.
    pub fn eps_nominal(&self) -> Option<f64> {
        (self.initial.mode == InitialMode::EigenmodeKick).then(|| self.initial.amplitude.powi(2))
    }

    /// Norms recorded during the run and used by the fits.
    pub fn norms(&self) -> Vec<NormSpec> {
        vec![
            NormSpec::EMinusSigma { sigma: self.diagnostics.sigma },
            NormSpec::EMinusSigma { sigma: 2.5 + self.diagnostics.nu },
            NormSpec::LinfFirstComponent,
        ]
    }

    pub fn evolution_config(&self) -> Result<EvolutionConfig> {
        let g = self.grid()?;
        let mut c = EvolutionConfig::new(
            self.evolution.dt_factor * g.dx,
            self.evolution.t_final,
            self.evolution.stride,
            self.evolution.flavor,
        );
        c.diag_radius = self.diagnostics.diag_radius;
        c.norms = self.norms();
        c.fits_requested = true;
        Ok(c)
    }

    pub fn fit_window(&self) -> [f64; 2] {
        self.diagnostics.fit_window.unwrap_or([
            10.0,
            self.evolution.t_final.min(self.grid.l - self.diagnostics.diag_radius),
        ])
    }

    /// Static checks of the potential and grid parameters.
    pub fn validate_static(&self) -> Result<()> {
        self.grid()?;
        match self.potential.kind {
            PotentialChoice::Perturbed => {
                let d = self
                    .potential
                    .delta
                    .ok_or_else(|| Error::InvalidArgument("perturbed potential needs delta".into()))?;
                if !(d > 0.0 && d < 0.5) {
                    return Err(Error::InvalidArgument(format!("delta must lie in (0, 0.5), got {d}")));
                }
            }
            PotentialChoice::Table if self.potential.table.is_none() => {
                return Err(Error::InvalidArgument("table potential needs a table file".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// All cross-module preconditions of an evolve + fit run.
    pub fn validate(&self) -> Result<()> {
        self.validate_static()?;
        let g = self.grid()?;
        if !(self.evolution.dt_factor > 0.0 && self.evolution.dt_factor <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "dt_factor must lie in (0, 0.5] (CFL), got {}",
                self.evolution.dt_factor
            )));
        }
        self.evolution_config()?.validate(&g)?;
        let d = &self.diagnostics;
        if !(d.sigma > 2.5) {
            return Err(Error::InvalidArgument(format!("sigma must exceed 5/2, got {}", d.sigma)));
        }
        if !(d.nu > 0.0) {
            return Err(Error::InvalidArgument(format!("nu must be positive, got {}", d.nu)));
        }
        if !(self.initial.amplitude.is_finite()) || self.initial.amplitude < 0.0 {
            return Err(Error::InvalidArgument("initial amplitude must be finite and >= 0".into()));
        }
        if self.initial.mode == InitialMode::File && self.initial.file.is_none() {
            return Err(Error::InvalidArgument("initial mode 'file' needs a file".into()));
        }
        let w = self.fit_window();
        if !(w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!("empty fit window {w:?}")));
        }
        Ok(())
    }
}
