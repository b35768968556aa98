//! Model assembly and the full post-processing of one trajectory.

use kinklab_core::diagnostics::{
    compute_majorants, decompose_f, extract_modulation, fit_decay, modulation_residual, scattering_state,
    z_longtime_fit, z_longtime_fit_unchecked, DecayFit, Majorants, ModulationTrace, ZFit,
};
use kinklab_core::evolve::{evolve, Dynamics, Flavor, TrajectoryRecord};
use kinklab_core::fields::{FieldPair, NormSpec, OddGrid};
use kinklab_core::kink::{kink_closed_form, kink_quadrature, KinkProfile};
use kinklab_core::normalform::{normal_form, NormalForm};
use kinklab_core::potential::{build_perturbed, PotentialKind, PotentialModel};
use kinklab_core::spectral::{assemble, discrete_spectrum_odd, LinearizedOperator, SpectralData};
use kinklab_core::{Error, Result};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{InitialMode, PotentialChoice, PotentialSpec, RunConfig};

pub fn build_potential(spec: &PotentialSpec) -> Result<PotentialModel> {
    match spec.kind {
        PotentialChoice::Gl => Ok(PotentialModel::ginzburg_landau()),
        PotentialChoice::Perturbed => {
            build_perturbed(spec.delta.ok_or_else(|| Error::InvalidArgument("perturbed potential needs delta".into()))?)
        }
        PotentialChoice::Table => {
            let path = spec.table.as_ref().ok_or_else(|| Error::InvalidArgument("table potential needs a file".into()))?;
            PotentialModel::from_json(&std::fs::read_to_string(path)?)
        }
    }
}

/// Closed form for Ginzburg-Landau, quadrature otherwise.
pub fn build_kink(p: &PotentialModel, grid: OddGrid) -> Result<KinkProfile> {
    if p.kind == PotentialKind::GinzburgLandau {
        kink_closed_form(p, grid)
    } else {
        kink_quadrature(p, grid)
    }
}

/// Potential, kink, operator, spectrum and normal form on one grid.
#[derive(Debug, Clone)]
pub struct Model {
    pub potential: PotentialModel,
    pub kink: KinkProfile,
    pub op: LinearizedOperator,
    pub spectral: SpectralData,
    pub normal_form: NormalForm,
}

impl Model {
    pub fn build(potential: PotentialModel, grid: OddGrid) -> Result<Self> {
        let kink = build_kink(&potential, grid)?;
        let op = assemble(&potential, &kink)?;
        let spectral = discrete_spectrum_odd(&op, None)?;
        if !spectral.la1_holds() || !spectral.la2_holds() {
            return Err(Error::SpectralCondition(format!(
                "lambda1 = {}, edge resonance = {}",
                spectral.lambda1, spectral.edge.is_resonance
            )));
        }
        let normal_form = normal_form(&op, &spectral, &potential, &kink)?;
        Ok(Model { potential, kink, op, spectral, normal_form })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate_static()?;
        Self::build(build_potential(&cfg.potential)?, cfg.grid()?)
    }
}

/// Initial perturbation `X0` in the kink frame.
pub fn initial_state(cfg: &RunConfig, model: &Model) -> Result<FieldPair> {
    let g = model.op.grid;
    let init = &cfg.initial;
    match init.mode {
        InitialMode::EigenmodeKick => Ok(model.normal_form.projector.w(Complex64::new(init.amplitude, 0.0))),
        InitialMode::GaussianOdd => {
            let (a, w) = (init.amplitude, init.width);
            Ok(FieldPair::from_fn(g, |x| a * x * (-x * x / (w * w)).exp(), |_| 0.0))
        }
        InitialMode::File => {
            let path = init.file.as_ref().ok_or_else(|| Error::InvalidArgument("initial file missing".into()))?;
            let (st, _) = FieldPair::load_csv(path)?;
            if st.grid.n != g.n || (st.grid.l - g.l).abs() > 1e-12 * g.l {
                return Err(Error::InvalidArgument("initial file grid differs from the configured grid".into()));
            }
            Ok(st)
        }
    }
}

pub fn dynamics_for(flavor: Flavor, model: &Model) -> Dynamics {
    match flavor {
        Flavor::Nonlinear => Dynamics::nonlinear(&model.potential, &model.kink),
        Flavor::Linearized => Dynamics::linear(&model.op),
        Flavor::Free => Dynamics::free(model.op.grid, model.potential.m2),
    }
}

pub fn run_evolution(cfg: &RunConfig, model: &Model) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let x0 = initial_state(cfg, model)?;
    let ec = cfg.evolution_config()?;
    let mut rec = evolve(&dynamics_for(cfg.evolution.flavor, model), &x0, &ec)?;
    rec.provenance = format!("kinklab {}", env!("CARGO_PKG_VERSION"));
    Ok(rec)
}

/// One row of `fits.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FitEntry {
    pub quantity: String,
    pub exponent: Option<f64>,
    pub window: [f64; 2],
    pub r2: Option<f64>,
    pub target: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub enum Target {
    Range(f64, f64),
    AtMost(f64),
}

impl Target {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Target::Range(a, b) => v >= a && v <= b,
            Target::AtMost(b) => v <= b,
        }
    }

    fn label(&self) -> String {
        match *self {
            Target::Range(a, b) => format!("[{a}, {b}]"),
            Target::AtMost(b) => format!("<= {b}"),
        }
    }
}

fn entry(quantity: &str, fit: Result<DecayFit>, window: [f64; 2], target: Target) -> FitEntry {
    match fit {
        Ok(f) => FitEntry {
            quantity: quantity.into(),
            exponent: Some(f.exponent),
            window: f.window,
            r2: Some(f.r_squared),
            target: target.label(),
            pass: f.accepted() && target.holds(f.exponent),
            error: None,
        },
        Err(e) => FitEntry {
            quantity: quantity.into(),
            exponent: None,
            window,
            r2: None,
            target: target.label(),
            pass: false,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZLaw {
    pub mu_fit: f64,
    pub mu_target: f64,
    pub mu_pass: bool,
    pub k_fit: f64,
    pub k_target: f64,
    pub k_pass: bool,
    pub rho_fit: f64,
    pub rho_target: f64,
    pub decay_ratio: f64,
    /// Set when `|z|` did not decay enough for the checked fit.
    pub precondition_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub eps: f64,
    pub fit_window: [f64; 2],
    pub fits: Vec<FitEntry>,
    pub z_law: Option<ZLaw>,
    pub majorants: Majorants,
    pub modulation_residual_max: Option<f64>,
    pub modulation_residual_pass: bool,
    pub scattering_cauchy_defect: Option<f64>,
    pub energy_drift: f64,
    pub reconstruction_error: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub trace: ModulationTrace,
    #[serde(skip)]
    pub series: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Analysis {
    pub fn fit(&self, quantity: &str) -> Option<&FitEntry> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }
}

/// Relative tolerance on `mu_fit`.
pub const MU_TOL: f64 = 0.01;
/// Relative tolerance on `k_fit` against `2 Im K`.
pub const K_TOL: f64 = 0.25;
/// Bound on the relative modulation residual.
pub const RESIDUAL_TOL: f64 = 0.05;

/// All diagnostics of a kink-frame trajectory.
pub fn analyze(traj: &TrajectoryRecord, cfg: &RunConfig, model: &Model) -> Result<Analysis> {
    let proj = &model.normal_form.projector;
    let coeffs = &model.normal_form.coefficients;
    let d = &cfg.diagnostics;
    let f_norm = NormSpec::EMinusSigma { sigma: d.sigma };
    let h_norm = NormSpec::EMinusSigma { sigma: 2.5 + d.nu };
    let norms = [f_norm, h_norm];
    let trace = extract_modulation(traj, proj, &norms)?;
    let window = cfg.fit_window();
    let mut warnings = Vec::new();
    let t_last = *traj.times.last().unwrap_or(&0.0);
    if t_last + 1e-9 < traj.config.t_final {
        warnings.push(format!("truncated trajectory: last snapshot at t = {t_last}, expected {}", traj.config.t_final));
    }

    let z_abs: Vec<f64> = trace.z.iter().map(|z| z.norm()).collect();
    let f_vals = trace.f_trace(&f_norm).unwrap().to_vec();
    let dec = decompose_f(traj, &trace, proj, &model.normal_form.profiles, &model.op, &norms)?;
    let h_vals = dec.h_trace(&h_norm).unwrap().to_vec();
    let g_vals = dec.g_trace(&f_norm).unwrap().to_vec();

    let mut fits = vec![
        entry("z_abs", fit_decay(&trace.times, &z_abs, window), window, Target::Range(-0.6, -0.4)),
        entry(&format!("f_{}", f_norm.label()), fit_decay(&trace.times, &f_vals, window), window, Target::Range(-1.25, -0.8)),
        entry("f1_linf", fit_decay(&trace.times, &trace.f1_linf, window), window, Target::AtMost(-0.4)),
        entry(&format!("h_{}", h_norm.label()), fit_decay(&trace.times, &h_vals, window), window, Target::AtMost(-1.2)),
        entry(&format!("g_{}", f_norm.label()), fit_decay(&trace.times, &g_vals, window), window, Target::AtMost(-1.3)),
    ];

    let mut series = vec![
        ("z_abs".to_string(), trace.times.clone(), z_abs.clone()),
        (format!("f_{}", f_norm.label()), trace.times.clone(), f_vals.clone()),
        ("f1_linf".to_string(), trace.times.clone(), trace.f1_linf.clone()),
        (format!("h_{}", h_norm.label()), trace.times.clone(), h_vals.clone()),
        (format!("g_{}", f_norm.label()), trace.times.clone(), g_vals.clone()),
    ];

    let source = (traj.config.flavor == Flavor::Nonlinear).then_some((&model.potential, &model.kink, &model.op));
    let scat_window_start = window[0];
    let scattering = scattering_state(traj, Some(proj), source, model.potential.m2, scat_window_start);
    let mut cauchy = None;
    match scattering {
        Ok(rep) => {
            cauchy = Some(rep.cauchy_defect);
            if rep.truncation_warning {
                warnings.push(format!("scattering integral not Cauchy across T/1.5, T (defect {:.3e})", rep.cauchy_defect));
            }
            series.push(("remainder_E".to_string(), rep.times.clone(), rep.remainder.clone()));
            let w = [scat_window_start, t_last / 1.5];
            let fit = rep.fit.ok_or_else(|| Error::Window("remainder identically zero".into()));
            fits.push(entry("remainder_E", fit, w, Target::AtMost(-0.25)));
        }
        Err(e) => fits.push(entry("remainder_E", Err(e), [scat_window_start, t_last / 1.5], Target::AtMost(-0.25))),
    }

    let z_law = if trace.eps > 0.0 {
        let mu_target = model.spectral.lambda1.sqrt();
        let k_target = 2.0 * coeffs.k.im;
        let (fit, pre): (Result<ZFit>, Option<String>) = match z_longtime_fit(&trace.times, &trace.z, trace.eps, window) {
            Ok(f) => (Ok(f), None),
            Err(e) => (z_longtime_fit_unchecked(&trace.times, &trace.z, trace.eps, window), Some(e.to_string())),
        };
        match fit {
            Ok(f) => {
                if let Some(p) = &pre {
                    warnings.push(format!("z law: {p}"));
                }
                Some(ZLaw {
                    mu_fit: f.mu_fit,
                    mu_target,
                    mu_pass: ((f.mu_fit - mu_target) / mu_target).abs() <= MU_TOL,
                    k_fit: f.k_fit,
                    k_target,
                    k_pass: pre.is_none() && ((f.k_fit - k_target) / k_target).abs() <= K_TOL,
                    rho_fit: f.rho_fit,
                    rho_target: coeffs.rho,
                    decay_ratio: f.decay_ratio,
                    precondition_error: pre,
                })
            }
            Err(e) => {
                warnings.push(format!("z law: {e}"));
                None
            }
        }
    } else {
        None
    };

    let majorants = compute_majorants(&trace.times, &z_abs, &trace.f1_linf, &h_vals, trace.eps, d.majorant_ceiling);

    let nl = (traj.config.flavor == Flavor::Nonlinear).then_some((&model.potential, &model.kink));
    let (res_max, res_pass) = match modulation_residual(traj, &trace, proj, nl, d.residual_window) {
        Ok(r) => {
            if r.stride_warning {
                warnings.push("snapshot stride too coarse for the finite-difference zdot (mu * stride > 0.5)".into());
            }
            (Some(r.max_relative), r.max_relative < RESIDUAL_TOL)
        }
        Err(e) => {
            warnings.push(format!("modulation residual: {e}"));
            (None, false)
        }
    };

    let e0 = traj.energy_trace.first().copied().unwrap_or(0.0);
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    let energy_drift = traj.energy_trace.iter().fold(0.0f64, |m, e| m.max((e - e0).abs() / scale));


    Ok(Analysis {
        eps: trace.eps,
        fit_window: window,
        fits,
        z_law,
        majorants,
        modulation_residual_max: res_max,
        modulation_residual_pass: res_pass,
        scattering_cauchy_defect: cauchy,
        energy_drift,
        reconstruction_error: trace.reconstruction_error,
        warnings,
        trace,
        series,
    })
}
