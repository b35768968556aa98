//! Time evolution on the odd subspace: the nonlinear flow in the kink frame,
//! the linearized flow, and the free Klein-Gordon group.

use std::sync::Arc;

use rustdct::{Dst1, DctPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{energy_density, norm, FieldPair, NormSpec, OddGrid};
use crate::kink::KinkProfile;
use crate::linalg::linear_fit;
use crate::potential::PotentialModel;
use crate::spectral::LinearizedOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Nonlinear,
    Linearized,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_stride: usize,
    pub flavor: Flavor,
    pub diag_radius: f64,
    /// Norms recorded at every snapshot.
    pub norms: Vec<NormSpec>,
    /// Enforce `T < L - diag_radius`.
    pub fits_requested: bool,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_final: f64, snapshot_stride: usize, flavor: Flavor) -> Self {
        EvolutionConfig { dt, t_final, snapshot_stride, flavor, diag_radius: 0.0, norms: Vec::new(), fits_requested: false }
    }

    pub fn validate(&self, grid: &OddGrid) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) || self.snapshot_stride == 0 {
            return Err(Error::InvalidArgument("dt > 0, T >= 0 and stride >= 1 are required".into()));
        }
        if self.dt > 0.5 * grid.dx * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("CFL violated: dt = {} > 0.5 dx = {}", self.dt, 0.5 * grid.dx)));
        }
        if self.fits_requested && self.t_final >= grid.l - self.diag_radius {
            return Err(Error::InvalidArgument(format!(
                "T = {} must be below L - diag_radius = {}",
                self.t_final,
                grid.l - self.diag_radius
            )));
        }
        for s in &self.norms {
            s.validate()?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormTrace {
    pub spec: NormSpec,
    pub values: Vec<f64>,
}

/// Recorded trajectory in the perturbation frame `(Psi, Pi)`.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub grid: OddGrid,
    pub config: EvolutionConfig,
    pub times: Vec<f64>,
    pub snapshots: Vec<FieldPair>,
    /// Conserved discrete Hamiltonian of the flow.
    pub energy_trace: Vec<f64>,
    pub norm_traces: Vec<NormTrace>,
    pub provenance: String,
}

impl TrajectoryRecord {
    pub fn trace(&self, spec: &NormSpec) -> Option<&[f64]> {
        self.norm_traces.iter().find(|t| &t.spec == spec).map(|t| t.values.as_slice())
    }

    pub fn final_state(&self) -> &FieldPair {
        self.snapshots.last().expect("a trajectory holds at least the initial snapshot")
    }
}

/// Right-hand side `Pi_t = a(Psi)` of the second-order system.
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// `Psi'' + F(s + Psi) - F(s)`.
    Nonlinear { potential: PotentialModel, s: Vec<f64>, fs: Vec<f64> },
    /// `-(H Psi)`.
    Linear { op: LinearizedOperator },
}

impl Dynamics {
    pub fn nonlinear(potential: &PotentialModel, kink: &KinkProfile) -> Self {
        let fs = kink.s.iter().map(|&s| potential.force(s)).collect();
        Dynamics::Nonlinear { potential: potential.clone(), s: kink.s.clone(), fs }
    }

    pub fn linear(op: &LinearizedOperator) -> Self {
        Dynamics::Linear { op: op.clone() }
    }

    pub fn free(grid: OddGrid, m2: f64) -> Self {
        Dynamics::Linear { op: LinearizedOperator::free(grid, m2) }
    }

    /// Acceleration written into `out`.
    pub fn accel(&self, grid: &OddGrid, psi: &[f64], out: &mut [f64]) {
        let n = grid.n;
        let inv = 1.0 / (grid.dx * grid.dx);
        match self {
            Dynamics::Nonlinear { potential, s, fs } => {
                for i in 0..n {
                    let l = if i == 0 { 0.0 } else { psi[i - 1] };
                    let r = if i + 1 == n { 0.0 } else { psi[i + 1] };
                    out[i] = (l - 2.0 * psi[i] + r) * inv + potential.force(s[i] + psi[i]) - fs[i];
                }
            }
            Dynamics::Linear { op } => {
                for i in 0..n {
                    let l = if i == 0 { 0.0 } else { psi[i - 1] };
                    let r = if i + 1 == n { 0.0 } else { psi[i + 1] };
                    out[i] = -(op.diag[i] * psi[i] + op.off * (l + r));
                }
            }
        }
    }

    /// Conserved discrete energy of the perturbation flow (uniform weights, full line).
    pub fn energy(&self, state: &FieldPair) -> f64 {
        let g = &state.grid;
        let n = g.n;
        let mut kin = 0.0;
        let mut grad = 0.0;
        let mut pot = 0.0;
        let mut prev = 0.0;
        for i in 0..n {
            kin += 0.5 * state.pi[i] * state.pi[i];
            let d = state.psi[i] - prev;
            grad += 0.5 * d * d / (g.dx * g.dx);
            prev = state.psi[i];
        }
        grad += 0.5 * prev * prev / (g.dx * g.dx);
        match self {
            Dynamics::Nonlinear { potential, s, fs } => {
                for i in 0..n {
                    let p = state.psi[i];
                    pot += potential.u(s[i] + p) - potential.u(s[i]) + fs[i] * p;
                }
            }
            Dynamics::Linear { op } => {
                for i in 0..n {
                    pot += 0.5 * (op.m2 + op.v[i]) * state.psi[i] * state.psi[i];
                }
            }
        }
        2.0 * g.dx * (kin + grad + pot)
    }
}

/// Velocity-Verlet stepper with preallocated work space.
pub struct Verlet<'a> {
    dynamics: &'a Dynamics,
    grid: OddGrid,
    acc: Vec<f64>,
}

impl<'a> Verlet<'a> {
    pub fn new(dynamics: &'a Dynamics, grid: OddGrid) -> Self {
        Verlet { dynamics, grid, acc: vec![0.0; grid.n] }
    }

    pub fn prime(&mut self, state: &FieldPair) {
        self.dynamics.accel(&self.grid, &state.psi, &mut self.acc);
    }

    /// One kick-drift-kick step; `prime` must have been called for `state`.
    pub fn step(&mut self, state: &mut FieldPair, dt: f64) {
        let h = 0.5 * dt;
        for i in 0..self.grid.n {
            state.pi[i] += h * self.acc[i];
            state.psi[i] += dt * state.pi[i];
        }
        self.dynamics.accel(&self.grid, &state.psi, &mut self.acc);
        for i in 0..self.grid.n {
            state.pi[i] += h * self.acc[i];
        }
    }
}

/// One Verlet step of the nonlinear flow in the kink frame.
pub fn step_nonlinear(state: &FieldPair, potential: &PotentialModel, kink: &KinkProfile, dt: f64) -> Result<FieldPair> {
    let dynamics = Dynamics::nonlinear(potential, kink);
    let mut st = state.clone();
    let mut v = Verlet::new(&dynamics, state.grid);
    v.prime(&st);
    v.step(&mut st, dt);
    if !st.is_finite() {
        return Err(Error::Blowup { time: dt, reason: "non-finite state after one step".into() });
    }
    Ok(st)
}

fn record(
    dynamics: &Dynamics,
    config: &EvolutionConfig,
    state: &FieldPair,
    t: f64,
    rec: &mut TrajectoryRecord,
) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::Blowup { time: t, reason: "non-finite field values".into() });
    }
    rec.times.push(t);
    rec.energy_trace.push(dynamics.energy(state));
    for (k, spec) in config.norms.iter().enumerate() {
        rec.norm_traces[k].values.push(norm(state, spec)?);
    }
    rec.snapshots.push(state.clone());
    Ok(())
}

/// Integrate with Verlet and record snapshots every `snapshot_stride` steps.
pub fn evolve(dynamics: &Dynamics, initial: &FieldPair, config: &EvolutionConfig) -> Result<TrajectoryRecord> {
    let grid = initial.grid;
    config.validate(&grid)?;
    let mut rec = TrajectoryRecord {
        grid,
        config: config.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
        energy_trace: Vec::new(),
        norm_traces: config.norms.iter().map(|s| NormTrace { spec: *s, values: Vec::new() }).collect(),
        provenance: String::new(),
    };
    let mut state = initial.clone();
    record(dynamics, config, &state, 0.0, &mut rec)?;
    let mut v = Verlet::new(dynamics, grid);
    v.prime(&state);
    let steps = config.steps();
    for k in 1..=steps {
        v.step(&mut state, config.dt);
        if k % config.snapshot_stride == 0 || k == steps {
            record(dynamics, config, &state, k as f64 * config.dt, &mut rec)?;
        }
    }
    Ok(rec)
}

pub fn evolve_nonlinear(
    initial: &FieldPair,
    potential: &PotentialModel,
    kink: &KinkProfile,
    config: &EvolutionConfig,
) -> Result<TrajectoryRecord> {
    evolve(&Dynamics::nonlinear(potential, kink), initial, config)
}

pub fn evolve_linearized(initial: &FieldPair, op: &LinearizedOperator, config: &EvolutionConfig) -> Result<TrajectoryRecord> {
    evolve(&Dynamics::linear(op), initial, config)
}

/// Free Klein-Gordon group on the grid, diagonalized by the DST-I.
///
/// The symbol is `omega_k² = m² + (4/dx²) sin²(pi k / (2(N+1)))`, the
/// spectrum of the three-point operator, so the group is exact for the
/// discrete free equation.
#[derive(Clone)]
pub struct FreeGroup {
    pub grid: OddGrid,
    pub m2: f64,
    omega: Vec<f64>,
    dst: Arc<dyn Dst1<f64>>,
}

impl std::fmt::Debug for FreeGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FreeGroup").field("grid", &self.grid).field("m2", &self.m2).finish()
    }
}

impl FreeGroup {
    pub fn new(grid: OddGrid, m2: f64) -> Self {
        let n = grid.n;
        let omega = (1..=n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * (n + 1) as f64)).sin();
                (m2 + 4.0 * s * s / (grid.dx * grid.dx)).sqrt()
            })
            .collect();
        let dst = DctPlanner::new().plan_dst1(n);
        FreeGroup { grid, m2, omega, dst }
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    fn forward(&self, v: &[f64]) -> Vec<f64> {
        let mut b = v.to_vec();
        self.dst.process_dst1(&mut b);
        b
    }

    fn inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut b = v.to_vec();
        self.dst.process_dst1(&mut b);
        let s = 2.0 / (self.grid.n + 1) as f64;
        b.iter_mut().for_each(|x| *x *= s);
        b
    }

    /// Apply the per-mode 2x2 map `(a, b, c, d)` to the transformed state.
    fn apply_modal(&self, state: &FieldPair, m: impl Fn(usize) -> [f64; 4]) -> FieldPair {
        let p = self.forward(&state.psi);
        let q = self.forward(&state.pi);
        let mut np = vec![0.0; p.len()];
        let mut nq = vec![0.0; q.len()];
        for k in 0..p.len() {
            let [a, b, c, d] = m(k);
            np[k] = a * p[k] + b * q[k];
            nq[k] = c * p[k] + d * q[k];
        }
        FieldPair { grid: self.grid, psi: self.inverse(&np), pi: self.inverse(&nq) }
    }

    /// `W_0(t) (psi, pi)`.
    pub fn apply(&self, state: &FieldPair, t: f64) -> FieldPair {
        self.apply_modal(state, |k| {
            let w = self.omega[k];
            let (s, c) = (w * t).sin_cos();
            [c, s / w, -w * s, c]
        })
    }

    /// `n` velocity-Verlet steps of size `dt` for the free equation, evaluated modally.
    pub fn apply_leapfrog(&self, state: &FieldPair, dt: f64, n: usize) -> FieldPair {
        self.apply_modal(state, |k| {
            let w2 = self.omega[k] * self.omega[k];
            // Single step matrix [[1 - w²dt²/2, dt], [-w² dt (1 - w²dt²/4), 1 - w²dt²/2]].
            let one = [1.0 - 0.5 * w2 * dt * dt, dt, -w2 * dt * (1.0 - 0.25 * w2 * dt * dt), 1.0 - 0.5 * w2 * dt * dt];
            mat_pow(one, n)
        })
    }

    /// Quadratic energy `int pi² + psi (-D² + m²) psi` over the full line, halved.
    pub fn energy(&self, state: &FieldPair) -> f64 {
        Dynamics::free(self.grid, self.m2).energy(state)
    }
}

fn mat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]]
}

fn mat_pow(mut m: [f64; 4], mut n: usize) -> [f64; 4] {
    let mut r = [1.0, 0.0, 0.0, 1.0];
    while n > 0 {
        if n & 1 == 1 {
            r = mat_mul(r, m);
        }
        m = mat_mul(m, m);
        n >>= 1;
    }
    r
}

/// Exact free evolution recorded at the same times a Verlet run would use.
pub fn evolve_free(initial: &FieldPair, m2: f64, config: &EvolutionConfig) -> Result<TrajectoryRecord> {
    let grid = initial.grid;
    config.validate(&grid)?;
    let group = FreeGroup::new(grid, m2);
    let dynamics = Dynamics::free(grid, m2);
    let mut rec = TrajectoryRecord {
        grid,
        config: config.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
        energy_trace: Vec::new(),
        norm_traces: config.norms.iter().map(|s| NormTrace { spec: *s, values: Vec::new() }).collect(),
        provenance: String::new(),
    };
    let steps = config.steps();
    let mut k = 0;
    loop {
        let t = k as f64 * config.dt;
        let st = if k == 0 { initial.clone() } else { group.apply(initial, t) };
        record(&dynamics, config, &st, t, &mut rec)?;
        if k == steps {
            break;
        }
        k = (k + config.snapshot_stride).min(steps);
    }
    Ok(rec)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalEnergyEntry {
    pub time: f64,
    pub inside: f64,
    pub cone: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalEnergyReport {
    pub window: [f64; 2],
    pub entries: Vec<LocalEnergyEntry>,
    /// Indices of snapshots violating the inequality.
    pub violations: Vec<usize>,
    /// Snapshots skipped because the cone left the domain.
    pub skipped: usize,
}

impl LocalEnergyReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && !self.entries.is_empty()
    }

    /// Smallest `(cone - inside) / cone` over checked snapshots.
    pub fn min_margin(&self) -> f64 {
        self.entries.iter().map(|e| (e.cone - e.inside) / e.cone.abs().max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min)
    }
}

/// Integral of an even density over `[x0, x1]` from half-line samples.
fn even_window_integral(grid: &OddGrid, e0: f64, e: &[f64], x0: f64, x1: f64) -> f64 {
    let cum = |x: f64| -> f64 {
        // int_0^x by the trapezoid, linear interpolation inside the last cell.
        let x = x.min(grid.l);
        let mut acc = 0.0;
        let mut prev_x = 0.0;
        let mut prev_e = e0;
        for i in 0..grid.n {
            let xi = grid.x(i);
            if xi >= x {
                let f = (x - prev_x) / grid.dx;
                let ex = prev_e + f * (e[i] - prev_e);
                acc += 0.5 * (x - prev_x) * (prev_e + ex);
                return acc;
            }
            acc += 0.5 * grid.dx * (prev_e + e[i]);
            prev_x = xi;
            prev_e = e[i];
        }
        acc
    };
    if x0 >= 0.0 {
        cum(x1) - cum(x0)
    } else {
        cum(x1) + cum(-x0)
    }
}

/// Relative slack absorbing quadrature round-off in the local energy test.
pub const LOCAL_ENERGY_TOL: f64 = 1e-9;

/// Check `int_a^b e(x,t) dx <= int_{a-t}^{b+t} e(x,0) dx` at every snapshot.
pub fn local_energy_check(
    traj: &TrajectoryRecord,
    potential: &PotentialModel,
    kink: &KinkProfile,
    a: f64,
    b: f64,
) -> LocalEnergyReport {
    let g = &traj.grid;
    let full = |st: &FieldPair| FieldPair {
        grid: *g,
        psi: st.psi.iter().zip(&kink.s).map(|(p, s)| p + s).collect(),
        pi: st.pi.clone(),
    };
    let (e00, e0) = energy_density(&full(&traj.snapshots[0]), potential);
    let mut entries = Vec::new();
    let mut violations = Vec::new();
    let mut skipped = 0;
    for (k, st) in traj.snapshots.iter().enumerate() {
        let t = traj.times[k];
        if b + t > g.l {
            skipped += 1;
            continue;
        }
        let (et0, et) = energy_density(&full(st), potential);
        let inside = even_window_integral(g, et0, &et, a, b);
        let cone = even_window_integral(g, e00, &e0, a - t, b + t);
        if inside > cone * (1.0 + LOCAL_ENERGY_TOL) + LOCAL_ENERGY_TOL {
            violations.push(k);
        }
        entries.push(LocalEnergyEntry { time: t, inside, cone });
    }
    LocalEnergyReport { window: [a, b], entries, violations, skipped }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirialReport {
    pub sigma: f64,
    pub nu: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub growth_exponent: f64,
    pub window: [f64; 2],
    pub r2: f64,
    pub bound: f64,
    pub truncated: bool,
}

impl VirialReport {
    pub fn passes(&self) -> bool {
        self.growth_exponent <= self.bound + 0.2
    }
}

/// Support threshold relative to the peak used to detect boundary contact.
const SUPPORT_TOL: f64 = 1e-10;

/// Growth of `||Psi(t)||_{L²_{sigma+nu}}` fitted against `log(1+t)` over `t >= t0`.
pub fn virial_trace(traj: &TrajectoryRecord, sigma: f64, nu: f64, t0: f64) -> Result<VirialReport> {
    let spec = NormSpec::L2Weighted { sigma, nu };
    let g = &traj.grid;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut truncated = false;
    let edge = g.index_at_or_below(0.95 * g.l);
    for (k, st) in traj.snapshots.iter().enumerate() {
        let peak = st.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let at_edge = st.psi[edge..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 && at_edge > SUPPORT_TOL * peak {
            truncated = true;
            break;
        }
        times.push(traj.times[k]);
        values.push(norm(st, &spec)?);
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (t, v) in times.iter().zip(&values) {
        if *t >= t0 && *v > 0.0 {
            lx.push((1.0 + t).ln());
            ly.push(v.ln());
        }
    }
    let fit = linear_fit(&lx, &ly)
        .ok_or_else(|| Error::Window("virial fit window holds fewer than two usable snapshots".into()))?;
    let window = [lx[0].exp() - 1.0, lx.last().unwrap().exp() - 1.0];
    Ok(VirialReport {
        sigma,
        nu,
        times,
        values,
        growth_exponent: fit.slope,
        window,
        r2: fit.r2,
        bound: 4.0 + nu,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;
    use crate::kink::kink_closed_form;
    use crate::spectral::assemble;

    fn gl(l: f64, n: usize) -> (PotentialModel, KinkProfile) {
        let p = PotentialModel::ginzburg_landau();
        let k = kink_closed_form(&p, make_grid(l, n).unwrap()).unwrap();
        (p, k)
    }

    fn bump(x: f64, c: f64, w: f64) -> f64 {
        let r = (x - c) / w;
        if r.abs() < 1.0 {
            (-1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    }

    #[test]
    fn kink_is_fixed_point() {
        let (p, k) = gl(40.0, 1024);
        let z = FieldPair::zeros(k.grid);
        let next = step_nonlinear(&z, &p, &k, 0.4 * k.grid.dx).unwrap();
        assert!(next.psi.iter().chain(&next.pi).all(|&v| v == 0.0));
    }

    #[test]
    fn reversibility() {
        let (p, k) = gl(40.0, 1024);
        let g = k.grid;
        let x0 = FieldPair::from_fn(g, |x| 0.1 * x * (-x * x / 4.0).exp(), |x| 0.05 * bump(x, 5.0, 3.0));
        let dyn_ = Dynamics::nonlinear(&p, &k);
        let mut st = x0.clone();
        let mut v = Verlet::new(&dyn_, g);
        let dt = 0.4 * g.dx;
        v.prime(&st);
        for _ in 0..500 {
            v.step(&mut st, dt);
        }
        v.prime(&st);
        for _ in 0..500 {
            v.step(&mut st, -dt);
        }
        let err = st.psi.iter().zip(&x0.psi).chain(st.pi.iter().zip(&x0.pi)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn dst_round_trip_and_group() {
        let g = make_grid(20.0, 500).unwrap();
        let fg = FreeGroup::new(g, 2.0);
        let st = FieldPair::from_fn(g, |x| bump(x, 6.0, 3.0), |x| 0.3 * bump(x, 8.0, 2.0));
        let id = fg.apply(&st, 0.0);
        let back = fg.apply(&fg.apply(&st, 3.7), -3.7);
        for i in 0..g.n {
            assert!((id.psi[i] - st.psi[i]).abs() < 1e-12 && (id.pi[i] - st.pi[i]).abs() < 1e-12);
            assert!((back.psi[i] - st.psi[i]).abs() < 1e-12 && (back.pi[i] - st.pi[i]).abs() < 1e-12);
        }
        let e0 = fg.energy(&st);
        let e1 = fg.energy(&fg.apply(&st, 11.3));
        assert!(((e1 - e0) / e0).abs() < 1e-12);
        // The DST symbol is the spectrum of the three-point operator.
        let op = LinearizedOperator::free(g, 2.0);
        let mode: Vec<f64> = (1..=g.n).map(|j| (std::f64::consts::PI * 3.0 * j as f64 / (g.n + 1) as f64).sin()).collect();
        let hm = op.apply(&mode);
        let w2 = fg.omega()[2].powi(2);
        for i in 0..g.n {
            assert!((hm[i] - w2 * mode[i]).abs() < 1e-9 * w2);
        }
    }

    #[test]
    fn linearized_free_matches_free_group() {
        let g = make_grid(40.0, 1024).unwrap();
        let st = FieldPair::from_fn(g, |x| bump(x, 8.0, 4.0), |x| 0.5 * bump(x, 10.0, 3.0));
        let dt = 0.4 * g.dx;
        let cfg = EvolutionConfig::new(dt, 400.0 * dt, 400, Flavor::Linearized);
        let rec = evolve_linearized(&st, &LinearizedOperator::free(g, 2.0), &cfg).unwrap();
        let exact = FreeGroup::new(g, 2.0).apply_leapfrog(&st, dt, 400);
        let last = rec.final_state();
        for i in 0..g.n {
            assert!((last.psi[i] - exact.psi[i]).abs() < 1e-10 && (last.pi[i] - exact.pi[i]).abs() < 1e-10);
        }
        // Exact group and leapfrog agree to O(dt²).
        let w = FreeGroup::new(g, 2.0).apply(&st, 400.0 * dt);
        let d = w.psi.iter().zip(&exact.psi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-3);
    }

    #[test]
    fn finite_propagation_speed() {
        let g = make_grid(40.0, 2048).unwrap();
        let r = 6.0;
        // Steep-edged bump: the support edge is resolved by many nodes.
        let st = FieldPair::from_fn(g, |x| bump(x, 3.0, 3.0).powi(4), |_| 0.0);
        let dt = 0.4 * g.dx;
        let t = 10.0;
        let cfg = EvolutionConfig::new(dt, t, 10_000, Flavor::Linearized);
        let (p, k) = gl(40.0, 2048);
        let op = assemble(&p, &k).unwrap();
        let last = evolve_linearized(&st, &op, &cfg).unwrap().final_state().clone();
        let tf = cfg.steps() as f64 * dt;
        for i in 0..g.n {
            if g.x(i) > r + tf + 3.0 * g.dx {
                assert!(last.psi[i].abs() < 1e-10 && last.pi[i].abs() < 1e-10, "{} {}", g.x(i), last.psi[i]);
            }
        }
    }

    #[test]
    fn nonlinear_energy_conservation() {
        let (p, k) = gl(80.0, 4096);
        let g = k.grid;
        let st = FieldPair::from_fn(g, |x| 0.1 * (x / 2f64.sqrt()).sinh() / (x / 2f64.sqrt()).cosh().powi(2), |_| 0.0);
        let dt = 0.4 * g.dx;
        let cfg = EvolutionConfig::new(dt, 100.0, 200, Flavor::Nonlinear);
        let rec = evolve_nonlinear(&st, &p, &k, &cfg).unwrap();
        let h0 = crate::fields::energy(&k.as_state(), &p) + rec.energy_trace[0];
        let drift = rec.energy_trace.iter().fold(0.0f64, |m, e| m.max((e - rec.energy_trace[0]).abs())) / h0;
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn local_energy_inequality() {
        let (p, k) = gl(60.0, 2048);
        let g = k.grid;
        let st = FieldPair::from_fn(g, |x| 0.2 * bump(x, 4.0, 3.0), |x| 0.1 * bump(x, 6.0, 2.0));
        let dt = 0.4 * g.dx;
        let cfg = EvolutionConfig::new(dt, 30.0, 50, Flavor::Nonlinear);
        let mut rec = evolve_nonlinear(&st, &p, &k, &cfg).unwrap();
        for (a, b) in [(0.0, 5.0), (3.0, 10.0), (10.0, 20.0)] {
            let rep = local_energy_check(&rec, &p, &k, a, b);
            assert!(rep.holds(), "{a} {b} {:?}", rep.violations);
        }
        // Zero perturbation: both sides are the kink's local energy at t = 0.
        let zero = evolve_nonlinear(&FieldPair::zeros(g), &p, &k, &EvolutionConfig::new(dt, 1.0, 50, Flavor::Nonlinear)).unwrap();
        let rep = local_energy_check(&zero, &p, &k, 1.0, 4.0);
        assert!((rep.entries[0].inside - rep.entries[0].cone).abs() < 1e-14);
        // Energy injected into one snapshot is flagged.
        let mid = rec.snapshots.len() / 2;
        for v in rec.snapshots[mid].pi.iter_mut() {
            *v += 1.0;
        }
        let rep = local_energy_check(&rec, &p, &k, 0.0, 5.0);
        assert_eq!(rep.violations, vec![mid]);
    }

    #[test]
    fn virial_static_and_free() {
        let g = make_grid(60.0, 1024).unwrap();
        let st = FieldPair::from_fn(g, |x| bump(x, 3.0, 2.0), |_| 0.0);
        let frozen = TrajectoryRecord {
            grid: g,
            config: EvolutionConfig::new(0.01, 1.0, 1, Flavor::Free),
            times: (0..20).map(|k| k as f64).collect(),
            snapshots: vec![st.clone(); 20],
            energy_trace: vec![0.0; 20],
            norm_traces: Vec::new(),
            provenance: String::new(),
        };
        let rep = virial_trace(&frozen, 2.5, 0.1, 1.0).unwrap();
        assert!(rep.growth_exponent.abs() < 1e-12);
        let dt = 0.4 * g.dx;
        let rec = evolve_free(&st, 2.0, &EvolutionConfig::new(dt, 40.0, 100, Flavor::Free)).unwrap();
        let rep = virial_trace(&rec, 2.5, 0.1, 5.0).unwrap();
        assert!(rep.growth_exponent <= 2.6 && rep.passes(), "{}", rep.growth_exponent);
    }

    #[test]
    fn config_validation() {
        let g = make_grid(80.0, 4096).unwrap();
        assert!(EvolutionConfig::new(0.6 * g.dx, 10.0, 1, Flavor::Free).validate(&g).is_err());
        let mut c = EvolutionConfig::new(0.4 * g.dx, 70.0, 1, Flavor::Free);
        c.diag_radius = 20.0;
        c.fits_requested = true;
        assert!(c.validate(&g).is_err());
        c.t_final = 50.0;
        assert!(c.validate(&g).is_ok());
    }
}
