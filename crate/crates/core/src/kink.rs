//! Standing kink `s(x)` connecting `-a` to `a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldPair, OddGrid};
use crate::linalg::{gauss_legendre, linear_fit};
use crate::potential::{PotentialKind, PotentialModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkMethod {
    ClosedForm,
    Quadrature,
    Samples,
}

#[derive(Debug, Clone)]
pub struct KinkProfile {
    pub grid: OddGrid,
    pub s: Vec<f64>,
    pub s_prime: Vec<f64>,
    /// `a - s`, kept separately so the tail stays resolved below round-off of `s`.
    pub gap: Vec<f64>,
    /// Smallest gap value that carries information.
    pub gap_floor: f64,
    pub potential: PotentialModel,
    pub method: KinkMethod,
    pub decay_rate_measured: Option<f64>,
}

impl KinkProfile {
    /// Profile from raw samples; `s'` from centred differences.
    pub fn from_samples(grid: OddGrid, s: Vec<f64>, potential: PotentialModel) -> Result<Self> {
        if s.len() != grid.n {
            return Err(Error::InvalidArgument("sample count does not match grid".into()));
        }
        let (_, mut s_prime) = crate::fields::d1(&grid, &s);
        let n = grid.n;
        s_prime[n - 1] = (s[n - 1] - s[n - 2]) / grid.dx;
        let a = potential.a;
        let gap = s.iter().map(|v| a - v).collect();
        Ok(KinkProfile {
            grid,
            s,
            s_prime,
            gap,
            gap_floor: 64.0 * f64::EPSILON * a,
            potential,
            method: KinkMethod::Samples,
            decay_rate_measured: None,
        })
    }

    pub fn is_monotone(&self) -> bool {
        self.s.first().is_some_and(|&v| v > 0.0)
            && self.s.windows(2).all(|w| w[1] >= w[0])
            && self.gap.windows(2).all(|w| w[1] < w[0])
    }

    /// The kink as a full-field state with zero momentum.
    pub fn as_state(&self) -> FieldPair {
        FieldPair { grid: self.grid, psi: self.s.clone(), pi: vec![0.0; self.grid.n] }
    }

    fn with_fit(mut self) -> Self {
        self.decay_rate_measured = tail_decay_fit(&self).ok().map(|f| f.m_fit);
        self
    }
}

/// `s = a tanh(x / sqrt 2)` for the Ginzburg-Landau potential.
pub fn kink_closed_form(potential: &PotentialModel, grid: OddGrid) -> Result<KinkProfile> {
    if potential.kind != PotentialKind::GinzburgLandau {
        return Err(Error::InvalidArgument("closed-form kink exists only for ginzburg_landau".into()));
    }
    let r2 = std::f64::consts::SQRT_2;
    let mut s = Vec::with_capacity(grid.n);
    let mut sp = Vec::with_capacity(grid.n);
    let mut gap = Vec::with_capacity(grid.n);
    for i in 0..grid.n {
        let y = grid.x(i) / r2;
        let g = 2.0 / (1.0 + (2.0 * y).exp());
        s.push(y.tanh());
        sp.push(g * (2.0 - g) / r2);
        gap.push(g);
    }
    Ok(KinkProfile {
        grid,
        s,
        s_prime: sp,
        gap,
        gap_floor: f64::MIN_POSITIVE,
        potential: potential.clone(),
        method: KinkMethod::ClosedForm,
        decay_rate_measured: None,
    }
    .with_fit())
}

/// `U(a - gap)` evaluated without cancellation for tiny gaps.
fn u_near_vacuum(p: &PotentialModel, gap: f64) -> f64 {
    if gap > 1e-5 {
        p.u(p.a - gap)
    } else {
        let u2 = p.eval(p.a, 2);
        let u3 = p.eval(p.a, 3);
        0.5 * u2 * gap * gap - u3 * gap * gap * gap / 6.0
    }
}

/// Integrand of `x(u)` after the substitution `s = a - e^{-u}`.
fn integrand(p: &PotentialModel, u: f64) -> Result<f64> {
    let gap = (-u).exp();
    let uu = u_near_vacuum(p, gap);
    if !(uu > 0.0) {
        return Err(Error::DegeneratePotential(format!("U = {uu:e} <= 0 at psi = {}", p.a - gap)));
    }
    Ok(gap / (2.0 * uu).sqrt())
}

/// Invert `x = int_0^s dσ / sqrt(2 U(σ))` node by node.
pub fn kink_quadrature(potential: &PotentialModel, grid: OddGrid) -> Result<KinkProfile> {
    let p = potential;
    let a = p.a;
    if !(p.u(0.0) > 0.0) {
        return Err(Error::DegeneratePotential("U(0) must be positive".into()));
    }
    if !(p.eval(a, 2) > 0.0) {
        return Err(Error::DegeneratePotential("U''(a) must be positive".into()));
    }
    // Scan for U <= 0 on (0, a) before integrating.
    for k in 1..2000 {
        let x = a * k as f64 / 2000.0;
        if !(p.u(x) > 0.0) {
            return Err(Error::DegeneratePotential(format!("U <= 0 at psi = {x}")));
        }
    }
    let (gx, gw) = gauss_legendre(12);
    let seg = |u0: f64, u1: f64| -> Result<f64> {
        let mid = 0.5 * (u0 + u1);
        let half = 0.5 * (u1 - u0);
        let mut acc = 0.0;
        for (x, w) in gx.iter().zip(&gw) {
            acc += w * integrand(p, mid + half * x)?;
        }
        Ok(acc * half)
    };
    let mut u = -a.ln();
    let mut s = Vec::with_capacity(grid.n);
    let mut sp = Vec::with_capacity(grid.n);
    let mut gap = Vec::with_capacity(grid.n);
    for _ in 0..grid.n {
        // Solve int_u^{u+d} g = dx. Newton with a bracketing fallback.
        let g0 = integrand(p, u)?;
        let mut d = grid.dx / g0;
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for _ in 0..60 {
            let r = seg(u, u + d)? - grid.dx;
            if r > 0.0 {
                hi = hi.min(d);
            } else {
                lo = lo.max(d);
            }
            let step = r / integrand(p, u + d)?;
            let mut next = d - step;
            if !(next > lo && next < hi) {
                next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * d };
            }
            let done = (next - d).abs() <= 1e-15 * (u.abs() + d);
            d = next;
            if done {
                break;
            }
        }
        u += d;
        let g = (-u).exp();
        gap.push(g);
        s.push(a - g);
        sp.push((2.0 * u_near_vacuum(p, g)).sqrt());
    }
    Ok(KinkProfile {
        grid,
        s,
        s_prime: sp,
        gap,
        gap_floor: f64::MIN_POSITIVE,
        potential: potential.clone(),
        method: KinkMethod::Quadrature,
        decay_rate_measured: None,
    }
    .with_fit())
}

/// Discrete full-line L² norm of `s'' - U'(s)`, skipping two nodes at each end.
pub fn kink_residual(profile: &KinkProfile) -> f64 {
    let g = &profile.grid;
    let s = &profile.s;
    let n = g.n;
    let inv = 1.0 / (g.dx * g.dx);
    let mut acc = 0.0;
    // Storage index i is node i+1; nodes 3..=N-2 are kept.
    for i in 2..n.saturating_sub(2) {
        let r = (s[i + 1] - 2.0 * s[i] + s[i - 1]) * inv - profile.potential.eval(s[i], 1);
        acc += r * r;
    }
    (2.0 * g.dx * acc).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub m_fit: f64,
    pub window: [f64; 2],
    pub r2: f64,
    /// The window was shortened because the tail reached the round-off floor.
    pub truncated: bool,
}

/// Fit `log(a - s)` linearly on the tail where `a - s < 1e-3`.
pub fn tail_decay_fit(profile: &KinkProfile) -> Result<TailFit> {
    let g = &profile.grid;
    let floor = profile.gap_floor * 1e3;
    let start = profile
        .gap
        .iter()
        .position(|&v| v < 1e-3)
        .ok_or_else(|| Error::Window("a - s never drops below 1e-3 on the grid".into()))?;
    let x0 = g.x(start);
    let x_cap = x0 + 40.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truncated = false;
    for i in start..g.n {
        let x = g.x(i);
        if x > x_cap {
            break;
        }
        let v = profile.gap[i];
        if !(v > floor) {
            truncated = true;
            break;
        }
        xs.push(x);
        ys.push(v.ln());
    }
    if xs.len() < 8 {
        return Err(Error::Window("tail window has fewer than 8 usable nodes".into()));
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Window("degenerate tail window".into()))?;
    Ok(TailFit { m_fit: -fit.slope, window: [xs[0], *xs.last().unwrap()], r2: fit.r2, truncated })
}
