//! The linearized operator `H = -d²/dx² + m² + V` on odd functions.
//!
//! Everything here works with the three-point discretization of `H`, the
//! same matrix that drives the linearized time evolution. Continuum waves and
//! resolvents are exact solutions of the discrete problem; they approach the
//! continuum objects at O(dx²).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{inner, ComplexPair, OddGrid};
use crate::kink::KinkProfile;
use crate::linalg::{linear_fit, solve_dense, sturm_count, thomas, tridiag_eigenvalue};
use crate::potential::PotentialModel;

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub grid: OddGrid,
    pub v: Vec<f64>,
    pub m2: f64,
    /// Matrix diagonal `2/dx² + m² + V_j`.
    pub diag: Vec<f64>,
    /// Constant off-diagonal `-1/dx²`.
    pub off: f64,
}

impl LinearizedOperator {
    pub fn with_potential(grid: OddGrid, m2: f64, v: Vec<f64>) -> Result<Self> {
        if v.len() != grid.n {
            return Err(Error::InvalidArgument("V length does not match grid".into()));
        }
        let h2 = grid.dx * grid.dx;
        let diag = v.iter().map(|vj| 2.0 / h2 + m2 + vj).collect();
        Ok(LinearizedOperator { grid, v, m2, diag, off: -1.0 / h2 })
    }

    pub fn free(grid: OddGrid, m2: f64) -> Self {
        Self::with_potential(grid, m2, vec![0.0; grid.n]).expect("matching lengths")
    }

    /// `H w` with zero ghosts.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let l = if i == 0 { 0.0 } else { w[i - 1] };
            let r = if i + 1 == n { 0.0 } else { w[i + 1] };
            out[i] = self.diag[i] * w[i] + self.off * (l + r);
        }
        out
    }

    pub fn apply_c(&self, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n;
        let zero = Complex64::new(0.0, 0.0);
        let mut out = vec![zero; n];
        for i in 0..n {
            let l = if i == 0 { zero } else { w[i - 1] };
            let r = if i + 1 == n { zero } else { w[i + 1] };
            out[i] = w[i] * self.diag[i] + (l + r) * self.off;
        }
        out
    }

    /// Exponential decay rate of `|V|` fitted where `1e-12 < |V|/max|V| < 1e-3`.
    pub fn v_decay_rate(&self) -> Option<f64> {
        let vmax = self.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vmax == 0.0 {
            return None;
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, v) in self.v.iter().enumerate() {
            let r = v.abs() / vmax;
            if r < 1e-3 && r > 1e-12 {
                xs.push(self.grid.x(i));
                ys.push(r.ln());
            }
        }
        linear_fit(&xs, &ys).map(|f| -f.slope)
    }

    /// Position beyond which `|V|` stays below `1e-13 max|V|`.
    pub fn potential_support(&self) -> f64 {
        let vmax = self.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vmax == 0.0 {
            return 0.0;
        }
        let last = self.v.iter().rposition(|v| v.abs() > 1e-13 * vmax).unwrap_or(0);
        self.grid.x(last)
    }

    /// Discrete wavenumber of the three-point stencil at spectral value `lambda`.
    pub fn discrete_wavenumber(&self, lambda: f64) -> Option<f64> {
        let h = self.grid.dx;
        let c = 1.0 - 0.5 * h * h * (lambda - self.m2);
        if lambda > self.m2 && c > -1.0 {
            Some(c.acos() / h)
        } else {
            None
        }
    }

    /// Regular solution of `(H - lambda) phi = 0` with `phi_0 = 0`, `phi_1 = dx`.
    pub fn regular_solution(&self, lambda: f64) -> Vec<f64> {
        let n = self.grid.n;
        let h2 = self.grid.dx * self.grid.dx;
        let mut phi = vec![0.0; n + 1];
        phi[0] = self.grid.dx;
        let mut prev = 0.0;
        for i in 0..n {
            let next = (2.0 + h2 * (self.m2 + self.v[i] - lambda)) * phi[i] - prev;
            prev = phi[i];
            phi[i + 1] = next;
        }
        phi
    }
}

/// Potential `V = U''(s) - m²` sampled on the kink grid.
pub fn assemble(potential: &PotentialModel, kink: &KinkProfile) -> Result<LinearizedOperator> {
    let v = kink.s.iter().map(|&s| potential.eval(s, 2) - potential.m2).collect();
    LinearizedOperator::with_potential(kink.grid, potential.m2, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub is_resonance: bool,
    /// Tail fit `phi ≈ alpha + beta x` of the zero-momentum solution.
    pub alpha: f64,
    pub growth_slope: f64,
    pub window: [f64; 2],
}

/// Relative tolerance on `|beta| L / |alpha|` for declaring a threshold resonance.
pub const EDGE_TOL: f64 = 0.05;

/// Bounded versus linearly growing zero-momentum solution at the edge `m²`.
pub fn edge_resonance_test(op: &LinearizedOperator) -> EdgeReport {
    let phi = op.regular_solution(op.m2);
    let g = &op.grid;
    let x0 = op.potential_support().max(0.5 * g.l).min(0.9 * g.l);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..g.n {
        if g.x(i) >= x0 {
            xs.push(g.x(i));
            ys.push(phi[i]);
        }
    }
    let fit = linear_fit(&xs, &ys).expect("non-empty tail window");
    let (alpha, beta) = (fit.intercept, fit.slope);
    let is_resonance = beta.abs() * g.l < EDGE_TOL * alpha.abs();
    EdgeReport { is_resonance, alpha, growth_slope: beta, window: [xs[0], *xs.last().unwrap()] }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    /// Reported eigenvalue (Richardson-extrapolated when a refined operator was supplied).
    pub lambda1: f64,
    /// Eigenvalue of the matrix on this grid; used by all grid computations.
    pub lambda1_grid: f64,
    pub lambda1_refined: Option<f64>,
    /// `sqrt(lambda1_grid)`.
    pub mu: f64,
    /// Eigenvector, unit full-line norm, positive near the origin.
    pub phi1: Vec<f64>,
    pub edge: EdgeReport,
    pub m2: f64,
    pub v_decay_rate: Option<f64>,
    pub grid: OddGrid,
}

impl SpectralData {
    /// Conditions `0 < lambda1 < m²` and `4 lambda1 > m²`.
    pub fn la1_holds(&self) -> bool {
        self.lambda1 > 0.0 && self.lambda1 < self.m2 && 4.0 * self.lambda1 > self.m2
    }

    pub fn la2_holds(&self) -> bool {
        !self.edge.is_resonance
    }
}

/// Eigenvalues of the odd-sector matrix below `m²`.
pub fn eigenvalues_below_edge(op: &LinearizedOperator) -> Vec<f64> {
    let count = sturm_count(&op.diag, op.off, op.m2);
    let lo = op.diag.iter().fold(f64::INFINITY, |m, &d| m.min(d)) + 2.0 * op.off;
    (0..count).map(|k| tridiag_eigenvalue(&op.diag, op.off, k, lo.min(0.0) - 1.0, op.m2)).collect()
}

/// Eigenvector for an isolated eigenvalue by inverse iteration.
pub fn eigenvector(op: &LinearizedOperator, lambda: f64) -> Result<Vec<f64>> {
    let n = op.grid.n;
    let shift = lambda * (1.0 + 1e-13) + 1e-15;
    let sub = vec![op.off; n];
    let diag: Vec<f64> = op.diag.iter().map(|d| d - shift).collect();
    let sup = vec![op.off; n];
    let mut v: Vec<f64> = (0..n).map(|i| (-(op.grid.x(i) - 1.0).powi(2) / 8.0).exp()).collect();
    for _ in 0..4 {
        v = thomas(&sub, &diag, &sup, &v).ok_or_else(|| Error::NearSingular("inverse iteration".into()))?;
        let nrm = inner(&op.grid, &v, &v).sqrt();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::NearSingular("inverse iteration diverged".into()));
        }
        for x in v.iter_mut() {
            *x /= nrm;
        }
    }
    if v[0] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    Ok(v)
}

/// The single odd eigenvalue below the continuum and its eigenvector.
///
/// When `refined` (same problem on the doubled grid) is given, the reported
/// `lambda1` is the Richardson value `(4 l(dx/2) - l(dx)) / 3`.
pub fn discrete_spectrum_odd(op: &LinearizedOperator, refined: Option<&LinearizedOperator>) -> Result<SpectralData> {
    let evs = eigenvalues_below_edge(op);
    if evs.len() != 1 {
        return Err(Error::SpectralCondition(format!(
            "expected exactly one odd eigenvalue below m² = {}, found {}",
            op.m2,
            evs.len()
        )));
    }
    let l_grid = evs[0];
    if !(l_grid > 0.0) {
        return Err(Error::SpectralCondition(format!("odd eigenvalue {l_grid} is not positive")));
    }
    let mut lambda1 = l_grid;
    let mut lambda1_refined = None;
    if let Some(r) = refined {
        let evr = eigenvalues_below_edge(r);
        if evr.len() != 1 {
            return Err(Error::SpectralCondition("refined grid changes the eigenvalue count".into()));
        }
        lambda1_refined = Some(evr[0]);
        lambda1 = (4.0 * evr[0] - l_grid) / 3.0;
    }
    let phi1 = eigenvector(op, l_grid)?;
    Ok(SpectralData {
        lambda1,
        lambda1_grid: l_grid,
        lambda1_refined,
        mu: l_grid.sqrt(),
        phi1,
        edge: edge_resonance_test(op),
        m2: op.m2,
        v_decay_rate: op.v_decay_rate(),
        grid: op.grid,
    })
}

/// Odd generalized eigenfunction of the discrete operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuumWave {
    pub lambda: f64,
    /// Continuum wavenumber `sqrt(lambda - m²)`.
    pub k: f64,
    /// Wavenumber of the discrete stencil, `k + O(k³ dx²)`.
    pub kappa: f64,
    /// Samples scaled to unit asymptotic amplitude.
    pub samples: Vec<f64>,
    /// Asymptotic amplitude of the solution with unit slope at the origin.
    pub raw_amplitude: f64,
    pub phase: f64,
    pub matching_residual: f64,
    pub window: [f64; 2],
}

/// Tolerance on the relative tail matching residual.
pub const MATCH_TOL: f64 = 1e-8;

/// Solve `H phi = lambda phi` outward from `phi(0) = 0` and match the tail to
/// `A sin(kappa x + theta)`.
pub fn continuum_wave(op: &LinearizedOperator, lambda: f64) -> Result<ContinuumWave> {
    let kappa = op
        .discrete_wavenumber(lambda)
        .ok_or_else(|| Error::InvalidArgument(format!("lambda = {lambda} is outside the continuous band")))?;
    let g = &op.grid;
    let phi = op.regular_solution(lambda);
    let wavelength = 2.0 * std::f64::consts::PI / kappa;
    let x0 = op.potential_support().max(g.dx);
    let x1 = (x0 + 4.0 * wavelength).min(g.l);
    if x1 - x0 < 2.0 * wavelength {
        return Err(Error::Window(format!(
            "tail window [{x0:.2}, {x1:.2}] holds fewer than two wavelengths ({wavelength:.2})"
        )));
    }
    let mut ata = vec![vec![0.0; 2]; 2];
    let mut atb = vec![0.0; 2];
    let mut idx = Vec::new();
    for i in 0..g.n {
        let x = g.x(i);
        if x >= x0 && x <= x1 {
            let (s, c) = (kappa * x).sin_cos();
            let y = phi[i];
            ata[0][0] += s * s;
            ata[0][1] += s * c;
            ata[1][1] += c * c;
            atb[0] += s * y;
            atb[1] += c * y;
            idx.push(i);
        }
    }
    ata[1][0] = ata[0][1];
    let c = solve_dense(ata, atb).ok_or_else(|| Error::Window("singular tail fit".into()))?;
    let amp = c[0].hypot(c[1]);
    let phase = c[1].atan2(c[0]);
    let mut res = 0.0f64;
    for &i in &idx {
        let x = g.x(i);
        res = res.max((phi[i] - amp * (kappa * x + phase).sin()).abs());
    }
    let residual = res / amp;
    if !(residual < 1e-6) {
        return Err(Error::Window(format!("tail is not sinusoidal (relative residual {residual:e})")));
    }
    Ok(ContinuumWave {
        lambda,
        k: (lambda - op.m2).sqrt(),
        kappa,
        samples: phi[..g.n].iter().map(|v| v / amp).collect(),
        raw_amplitude: amp,
        phase,
        matching_residual: residual,
        window: [x0, x1],
    })
}

/// Radiation condition at the right end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radiation {
    /// `w ~ e^{+ikx}`, the boundary value `(H - (lambda + i0))^{-1}`.
    Outgoing,
    /// `w ~ e^{-ikx}`, the boundary value `(H - (lambda - i0))^{-1}`.
    Incoming,
}

/// Wronskian tolerance relative to `dx` for the Jost-type construction.
pub const WRONSKIAN_TOL: f64 = 1e-10;

/// Solve `(H - lambda) w = rhs` for `lambda` inside the continuous band by
/// variation of parameters between the regular solution and the radiating
/// solution integrated inward from the right end.
pub fn resolvent_h(
    op: &LinearizedOperator,
    lambda: f64,
    rhs: &[Complex64],
    radiation: Radiation,
) -> Result<Vec<Complex64>> {
    let g = &op.grid;
    let n = g.n;
    let h = g.dx;
    let kappa = op
        .discrete_wavenumber(lambda)
        .ok_or_else(|| Error::InvalidArgument(format!("lambda = {lambda} is outside the continuous band")))?;
    let sign = match radiation {
        Radiation::Outgoing => 1.0,
        Radiation::Incoming => -1.0,
    };
    let reg = op.regular_solution(lambda);
    // Radiating solution on nodes 0..=N+1, seeded with plane waves at N, N+1.
    let mut out = vec![Complex64::new(0.0, 0.0); n + 2];
    out[n + 1] = Complex64::from_polar(1.0, sign * kappa * (n + 1) as f64 * h);
    out[n] = Complex64::from_polar(1.0, sign * kappa * n as f64 * h);
    let h2 = h * h;
    for j in (1..=n).rev() {
        let c = 2.0 + h2 * (op.m2 + op.v[j - 1] - lambda);
        out[j - 1] = out[j] * c - out[j + 1];
    }
    // Casoratian at node 0 (reg_0 = 0, reg_1 = dx).
    let w = -out[0] * h;
    if w.norm() < WRONSKIAN_TOL * h {
        return Err(Error::NearSingular(format!("Wronskian {:e} at lambda = {lambda}", w.norm())));
    }
    // Node j (1-based) value: -(h² / W) [out_j sum_{k<=j} reg_k f_k + reg_j sum_{k>j} out_k f_k].
    let mut left = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        acc += rhs[i] * reg[i];
        left[i] = acc;
    }
    let mut res = vec![Complex64::new(0.0, 0.0); n];
    let mut right = Complex64::new(0.0, 0.0);
    let scale = -h * h / w;
    for i in (0..n).rev() {
        res[i] = (out[i + 1] * left[i] + right * reg[i]) * scale;
        right += rhs[i] * out[i + 1];
    }
    Ok(res)
}

/// `(H - lambda) w = rhs` for `lambda` below the continuum (Dirichlet closure).
pub fn solve_below_edge(op: &LinearizedOperator, lambda: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = op.grid.n;
    let sub = vec![op.off; n];
    let diag: Vec<f64> = op.diag.iter().map(|d| d - lambda).collect();
    thomas(&sub, &diag, &sub, rhs).ok_or_else(|| Error::NearSingular(format!("shift {lambda}")))
}

/// Spectral points used by the normal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralPoint {
    Zero,
    /// `Lambda = 2 i mu + 0`.
    PlusTwoIMu,
    /// `Lambda = -2 i mu + 0`.
    MinusTwoIMu,
}

/// Solve `(A - Lambda) a = rhs` with `A(a1, a2) = (a2, -H a1)`.
///
/// The first component solves `(H + Lambda²) a1 = -(rhs2 + Lambda rhs1)`,
/// the second is `a2 = Lambda a1 + rhs1`. At `Lambda = ±2i mu + 0` the
/// scalar operator is `H - 4 mu² ± i0`, whose boundary value radiates as
/// `e^{∓ikx}`.
pub fn resolvent_a(
    op: &LinearizedOperator,
    spectral: &SpectralData,
    point: SpectralPoint,
    rhs: &ComplexPair,
) -> Result<ComplexPair> {
    let mu = spectral.mu;
    let lam = match point {
        SpectralPoint::Zero => Complex64::new(0.0, 0.0),
        SpectralPoint::PlusTwoIMu => Complex64::new(0.0, 2.0 * mu),
        SpectralPoint::MinusTwoIMu => Complex64::new(0.0, -2.0 * mu),
    };
    let f: Vec<Complex64> = rhs.pi.iter().zip(&rhs.psi).map(|(r2, r1)| -(r2 + lam * r1)).collect();
    let a1 = match point {
        SpectralPoint::Zero => {
            let re: Vec<f64> = f.iter().map(|c| c.re).collect();
            let im: Vec<f64> = f.iter().map(|c| c.im).collect();
            let wr = solve_below_edge(op, 0.0, &re)?;
            let wi = solve_below_edge(op, 0.0, &im)?;
            wr.iter().zip(&wi).map(|(a, b)| Complex64::new(*a, *b)).collect()
        }
        SpectralPoint::PlusTwoIMu => resolvent_h(op, 4.0 * mu * mu, &f, Radiation::Incoming)?,
        SpectralPoint::MinusTwoIMu => resolvent_h(op, 4.0 * mu * mu, &f, Radiation::Outgoing)?,
    };
    let a2 = a1.iter().zip(&rhs.psi).map(|(a, r1)| lam * a + r1).collect();
    Ok(ComplexPair { grid: op.grid, psi: a1, pi: a2 })
}

/// `(A - Lambda) a` for a complex pair.
pub fn apply_a_minus(op: &LinearizedOperator, lam: Complex64, a: &ComplexPair) -> ComplexPair {
    let ha1 = op.apply_c(&a.psi);
    ComplexPair {
        grid: a.grid,
        psi: a.pi.iter().zip(&a.psi).map(|(a2, a1)| a2 - lam * a1).collect(),
        pi: ha1.iter().zip(&a.pi).map(|(h1, a2)| -h1 - lam * a2).collect(),
    }
}

/// Spectral density `theta(omega) = c / (pi k)`, `k = sqrt(omega² - m²)`,
/// for flux-normalized waves; `c` from [`calibrate_theta`].
pub fn theta(c: f64, omega: f64, m2: f64) -> f64 {
    c / (std::f64::consts::PI * (omega * omega - m2).sqrt())
}

/// Completeness calibration on the free operator: find `c` such that
/// `||g||² = int 2 omega theta(omega) |<g, phi_omega>_half|² d omega` for a
/// smooth odd test function `g`. Continuum value: `c = 2`.
pub fn calibrate_theta(grid: OddGrid, m2: f64) -> Result<f64> {
    let op = LinearizedOperator::free(grid, m2);
    // g = -(x e^{-x²/2})'' has transform ~ k³ e^{-k²/2}, negligible where windows fail.
    let gfun: Vec<f64> = grid.nodes().iter().map(|&x| (3.0 * x - x * x * x) * (-0.5 * x * x).exp()).collect();
    let norm2 = inner(&grid, &gfun, &gfun);
    // 2 omega theta d omega = (2c / pi) dk; integrate over k in panels.
    let (gx, gw) = crate::linalg::gauss_legendre(16);
    let panels = 40;
    let (k_lo, k_hi) = (0.0, 9.0);
    let mut acc = 0.0;
    for p in 0..panels {
        let a = k_lo + (k_hi - k_lo) * p as f64 / panels as f64;
        let b = k_lo + (k_hi - k_lo) * (p + 1) as f64 / panels as f64;
        for (x, w) in gx.iter().zip(&gw) {
            let k = 0.5 * (a + b) + 0.5 * (b - a) * x;
            // Discrete dispersion, so the wave has wavenumber exactly k.
            let s = (0.5 * k * grid.dx).sin() * 2.0 / grid.dx;
            let lambda = m2 + s * s;
            let ov = match continuum_wave(&op, lambda) {
                Ok(wave) => crate::fields::trapz_half(&grid, 0.0, &elementwise(&wave.samples, &gfun)),
                // Window too short near the edge, where the transform is O(k³).
                Err(Error::Window(_)) => continue,
                Err(e) => return Err(e),
            };
            acc += w * 0.5 * (b - a) * ov * ov;
        }
    }
    Ok(std::f64::consts::PI * norm2 / (2.0 * acc))
}

fn elementwise(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}
