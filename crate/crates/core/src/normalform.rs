//! Symplectic projector onto the internal mode and the normal-form constants.
//!
//! Scalar products are Hermitian and conjugate-linear in the second slot,
//! `<a, b> = sum_k a_k conj(b_k)` over both components, full line.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{inner, pair_inner, trapz_half, ComplexPair, FieldPair, OddGrid};
use crate::kink::KinkProfile;
use crate::linalg::linear_fit;
use crate::potential::PotentialModel;
use crate::spectral::{
    apply_a_minus, continuum_wave, resolvent_a, theta, LinearizedOperator, SpectralData, SpectralPoint,
};

#[derive(Debug, Clone)]
pub struct ProjectorData {
    pub grid: OddGrid,
    pub phi: Vec<f64>,
    pub mu: f64,
    /// `u = (phi, i mu phi)`.
    pub u: ComplexPair,
    /// `<u, ju> = i delta`.
    pub delta: f64,
    phi_norm2: f64,
}

impl ProjectorData {
    pub fn new(grid: OddGrid, phi: Vec<f64>, mu: f64) -> Result<Self> {
        let phi_norm2 = inner(&grid, &phi, &phi);
        if !(phi_norm2 > 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidArgument("projector needs a nonzero eigenfunction and mu > 0".into()));
        }
        let u = ComplexPair {
            grid,
            psi: phi.iter().map(|&p| Complex64::new(p, 0.0)).collect(),
            pi: phi.iter().map(|&p| Complex64::new(0.0, mu * p)).collect(),
        };
        let uju = pair_inner(&u, &u.j());
        if uju.re.abs() > 1e-12 * uju.im.abs() || !(uju.im > 0.0) {
            return Err(Error::InvalidArgument(format!("<u, ju> = {uju} is not i delta with delta > 0")));
        }
        Ok(ProjectorData { grid, phi, mu, u, delta: uju.im, phi_norm2 })
    }

    pub fn from_spectral(sd: &SpectralData) -> Result<Self> {
        Self::new(sd.grid, sd.phi1.clone(), sd.mu)
    }

    /// `<u, ju>`.
    pub fn uju(&self) -> Complex64 {
        Complex64::new(0.0, self.delta)
    }

    pub fn u_bar(&self) -> ComplexPair {
        self.u.conj()
    }

    /// `z = <X, ju> / <u, ju>` for a real state.
    pub fn z(&self, x: &FieldPair) -> Complex64 {
        let a = inner(&self.grid, &x.psi, &self.phi);
        let b = inner(&self.grid, &x.pi, &self.phi);
        // <X, ju> = i mu <psi, phi> + <pi, phi>.
        Complex64::new(b, self.mu * a) / self.uju()
    }

    /// Coefficients of `u` and `u_bar` in `P^d X` for a complex pair.
    pub fn coefficients_c(&self, x: &ComplexPair) -> (Complex64, Complex64) {
        let ub = self.u_bar();
        let c1 = pair_inner(x, &self.u.j()) / self.uju();
        let c2 = pair_inner(x, &ub.j()) / pair_inner(&ub, &ub.j());
        (c1, c2)
    }

    /// `P^d X = z u + conj(z) u_bar`, real for real `X`.
    pub fn pd(&self, x: &FieldPair) -> FieldPair {
        let a = inner(&self.grid, &x.psi, &self.phi) / self.phi_norm2;
        let b = inner(&self.grid, &x.pi, &self.phi) / self.phi_norm2;
        FieldPair {
            grid: self.grid,
            psi: self.phi.iter().map(|p| a * p).collect(),
            pi: self.phi.iter().map(|p| b * p).collect(),
        }
    }

    pub fn pc(&self, x: &FieldPair) -> FieldPair {
        x.sub(&self.pd(x))
    }

    pub fn pd_c(&self, x: &ComplexPair) -> ComplexPair {
        let (c1, c2) = self.coefficients_c(x);
        self.u.scale(c1).axpy(c2, &self.u_bar())
    }

    pub fn pc_c(&self, x: &ComplexPair) -> ComplexPair {
        x.axpy(Complex64::new(-1.0, 0.0), &self.pd_c(x))
    }

    /// The eigenspace part `w = z u + conj(z) u_bar` as a real state.
    pub fn w(&self, z: Complex64) -> FieldPair {
        let c = 2.0 * z;
        FieldPair {
            grid: self.grid,
            psi: self.phi.iter().map(|p| c.re * p).collect(),
            pi: self.phi.iter().map(|p| (c * Complex64::new(0.0, self.mu)).re * p).collect(),
        }
    }
}

/// `F''(s) = -U'''(s)` on the grid.
pub fn f2_profile(potential: &PotentialModel, kink: &KinkProfile) -> Vec<f64> {
    kink.s.iter().map(|&s| potential.force_derivative(s, 2)).collect()
}

/// `F'''(s) = -U''''(s)` by a centred difference of `U'''`.
pub fn f3_profile(potential: &PotentialModel, kink: &KinkProfile) -> Vec<f64> {
    let h = 1e-4;
    kink.s
        .iter()
        .map(|&s| -(potential.eval(s + h, 3) - potential.eval(s - h, 3)) / (2.0 * h))
        .collect()
}

/// Relative size of the integrand beyond `0.9 L` accepted by [`fgr_integral`].
pub const FGR_TAIL_TOL: f64 = 1e-10;

/// `int_0^inf wave F''(s) phi² dx` by the half-line trapezoid.
pub fn fgr_integral(grid: &OddGrid, wave: &[f64], f2: &[f64], phi: &[f64]) -> Result<f64> {
    let integrand: Vec<f64> = (0..grid.n).map(|i| wave[i] * f2[i] * phi[i] * phi[i]).collect();
    let peak = integrand.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tail_start = grid.index_at_or_below(0.9 * grid.l);
    let tail = integrand[tail_start..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if tail > FGR_TAIL_TOL * peak {
        return Err(Error::Window(format!("FGR integrand not decayed at L (tail/peak = {:e})", tail / peak)));
    }
    Ok(trapz_half(grid, 0.0, &integrand))
}

/// Coupling integral at `4 lambda1` with the flux-normalized wave and the unit eigenfunction.
pub fn fgr_pipeline(
    op: &LinearizedOperator,
    spectral: &SpectralData,
    potential: &PotentialModel,
    kink: &KinkProfile,
) -> Result<f64> {
    let wave = continuum_wave(op, 4.0 * spectral.lambda1_grid)?;
    fgr_integral(&op.grid, &wave.samples, &f2_profile(potential, kink), &spectral.phi1)
}

/// Default threshold on `|fgr| / int |F''(s)| phi² dx` below which U3 is declared violated.
pub const FGR_REL_THRESHOLD: f64 = 1e-3;

/// U3 check: fails with [`Error::FgrDegenerate`] when `|fgr| / scale` is below [`FGR_REL_THRESHOLD`].
pub fn check_fgr(fgr: f64, scale: f64) -> Result<()> {
    if !(fgr.abs() >= FGR_REL_THRESHOLD * scale) {
        return Err(Error::FgrDegenerate(format!(
            "|fgr| / scale = {:e} below {FGR_REL_THRESHOLD:e} (fgr = {fgr:e})",
            fgr.abs() / scale
        )));
    }
    Ok(())
}

/// Scale used to judge the coupling integral, `int_0^inf |F''(s)| phi² dx`.
pub fn fgr_scale(grid: &OddGrid, f2: &[f64], phi: &[f64]) -> f64 {
    let v: Vec<f64> = (0..grid.n).map(|i| f2[i].abs() * phi[i] * phi[i]).collect();
    trapz_half(grid, 0.0, &v)
}

#[derive(Debug, Clone)]
pub struct QuadraticProfiles {
    /// `N_2[u, u] = (0, F''(s) phi² / 2)`.
    pub n2: FieldPair,
    /// `N_3[u, u, u] = (0, F'''(s) phi³ / 6)`.
    pub n3: FieldPair,
    pub f2: ComplexPair,
    pub a11: ComplexPair,
    pub a20: ComplexPair,
    pub a02: ComplexPair,
    /// `max |(A - 2i mu) a20 + F2|` on interior nodes.
    pub residual_a20: f64,
    /// `max |A a11 + F2|` on interior nodes.
    pub residual_a11: f64,
}

/// `F2 = P^c N_2[u,u]`, `a11 = -A^{-1} F2`, `a20 = -(A - 2i mu - 0)^{-1} F2`, `a02 = conj(a20)`.
pub fn build_f2_and_aij(
    proj: &ProjectorData,
    op: &LinearizedOperator,
    spectral: &SpectralData,
    potential: &PotentialModel,
    kink: &KinkProfile,
) -> Result<QuadraticProfiles> {
    let g = proj.grid;
    let f2p = f2_profile(potential, kink);
    let f3p = f3_profile(potential, kink);
    let n2 = FieldPair {
        grid: g,
        psi: vec![0.0; g.n],
        pi: (0..g.n).map(|i| 0.5 * f2p[i] * proj.phi[i] * proj.phi[i]).collect(),
    };
    let n3 = FieldPair {
        grid: g,
        psi: vec![0.0; g.n],
        pi: (0..g.n).map(|i| f3p[i] * proj.phi[i].powi(3) / 6.0).collect(),
    };
    let f2 = proj.pc(&n2).to_complex();
    // Resolvents are taken with the projector's frequency.
    let mut sd = spectral.clone();
    sd.mu = proj.mu;
    let minus_one = Complex64::new(-1.0, 0.0);
    let a11 = resolvent_a(op, &sd, SpectralPoint::Zero, &f2)?.scale(minus_one);
    let a20 = resolvent_a(op, &sd, SpectralPoint::PlusTwoIMu, &f2)?.scale(minus_one);
    let a02 = a20.conj();
    let interior = g.n - 1;
    let res = |lam: Complex64, a: &ComplexPair| {
        let r = apply_a_minus(op, lam, a);
        (0..interior).fold(0.0f64, |m, i| m.max((r.psi[i] + f2.psi[i]).norm()).max((r.pi[i] + f2.pi[i]).norm()))
    };
    let residual_a20 = res(Complex64::new(0.0, 2.0 * proj.mu), &a20);
    let residual_a11 = res(Complex64::new(0.0, 0.0), &a11);
    Ok(QuadraticProfiles { n2, n3, f2, a11, a20, a02, residual_a20, residual_a11 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cij {
    pub c20: Complex64,
    pub c11: Complex64,
    pub c02: Complex64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalFormCoefficients {
    pub fgr: f64,
    pub z2: Complex64,
    pub z3: Complex64,
    pub z21_prime: Complex64,
    pub z30_prime: Complex64,
    pub z12_prime: Complex64,
    pub z03_prime: Complex64,
    pub k: Complex64,
    pub rho: f64,
    pub delta: f64,
    pub mu: f64,
    pub cij: Cij,
    /// `Z'_1 = 2 N_2[u,u] / <u, ju>` (second component; the first is zero).
    #[serde(skip)]
    pub z1_prime: Vec<Complex64>,
}

impl NormalFormCoefficients {
    /// `Re(iK)`.
    pub fn re_ik(&self) -> f64 {
        (Complex64::i() * self.k).re
    }
}

/// `Z2, Z3, Z'_1, Z'_ij, c_ij, K, rho` from the projector and the quadratic profiles.
pub fn compute_coefficients(proj: &ProjectorData, q: &QuadraticProfiles, fgr: f64) -> NormalFormCoefficients {
    let ju = proj.u.j();
    let uju = proj.uju();
    let z2 = pair_inner(&q.n2.to_complex(), &ju) / uju;
    let z3 = pair_inner(&q.n3.to_complex(), &ju) / uju;
    let z1 = q.n2.to_complex().scale(Complex64::new(2.0, 0.0) / uju);
    let jz1 = z1.j();
    let z30 = pair_inner(&q.a20, &jz1);
    let z21 = pair_inner(&q.a11.axpy(Complex64::new(1.0, 0.0), &q.a20), &jz1);
    let z03 = pair_inner(&q.a02, &jz1);
    let z12 = pair_inner(&q.a02.axpy(Complex64::new(1.0, 0.0), &q.a11), &jz1);
    let mu = proj.mu;
    let i = Complex64::i();
    let c20 = i / mu * z2;
    let c11 = -2.0 * i / mu * z2;
    let c02 = -i / (3.0 * mu) * z2;
    let ik = 3.0 * z3 + z21 + (4.0 * c20 - c11 - 2.0 * c20) * z2;
    let k = ik / i;
    NormalFormCoefficients {
        fgr,
        z2,
        z3,
        z21_prime: z21,
        z30_prime: z30,
        z12_prime: z12,
        z03_prime: z03,
        k,
        rho: k.re / k.im,
        delta: proj.delta,
        mu,
        cij: Cij { c20, c11, c02 },
        z1_prime: z1.pi,
    }
}

/// `Re Z'_21` from the coupling integral: `-(2 pi / delta) theta(2 mu) (fgr / 2)²`.
pub fn re_z21_fgr_route(fgr: f64, delta: f64, mu: f64, m2: f64, theta_c: f64) -> f64 {
    -(2.0 * std::f64::consts::PI / delta) * theta(theta_c, 2.0 * mu, m2) * (0.5 * fgr).powi(2)
}

/// Exponential decay rate of `|a11_1|` fitted where it lies in `[1e-12, 1e-3]` of its peak.
pub fn a11_decay_rate(a11: &ComplexPair) -> Option<f64> {
    let g = a11.grid;
    let peak = a11.psi.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..g.n {
        let r = a11.psi[i].norm() / peak;
        if r < 1e-3 && r > 1e-12 {
            xs.push(g.x(i));
            ys.push(r.ln());
        }
    }
    linear_fit(&xs, &ys).map(|f| -f.slope)
}

/// Everything the normal-form report needs, computed in one pass.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub projector: ProjectorData,
    pub profiles: QuadraticProfiles,
    pub coefficients: NormalFormCoefficients,
    pub fgr_scale: f64,
}

pub fn normal_form(
    op: &LinearizedOperator,
    spectral: &SpectralData,
    potential: &PotentialModel,
    kink: &KinkProfile,
) -> Result<NormalForm> {
    let projector = ProjectorData::from_spectral(spectral)?;
    let fgr = fgr_pipeline(op, spectral, potential, kink)?;
    let scale = fgr_scale(&op.grid, &f2_profile(potential, kink), &spectral.phi1);
    check_fgr(fgr, scale)?;
    let profiles = build_f2_and_aij(&projector, op, spectral, potential, kink)?;
    let coefficients = compute_coefficients(&projector, &profiles, fgr);
    Ok(NormalForm { projector, profiles, coefficients, fgr_scale: scale })
}

/// JSON report `{fgr, Z2, Z3, Z21_prime, K, rho, delta, mu}`, complex numbers as `[re, im]`.
pub fn coefficients_json(c: &NormalFormCoefficients) -> serde_json::Value {
    let cj = |z: Complex64| serde_json::json!([z.re, z.im]);
    serde_json::json!({
        "fgr": c.fgr,
        "Z2": cj(c.z2),
        "Z3": cj(c.z3),
        "Z21_prime": cj(c.z21_prime),
        "Z30_prime": cj(c.z30_prime),
        "Z12_prime": cj(c.z12_prime),
        "Z03_prime": cj(c.z03_prime),
        "K": cj(c.k),
        "rho": c.rho,
        "delta": c.delta,
        "mu": c.mu,
        "c20": cj(c.cij.c20),
        "c11": cj(c.cij.c11),
        "c02": cj(c.cij.c02),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;
    use crate::kink::kink_closed_form;
    use crate::spectral::{assemble, discrete_spectrum_odd};
    use proptest::prelude::*;

    struct Setup {
        op: LinearizedOperator,
        sd: SpectralData,
        p: PotentialModel,
        k: KinkProfile,
    }

    fn gl(l: f64, n: usize) -> Setup {
        let p = PotentialModel::ginzburg_landau();
        let k = kink_closed_form(&p, make_grid(l, n).unwrap()).unwrap();
        let op = assemble(&p, &k).unwrap();
        let sd = discrete_spectrum_odd(&op, None).unwrap();
        Setup { op, sd, p, k }
    }

    #[test]
    fn projector_basics() {
        let s = gl(40.0, 1024);
        let pr = ProjectorData::from_spectral(&s.sd).unwrap();
        assert!((pr.delta - 2.0 * pr.mu).abs() < 1e-12);
        let x = pr.w(Complex64::new(0.3, 0.0));
        let z = pr.z(&x);
        assert!((z - Complex64::new(0.3, 0.0)).norm() < 1e-14);
        let f = pr.pc(&x);
        assert!(f.psi.iter().chain(&f.pi).all(|v| v.abs() < 1e-14));
        // P^d u = u.
        let pu = pr.pd_c(&pr.u);
        for i in 0..pr.grid.n {
            assert!((pu.psi[i] - pr.u.psi[i]).norm() < 1e-14 && (pu.pi[i] - pr.u.pi[i]).norm() < 1e-14);
        }
    }

    fn random_state(grid: OddGrid, seed: &[f64]) -> FieldPair {
        FieldPair::from_fn(
            grid,
            |x| seed[0] * (-(x - seed[1]).powi(2)).exp() + seed[2] * (x * seed[3]).sin() * (-x / 5.0).exp(),
            |x| seed[4] * x * (-(x * seed[5]).powi(2)).exp(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projector_algebra(seed in proptest::collection::vec(0.1f64..3.0, 6)) {
            let s = gl(30.0, 512);
            let pr = ProjectorData::from_spectral(&s.sd).unwrap();
            let x = random_state(pr.grid, &seed);
            let pd = pr.pd(&x);
            let pdpd = pr.pd(&pd);
            let pcpc = pr.pc(&pr.pc(&x));
            let pdpc = pr.pd(&pr.pc(&x));
            let pc = pr.pc(&x);
            let scale = x.psi.iter().chain(&x.pi).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..pr.grid.n {
                prop_assert!((pdpd.psi[i] - pd.psi[i]).abs() < 1e-10 * scale);
                prop_assert!((pdpd.pi[i] - pd.pi[i]).abs() < 1e-10 * scale);
                prop_assert!((pcpc.psi[i] - pc.psi[i]).abs() < 1e-10 * scale);
                prop_assert!((pcpc.pi[i] - pc.pi[i]).abs() < 1e-10 * scale);
                prop_assert!(pdpc.psi[i].abs() < 1e-10 * scale && pdpc.pi[i].abs() < 1e-10 * scale);
            }
            // Complex projector agrees with the real one and is real for real data.
            let pdc = pr.pd_c(&x.to_complex());
            prop_assert!(pdc.max_imag() < 1e-12 * scale);
            for i in 0..pr.grid.n {
                prop_assert!((pdc.psi[i].re - pd.psi[i]).abs() < 1e-12 * scale);
            }
            // Reconstruction X = z u + conj(z) u_bar + f.
            let z = pr.z(&x);
            let back = pr.w(z).axpy(1.0, &pc);
            for i in 0..pr.grid.n {
                prop_assert!((back.psi[i] - x.psi[i]).abs() < 1e-10 * scale);
                prop_assert!((back.pi[i] - x.pi[i]).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn fgr_parity_and_constructed_zero() {
        let s = gl(80.0, 4096);
        let g = s.op.grid;
        let f2 = f2_profile(&s.p, &s.k);
        let wave = continuum_wave(&s.op, 4.0 * s.sd.lambda1_grid).unwrap();
        let half = fgr_integral(&g, &wave.samples, &f2, &s.sd.phi1).unwrap();
        // The integrand is even: full-line sum equals twice the half line.
        let integrand: Vec<f64> = (0..g.n).map(|i| wave.samples[i] * f2[i] * s.sd.phi1[i].powi(2)).collect();
        let full = crate::fields::integrate_even(&g, 0.0, &integrand);
        assert!((full - 2.0 * half).abs() < 1e-14);
        // A "wave" orthogonal to F''(s) phi² gives zero.
        let w: Vec<f64> = (0..g.n).map(|i| f2[i] * s.sd.phi1[i].powi(2)).collect();
        let mut synthetic = wave.samples.clone();
        let c = trapz_half(&g, 0.0, &(0..g.n).map(|i| synthetic[i] * w[i]).collect::<Vec<_>>())
            / trapz_half(&g, 0.0, &(0..g.n).map(|i| w[i] * w[i]).collect::<Vec<_>>());
        for i in 0..g.n {
            synthetic[i] -= c * w[i];
        }
        let zero = fgr_integral(&g, &synthetic, &f2, &s.sd.phi1).unwrap();
        assert!(zero.abs() < 1e-14);
        let scale = fgr_scale(&g, &f2, &s.sd.phi1);
        assert!(matches!(check_fgr(zero, scale), Err(Error::FgrDegenerate(_))));
        assert!(check_fgr(half, scale).is_ok());
    }

    #[test]
    fn gl_coefficients() {
        let s = gl(80.0, 4096);
        let nf = normal_form(&s.op, &s.sd, &s.p, &s.k).unwrap();
        let c = &nf.coefficients;
        assert!(c.fgr.abs() > 0.1);
        assert!(c.z2.re.abs() < 1e-14 && c.z3.re.abs() < 1e-14);
        assert!(c.z21_prime.re < 0.0);
        assert!((c.re_ik() - c.z21_prime.re).abs() < 1e-10);
        assert!(nf.profiles.residual_a20 < 1e-8 && nf.profiles.residual_a11 < 1e-8);
        assert_eq!(nf.profiles.a11.max_imag(), 0.0);
        assert!(a11_decay_rate(&nf.profiles.a11).unwrap() > 0.5);
        // F2 lies in the continuous subspace.
        let f2ju = pair_inner(&nf.profiles.f2, &nf.projector.u.j());
        assert!(f2ju.norm() < 1e-12);
        let theta_c = crate::spectral::calibrate_theta(s.op.grid, 2.0).unwrap();
        let alt = re_z21_fgr_route(c.fgr, c.delta, c.mu, 2.0, theta_c);
        assert!(alt < 0.0 && ((alt - c.z21_prime.re) / alt).abs() < 0.1, "{alt} {}", c.z21_prime.re);
    }

    #[test]
    fn normalization_scaling() {
        let s = gl(60.0, 2048);
        let base = ProjectorData::from_spectral(&s.sd).unwrap();
        let scaled = ProjectorData::new(s.sd.grid, s.sd.phi1.iter().map(|v| 2.0 * v).collect(), s.sd.mu).unwrap();
        let q1 = build_f2_and_aij(&base, &s.op, &s.sd, &s.p, &s.k).unwrap();
        let q2 = build_f2_and_aij(&scaled, &s.op, &s.sd, &s.p, &s.k).unwrap();
        let c1 = compute_coefficients(&base, &q1, 1.0);
        let c2 = compute_coefficients(&scaled, &q2, 1.0);
        let rel = |a: Complex64, b: Complex64| (a - b).norm() / b.norm();
        assert!((scaled.delta / base.delta - 4.0).abs() < 1e-12);
        assert!(rel(c2.z2, 2.0 * c1.z2) < 1e-10);
        assert!(rel(c2.z3, 4.0 * c1.z3) < 1e-10);
        assert!(rel(c2.z21_prime, 4.0 * c1.z21_prime) < 1e-10);
        assert!(rel(c2.k, 4.0 * c1.k) < 1e-10);
        assert!((c2.rho - c1.rho).abs() < 1e-10 * c1.rho.abs());
    }
}
