//! Odd states on a half-line grid.
//!
//! Values are stored at `x_j = j dx`, `j = 1..=N`. The node at the origin is
//! implicit and always zero, and the value at `-x` is the negative of the
//! value at `x`. Full-line integrals are computed as twice the half-line
//! trapezoid. Difference stencils use zero ghost values beyond the last node.

use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialModel;

/// Uniform half-line grid encoding odd functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddGrid {
    pub l: f64,
    pub n: usize,
    pub dx: f64,
}

pub fn make_grid(l: f64, n: usize) -> Result<OddGrid> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::InvalidArgument(format!("grid length must be positive, got {l}")));
    }
    if n < 16 {
        return Err(Error::InvalidArgument(format!("grid needs at least 16 nodes, got {n}")));
    }
    Ok(OddGrid { l, n, dx: l / n as f64 })
}

impl OddGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        make_grid(l, n)
    }

    /// Position of storage index `i` (node `i + 1`).
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Half-line trapezoid weights for the stored nodes (the origin term is
    /// supplied separately where it is nonzero).
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    /// Index of the last node with `x <= x_max`.
    pub fn index_at_or_below(&self, x_max: f64) -> usize {
        let k = (x_max / self.dx).floor() as isize - 1;
        k.clamp(0, self.n as isize - 1) as usize
    }

    /// Same grid with twice the resolution.
    pub fn refined(&self) -> OddGrid {
        OddGrid { l: self.l, n: 2 * self.n, dx: self.dx / 2.0 }
    }
}

/// Half-line trapezoid of `f`, with `f0` the integrand at the origin.
pub fn trapz_half(grid: &OddGrid, f0: f64, f: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), grid.n);
    let mut acc = 0.5 * grid.dx * f0;
    for (i, v) in f.iter().enumerate() {
        acc += grid.weight(i) * v;
    }
    acc
}

/// Full-line integral of an even integrand given on the half line.
pub fn integrate_even(grid: &OddGrid, f0: f64, f: &[f64]) -> f64 {
    2.0 * trapz_half(grid, f0, f)
}

/// Full-line real inner product of two odd functions.
pub fn inner(grid: &OddGrid, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.n {
        acc += grid.weight(i) * a[i] * b[i];
    }
    2.0 * acc
}

/// Full-line Hermitian inner product, conjugate-linear in the second slot.
pub fn inner_c(grid: &OddGrid, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..grid.n {
        acc += a[i] * b[i].conj() * grid.weight(i);
    }
    acc * 2.0
}

/// Centered first difference of an odd function; the value at the origin is
/// `f_1 / dx` by oddness.
pub fn d1(grid: &OddGrid, f: &[f64]) -> (f64, Vec<f64>) {
    let n = grid.n;
    let inv = 0.5 / grid.dx;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let left = if i == 0 { 0.0 } else { f[i - 1] };
        let right = if i + 1 == n { 0.0 } else { f[i + 1] };
        out[i] = (right - left) * inv;
    }
    (f[0] / grid.dx, out)
}

/// Three-point second difference with zero ghosts at both ends.
pub fn d2(grid: &OddGrid, f: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let inv = 1.0 / (grid.dx * grid.dx);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let left = if i == 0 { 0.0 } else { f[i - 1] };
        let right = if i + 1 == n { 0.0 } else { f[i + 1] };
        out[i] = (right - 2.0 * f[i] + left) * inv;
    }
    out
}

/// Pair of odd grid functions `(psi, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub grid: OddGrid,
    pub psi: Vec<f64>,
    pub pi: Vec<f64>,
}

impl FieldPair {
    pub fn zeros(grid: OddGrid) -> Self {
        FieldPair { grid, psi: vec![0.0; grid.n], pi: vec![0.0; grid.n] }
    }

    pub fn new(grid: OddGrid, psi: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if psi.len() != grid.n || pi.len() != grid.n {
            return Err(Error::InvalidArgument(format!(
                "field lengths {} / {} do not match grid size {}",
                psi.len(),
                pi.len(),
                grid.n
            )));
        }
        Ok(FieldPair { grid, psi, pi })
    }

    /// Sample closures at the grid nodes.
    pub fn from_fn(grid: OddGrid, psi: impl Fn(f64) -> f64, pi: impl Fn(f64) -> f64) -> Self {
        let xs = grid.nodes();
        FieldPair {
            grid,
            psi: xs.iter().map(|&x| psi(x)).collect(),
            pi: xs.iter().map(|&x| pi(x)).collect(),
        }
    }

    pub fn axpy(&self, alpha: f64, other: &FieldPair) -> FieldPair {
        FieldPair {
            grid: self.grid,
            psi: self.psi.iter().zip(&other.psi).map(|(a, b)| a + alpha * b).collect(),
            pi: self.pi.iter().zip(&other.pi).map(|(a, b)| a + alpha * b).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> FieldPair {
        FieldPair {
            grid: self.grid,
            psi: self.psi.iter().map(|a| alpha * a).collect(),
            pi: self.pi.iter().map(|a| alpha * a).collect(),
        }
    }

    pub fn sub(&self, other: &FieldPair) -> FieldPair {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().chain(&self.pi).all(|v| v.is_finite())
    }

    pub fn to_complex(&self) -> ComplexPair {
        ComplexPair {
            grid: self.grid,
            psi: self.psi.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            pi: self.pi.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W, time: &str) -> Result<()> {
        write_field_csv(w, &self.grid, time, &self.psi, &self.pi)
    }

    pub fn save_csv(&self, path: &Path, time: &str) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), time)
    }

    pub fn load_csv(path: &Path) -> Result<(FieldPair, String)> {
        let f = std::fs::File::open(path)?;
        read_field_csv(std::io::BufReader::new(f))
    }
}

/// Complex-valued odd pair, used for resolvent outputs and eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPair {
    pub grid: OddGrid,
    pub psi: Vec<Complex64>,
    pub pi: Vec<Complex64>,
}

impl ComplexPair {
    pub fn zeros(grid: OddGrid) -> Self {
        let z = Complex64::new(0.0, 0.0);
        ComplexPair { grid, psi: vec![z; grid.n], pi: vec![z; grid.n] }
    }

    pub fn conj(&self) -> ComplexPair {
        ComplexPair {
            grid: self.grid,
            psi: self.psi.iter().map(|v| v.conj()).collect(),
            pi: self.pi.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> ComplexPair {
        ComplexPair {
            grid: self.grid,
            psi: self.psi.iter().map(|v| v * c).collect(),
            pi: self.pi.iter().map(|v| v * c).collect(),
        }
    }

    pub fn axpy(&self, c: Complex64, other: &ComplexPair) -> ComplexPair {
        ComplexPair {
            grid: self.grid,
            psi: self.psi.iter().zip(&other.psi).map(|(a, b)| a + c * b).collect(),
            pi: self.pi.iter().zip(&other.pi).map(|(a, b)| a + c * b).collect(),
        }
    }

    /// Symplectic map `j (a, b) = (-b, a)`.
    pub fn j(&self) -> ComplexPair {
        ComplexPair {
            grid: self.grid,
            psi: self.pi.iter().map(|v| -v).collect(),
            pi: self.psi.clone(),
        }
    }

    pub fn re(&self) -> FieldPair {
        FieldPair {
            grid: self.grid,
            psi: self.psi.iter().map(|v| v.re).collect(),
            pi: self.pi.iter().map(|v| v.re).collect(),
        }
    }

    pub fn max_imag(&self) -> f64 {
        self.psi.iter().chain(&self.pi).fold(0.0, |m, v| m.max(v.im.abs()))
    }
}

/// Hermitian pair product `<a, b> = <a.psi, b.psi> + <a.pi, b.pi>`.
pub fn pair_inner(a: &ComplexPair, b: &ComplexPair) -> Complex64 {
    inner_c(&a.grid, &a.psi, &b.psi) + inner_c(&a.grid, &a.pi, &b.pi)
}

/// Norm families used by the decay diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSpec {
    /// `|| (1+|x|)^s psi || + || (1+|x|)^s psi' || + || (1+|x|)^s pi ||` in L².
    ESigma { sigma: f64 },
    /// As `ESigma` with weight exponent `-sigma`.
    EMinusSigma { sigma: f64 },
    /// L¹ norms of `psi, psi', psi''` and `pi, pi'`.
    W,
    LinfFirstComponent,
    /// `|| (1+|x|)^(sigma+nu) psi ||` in L².
    L2Weighted { sigma: f64, nu: f64 },
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: f64| !s.is_finite() || s < 0.0;
        match *self {
            NormSpec::ESigma { sigma } | NormSpec::EMinusSigma { sigma } if bad(sigma) => {
                Err(Error::InvalidArgument(format!("weight exponent must be >= 0, got {sigma}")))
            }
            NormSpec::L2Weighted { sigma, nu } if bad(sigma) || bad(nu) => Err(
                Error::InvalidArgument(format!("weighted L2 needs sigma, nu >= 0, got {sigma}, {nu}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short stable label used for trace columns.
    pub fn label(&self) -> String {
        match *self {
            NormSpec::ESigma { sigma } => format!("E_{sigma}"),
            NormSpec::EMinusSigma { sigma } => format!("E_-{sigma}"),
            NormSpec::W => "W".to_string(),
            NormSpec::LinfFirstComponent => "Linf_psi".to_string(),
            NormSpec::L2Weighted { sigma, nu } => format!("L2_{}", sigma + nu),
        }
    }
}

fn weighted_l2(grid: &OddGrid, f0: f64, f: &[f64], s: f64) -> f64 {
    let g: Vec<f64> = f
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 + grid.x(i)).powf(2.0 * s) * v * v)
        .collect();
    integrate_even(grid, f0 * f0, &g).sqrt()
}

fn l1(grid: &OddGrid, f0: f64, f: &[f64]) -> f64 {
    let g: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    integrate_even(grid, f0.abs(), &g)
}

fn e_norm(grid: &OddGrid, psi: &[f64], pi: &[f64], s: f64) -> f64 {
    let (dpsi0, dpsi) = d1(grid, psi);
    weighted_l2(grid, 0.0, psi, s) + weighted_l2(grid, dpsi0, &dpsi, s) + weighted_l2(grid, 0.0, pi, s)
}

/// Norm of an odd pair.
pub fn norm(state: &FieldPair, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    norm_parts(&state.grid, &state.psi, &state.pi, spec)
}

/// Norm evaluated on raw component slices.
pub fn norm_parts(grid: &OddGrid, psi: &[f64], pi: &[f64], spec: &NormSpec) -> Result<f64> {
    Ok(match *spec {
        NormSpec::ESigma { sigma } => e_norm(grid, psi, pi, sigma),
        NormSpec::EMinusSigma { sigma } => e_norm(grid, psi, pi, -sigma),
        NormSpec::W => {
            let (dpsi0, dpsi) = d1(grid, psi);
            let ddpsi = d2(grid, psi);
            let (dpi0, dpi) = d1(grid, pi);
            l1(grid, 0.0, psi) + l1(grid, dpsi0, &dpsi) + l1(grid, 0.0, &ddpsi) + l1(grid, 0.0, pi) + l1(grid, dpi0, &dpi)
        }
        NormSpec::LinfFirstComponent => psi.iter().fold(0.0, |m, v| m.max(v.abs())),
        NormSpec::L2Weighted { sigma, nu } => weighted_l2(grid, 0.0, psi, sigma + nu),
    })
}

/// Energy density `pi²/2 + (psi')²/2 + U(psi)` of the full field, with the
/// gradient evaluated on the staggered links.
pub fn energy_density(state_full: &FieldPair, potential: &PotentialModel) -> (f64, Vec<f64>) {
    let g = &state_full.grid;
    let n = g.n;
    let mut e = vec![0.0; n];
    let link = |i: usize| -> f64 {
        // Link between node i and node i+1 in 0-based node numbering (node 0 is the origin).
        let left = if i == 0 { 0.0 } else { state_full.psi[i - 1] };
        let right = state_full.psi[i];
        let d = (right - left) / g.dx;
        0.5 * d * d
    };
    for i in 0..n {
        let psi = state_full.psi[i];
        let pi = state_full.pi[i];
        // Average of the two adjacent links keeps a node-centred density.
        let grad = if i + 1 < n { 0.5 * (link(i) + link(i + 1)) } else { 0.5 * link(i) };
        e[i] = 0.5 * pi * pi + grad + potential.u(psi);
    }
    let e0 = link(0) + potential.u(0.0);
    (e0, e)
}

/// Discrete Hamiltonian of the full field over the full line.
pub fn energy(state_full: &FieldPair, potential: &PotentialModel) -> f64 {
    let g = &state_full.grid;
    let mut kin = 0.0;
    let mut pot = 0.5 * g.dx * potential.u(0.0);
    for i in 0..g.n {
        let w = g.weight(i);
        kin += w * 0.5 * state_full.pi[i] * state_full.pi[i];
        pot += w * potential.u(state_full.psi[i]);
    }
    let mut grad = 0.0;
    let mut prev = 0.0;
    for &v in &state_full.psi {
        let d = v - prev;
        grad += d * d;
        prev = v;
    }
    grad *= 0.5 / g.dx;
    2.0 * (kin + pot + grad)
}

fn write_field_csv<W: Write>(mut w: W, grid: &OddGrid, time: &str, psi: &[f64], pi: &[f64]) -> Result<()> {
    writeln!(w, "# L={} N={} time={}", grid.l, grid.n, time)?;
    writeln!(w, "x,psi,pi")?;
    for i in 0..grid.n {
        writeln!(w, "{:e},{:e},{:e}", grid.x(i), psi[i], pi[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a field CSV written by [`FieldPair::write_csv`]. Returns the pair and
/// the recorded time label.
pub fn read_field_csv<R: BufRead>(mut r: R) -> Result<(FieldPair, String)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let meta = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing '# L= N= time=' header".into()))?;
    let mut l = None;
    let mut n = None;
    let mut time = String::new();
    for tok in meta.split_whitespace() {
        if let Some(v) = tok.strip_prefix("L=") {
            l = v.parse::<f64>().ok();
        } else if let Some(v) = tok.strip_prefix("N=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("time=") {
            time = v.to_string();
        }
    }
    let grid = make_grid(
        l.ok_or_else(|| Error::Parse("header lacks L".into()))?,
        n.ok_or_else(|| Error::Parse("header lacks N".into()))?,
    )?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut psi = Vec::with_capacity(grid.n);
    let mut pi = Vec::with_capacity(grid.n);
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse("short row".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(e.to_string()))
        };
        psi.push(parse(1)?);
        pi.push(parse(2)?);
    }
    Ok((FieldPair::new(grid, psi, pi)?, time))
}
