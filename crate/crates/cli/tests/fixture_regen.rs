//! Regenerates `fixtures/u3_zero_coupling.json`: a double well whose resonance coupling vanishes.
//!
//! Run with `cargo test -p kinklab --release --test fixture_regen -- --ignored`.

use kinklab_core::fields::make_grid;
use kinklab_core::kink::kink_quadrature;
use kinklab_core::normalform::{f2_profile, fgr_pipeline, fgr_scale, FGR_REL_THRESHOLD};
use kinklab_core::potential::{PotentialModel, Table};
use kinklab_core::spectral::{assemble, discrete_spectrum_odd};

const BUMP_CENTER: f64 = 0.6;
const BUMP_WIDTH: f64 = 0.1;

/// Ginzburg-Landau plus `c exp(-((psi^2 - r^2) / w)^2)`, tabulated on [0, 2].
fn family(c: f64) -> PotentialModel {
    let n = 4001;
    let psi: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
    let r2 = BUMP_CENTER * BUMP_CENTER;
    let u = psi
        .iter()
        .map(|&p| 0.25 * (1.0 - p * p).powi(2) + c * (-((p * p - r2) / BUMP_WIDTH).powi(2)).exp())
        .collect();
    let t = Table { psi, u };
    let m2 = PotentialModel::tabulated(t.clone(), 1.0, 2.0).unwrap().eval(1.0, 2);
    PotentialModel::tabulated(t, 1.0, m2).unwrap()
}

fn relative_fgr(p: &PotentialModel) -> f64 {
    let g = make_grid(80.0, 4096).unwrap();
    let k = kink_quadrature(p, g).unwrap();
    let op = assemble(p, &k).unwrap();
    let sd = discrete_spectrum_odd(&op, None).unwrap();
    assert!(4.0 * sd.lambda1 > p.m2);
    let f = fgr_pipeline(&op, &sd, p, &k).unwrap();
    f / fgr_scale(&g, &f2_profile(p, &k), &sd.phi1)
}

#[test]
#[ignore]
fn regenerate_zero_coupling_fixture() {
    let (mut lo, mut hi) = (0.02, 0.03);
    let (mut flo, fhi) = (relative_fgr(&family(lo)), relative_fgr(&family(hi)));
    assert!(flo * fhi < 0.0);
    let mut c = lo;
    for _ in 0..40 {
        c = 0.5 * (lo + hi);
        let f = relative_fgr(&family(c));
        println!("c = {c:.12} fgr/scale = {f:e}");
        if f.abs() < 0.5 * FGR_REL_THRESHOLD {
            break;
        }
        if f * flo > 0.0 {
            lo = c;
            flo = f;
        } else {
            hi = c;
        }
    }
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/u3_zero_coupling.json");
    std::fs::write(path, family(c).to_json().unwrap()).unwrap();
}
