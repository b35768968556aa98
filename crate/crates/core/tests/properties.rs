//! Randomized checks of the structural invariants across modules.

use kinklab_core::diagnostics::{compute_majorants, extract_modulation, fit_decay, z_longtime_fit};
use kinklab_core::evolve::{evolve_linearized, evolve_nonlinear, EvolutionConfig, Flavor};
use kinklab_core::fields::{make_grid, norm, FieldPair, NormSpec};
use kinklab_core::kink::{kink_closed_form, kink_quadrature};
use kinklab_core::normalform::ProjectorData;
use kinklab_core::potential::{build_perturbed, PotentialModel};
use kinklab_core::spectral::{assemble, discrete_spectrum_odd};
use num_complex::Complex64;
use proptest::prelude::*;

fn bump(x: f64, c: f64, w: f64) -> f64 {
    let r = (x - c) / w;
    if r.abs() < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn e_norm_monotone_in_sigma(a in 0.1f64..2.0, c in 0.0f64..10.0, s1 in 0.0f64..3.0, ds in 0.0f64..2.0) {
        let g = make_grid(30.0, 600).unwrap();
        let st = FieldPair::from_fn(g, |x| a * x * (-(x - c).powi(2) / 4.0).exp(), |x| bump(x, c + 1.0, 2.0));
        let lo = norm(&st, &NormSpec::ESigma { sigma: s1 }).unwrap();
        let hi = norm(&st, &NormSpec::ESigma { sigma: s1 + ds }).unwrap();
        prop_assert!(hi >= lo * (1.0 - 1e-14));
    }

    #[test]
    fn force_is_odd(psi in 0.0f64..1.8, delta in 0.01f64..0.45) {
        for p in [PotentialModel::ginzburg_landau(), build_perturbed(delta).unwrap()] {
            prop_assert!((p.force(psi) + p.force(-psi)).abs() <= 1e-14 * (1.0 + p.force(psi).abs()));
        }
    }

    #[test]
    fn perturbation_shrinks_with_delta(d1 in 0.01f64..0.2, ratio in 1.1f64..2.0) {
        let gl = PotentialModel::ginzburg_landau();
        let gap = |d: f64| {
            let p = build_perturbed(d).unwrap();
            (0..=400).map(|k| 2.0 * k as f64 / 400.0).fold(0.0f64, |m, x| m.max((p.u(x) - gl.u(x)).abs()))
        };
        prop_assert!(gap(d1) <= gap(d1 * ratio));
    }

    #[test]
    fn perturbed_kink_first_integral(delta in 0.02f64..0.3) {
        let p = build_perturbed(delta).unwrap();
        let k = kink_quadrature(&p, make_grid(40.0, 1024).unwrap()).unwrap();
        for (s, sp) in k.s.iter().zip(&k.s_prime) {
            prop_assert!((sp - (2.0 * p.u(*s)).sqrt()).abs() < 1e-10);
        }
        prop_assert!(k.is_monotone());
    }

    #[test]
    fn spectral_conditions_for_small_delta(delta in 0.01f64..0.1) {
        let p = build_perturbed(delta).unwrap();
        let k = kink_quadrature(&p, make_grid(40.0, 1024).unwrap()).unwrap();
        let sd = discrete_spectrum_odd(&assemble(&p, &k).unwrap(), None).unwrap();
        prop_assert!(sd.la1_holds() && sd.la2_holds(), "lambda1 = {}", sd.lambda1);
    }

    #[test]
    fn fit_decay_recovers_exponents(e in -3.0f64..-0.1, c in 0.1f64..10.0) {
        let t: Vec<f64> = (0..300).map(|k| 0.5 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| c * (1.0 + t).powf(e)).collect();
        let f = fit_decay(&t, &v, [10.0, 140.0]).unwrap();
        prop_assert!((f.exponent - e).abs() < 1e-6);
    }

    #[test]
    fn majorant_of_exact_law_is_one(eps in 0.001f64..0.1) {
        let t: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let z: Vec<f64> = t.iter().map(|t| (eps / (1.0 + eps * t)).sqrt()).collect();
        let zeros = vec![0.0; t.len()];
        let m = compute_majorants(&t, &z, &zeros, &zeros, eps, 100.0);
        prop_assert!(m.m1.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn z_law_round_trip(mu in 0.8f64..1.4, k in 0.2f64..0.5, rho in -1.0f64..1.0) {
        let eps = 0.05;
        let t: Vec<f64> = (0..10000).map(|j| j as f64 * 0.1).collect();
        let z: Vec<Complex64> = t
            .iter()
            .map(|&t| {
                let s = 1.0 + k * eps * t;
                0.2 * Complex64::from_polar(s.powf(-0.5), mu * t + rho * s.ln())
            })
            .collect();
        let f = z_longtime_fit(&t, &z, eps, [0.0, 1000.0]).unwrap();
        prop_assert!((f.mu_fit - mu).abs() < 1e-3 && (f.k_fit - k).abs() < 1e-3 && (f.rho_fit - rho).abs() < 1e-3);
    }

    #[test]
    fn nonlinear_energy_conserved(a in 0.02f64..0.1, c in 2.0f64..6.0) {
        let p = PotentialModel::ginzburg_landau();
        let g = make_grid(40.0, 2048).unwrap();
        let kink = kink_closed_form(&p, g).unwrap();
        let st = FieldPair::from_fn(g, |x| a * bump(x, c, 2.0), |x| 0.5 * a * bump(x, c + 1.0, 1.5));
        let rec = evolve_nonlinear(&st, &p, &kink, &EvolutionConfig::new(0.4 * g.dx, 20.0, 100, Flavor::Nonlinear)).unwrap();
        let h0 = kinklab_core::fields::energy(&kink.as_state(), &p) + rec.energy_trace[0];
        let drift = rec.energy_trace.iter().fold(0.0f64, |m, e| m.max((e - rec.energy_trace[0]).abs())) / h0;
        prop_assert!(drift < 1e-6, "{}", drift);
    }

    #[test]
    fn finite_propagation(c in 3.0f64..6.0, w in 2.5f64..3.5) {
        let p = PotentialModel::ginzburg_landau();
        let g = make_grid(40.0, 2048).unwrap();
        let op = assemble(&p, &kink_closed_form(&p, g).unwrap()).unwrap();
        let st = FieldPair::from_fn(g, |x| bump(x, c, w).powi(4), |_| 0.0);
        let cfg = EvolutionConfig::new(0.4 * g.dx, 8.0, 100_000, Flavor::Linearized);
        let last = evolve_linearized(&st, &op, &cfg).unwrap().final_state().clone();
        let tf = cfg.steps() as f64 * cfg.dt;
        for i in 0..g.n {
            if g.x(i) > c + w + tf + 3.0 * g.dx {
                prop_assert!(last.psi[i].abs() < 1e-10 && last.pi[i].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn modulation_partition_reconstructs(a in 0.0f64..0.3, b in -0.3f64..0.3, c in 1.0f64..6.0) {
        let p = PotentialModel::ginzburg_landau();
        let g = make_grid(40.0, 1024).unwrap();
        let op = assemble(&p, &kink_closed_form(&p, g).unwrap()).unwrap();
        let proj = ProjectorData::from_spectral(&discrete_spectrum_odd(&op, None).unwrap()).unwrap();
        let x = proj.w(Complex64::new(a, b)).axpy(1.0, &FieldPair::from_fn(g, |x| 0.1 * bump(x, c, 2.0), |_| 0.0));
        let cfg = EvolutionConfig::new(0.4 * g.dx, 5.0, 50, Flavor::Linearized);
        let rec = evolve_linearized(&x, &op, &cfg).unwrap();
        let tr = extract_modulation(&rec, &proj, &[]).unwrap();
        prop_assert!(tr.reconstruction_error < 1e-10);
    }
}
