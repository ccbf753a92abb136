use epdt_core::criticality::*;
use epdt_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blowup_case() -> SystemParams {
    SystemParams {
        m: 0.1,
        n: 2,
        mu1: 3.0,
        mu2: 0.5,
        nu1sq: 0.0625,
        nu2sq: 0.015625,
        p: 2.1,
        q: 2.2,
        sigma: 1.0,
    }
}

fn negative_m_case() -> SystemParams {
    SystemParams {
        m: -0.6,
        n: 3,
        mu1: 2.0,
        mu2: 1.8,
        nu1sq: 0.015625,
        nu2sq: 0.0625,
        p: 2.3,
        q: 2.7,
        sigma: 1.0,
    }
}

fn high_regularity_case() -> SystemParams {
    SystemParams {
        m: 0.4,
        n: 3,
        mu1: 15.0,
        mu2: 8.7,
        nu1sq: 36.0,
        nu2sq: 0.0625,
        p: 2.5,
        q: 2.5,
        sigma: 1.1,
    }
}

fn p_below_case() -> SystemParams {
    SystemParams {
        m: 0.3,
        n: 4,
        mu1: 20.0,
        mu2: 9.0,
        nu1sq: 72.25,
        nu2sq: 1.0,
        p: 2.1,
        q: 2.2,
        sigma: 1.4,
    }
}

#[test]
fn blow_up_example_constants() {
    let c = derive_constants(&blowup_case()).unwrap();
    assert!((c.delta1 - 3.75).abs() < 1e-12);
    assert!((c.delta2 - 0.1875).abs() < 1e-12);
    assert!((c.beta1 - (2.0 - 15f64.sqrt() / 4.0)).abs() < 1e-12);
    assert!((c.beta2 - (0.75 - 3f64.sqrt() / 8.0)).abs() < 1e-12);
    assert!((c.gamma_m - 0.017).abs() < 1e-3, "{}", c.gamma_m);
    let cl = classify(&blowup_case()).unwrap();
    assert_eq!(cl.verdict, Verdict::BlowUp);
    assert_eq!(cl.satisfied_theorem, Some(Regime::BlowUp));
}

#[test]
fn negative_m_example() {
    let p = negative_m_case();
    let c = derive_constants(&p).unwrap();
    assert!((c.delta1 - 15.0 / 16.0).abs() < 1e-12);
    assert!((c.delta2 - 0.39).abs() < 1e-12);
    assert!((c.gamma_m - 0.066).abs() < 1e-3, "{}", c.gamma_m);
    let a = (1.0 + c.beta1) / (2.0 * p.m + 1.0 + c.beta2);
    let b = (1.0 + c.beta2) / (2.0 * p.m + 1.0 + c.beta1);
    assert!((a - 2.271).abs() < 5e-3, "{a}");
    assert!((b - 2.559).abs() < 5e-3, "{b}");
    assert_eq!(classify(&p).unwrap().verdict, Verdict::BlowUp);
}

#[test]
fn high_regularity_example() {
    let p = high_regularity_case();
    let c = derive_constants(&p).unwrap();
    assert!((c.delta1 - 52.0).abs() < 1e-12);
    assert!((c.delta2 - 59.04).abs() < 1e-10);
    assert!((c.sigma_threshold1 - 34.5744).abs() <= 1e-9 * 34.5744);
    assert!((c.p_tilde - 2.28).abs() < 0.01);
    assert!((c.q_tilde - 0.82).abs() < 0.01);
    let cl = classify(&p).unwrap();
    assert_eq!(cl.verdict, Verdict::GlobalExistence);
    assert_eq!(cl.satisfied_theorem, Some(Regime::HighBothAbove));
}

#[test]
fn p_below_example() {
    let p = p_below_case();
    let c = derive_constants(&p).unwrap();
    assert!((c.p_tilde - 2.339).abs() < 5e-3);
    assert!((c.q_tilde - 0.7007).abs() < 5e-3);
    let lhs = (p.q + 1.0) / (p.p * p.q - 1.0);
    let rhs = (p.scaled_dim() + c.beta2 - 1.0) / 2.0;
    assert!((lhs - 0.884).abs() < 5e-3);
    assert!((rhs - 2.6635).abs() < 5e-3);
    let cl = classify(&p).unwrap();
    assert_eq!(cl.verdict, Verdict::GlobalExistence);
    assert_eq!(cl.satisfied_theorem, Some(Regime::HighPBelow));
    assert!(c.alpha1 > 0.0 && c.alpha2 == 0.0);
}

#[test]
fn massless_beta() {
    assert_eq!(delta(3.0, 0.0), 4.0);
    assert_eq!(beta(3.0, 4.0), 1.0);
}

#[test]
fn keycon_violation_is_silent() {
    let c = derive_constants(&blowup_case()).unwrap();
    let p_floor = (1.0 + c.beta1) / (2.0 * 0.1 + 1.0 + c.beta2);
    let params = SystemParams {
        p: 1.0 + 0.5 * (p_floor - 1.0),
        ..blowup_case()
    };
    let g = derive_constants(&params).unwrap().gamma_m;
    assert!(g >= 0.0);
    let cl = classify(&params).unwrap();
    assert_eq!(cl.verdict, Verdict::TheorySilent);
    assert!(cl.reasons.iter().any(|r| !r.holds));
}

#[test]
fn non_positive_delta_rejected() {
    let mut p = blowup_case();
    p.mu1 = 1.0;
    assert!(matches!(
        derive_constants(&p),
        Err(Error::NonPositiveDelta { index: 1, .. })
    ));
    assert!(matches!(classify(&p), Err(Error::NonPositiveDelta { .. })));
}

#[test]
fn invalid_params_rejected() {
    let mut p = blowup_case();
    p.p = 1.0;
    assert!(p.validate().is_err());
    let mut p = blowup_case();
    p.m = -1.0;
    assert!(p.validate().is_err());
}

#[test]
fn degenerate_denominator() {
    // a + beta2 - 1 <= 0 with a small scaled dimension and beta2 near 0.
    let err = tilde_exponents(0.5, 1.0, 0.2);
    assert!(matches!(err, Err(Error::DegenerateDenominator { .. })));
}

#[test]
fn log_flag_at_threshold() {
    // delta = ((m+1)(n+2 sigma-1))^2 = 16 for m=0, n=1, sigma=2; mu=5 gives 16.
    let p = SystemParams {
        m: 0.0,
        n: 1,
        mu1: 5.0,
        mu2: 3.0,
        nu1sq: 0.0,
        nu2sq: 0.0,
        p: 3.0,
        q: 3.0,
        sigma: 2.0,
    };
    let c = derive_constants(&p).unwrap();
    assert!(c.log_flag1);
    assert!(!c.log_flag2);
    assert!((c.ell(1, std::f64::consts::E) - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(c.ell(2, 10.0), 1.0);
}

#[test]
fn alpha_epsilon_branch() {
    let mut p = p_below_case();
    let c = derive_constants(&p).unwrap();
    p.p = c.p_tilde;
    let c2 = derive_constants_with_epsilon(&p, 1e-4).unwrap();
    assert_eq!(c2.alpha1, 1e-4);
}

fn random_params(rng: &mut ChaCha8Rng) -> Option<SystemParams> {
    let m = rng.gen_range(-0.9..2.0);
    let n = rng.gen_range(1..=4u32);
    let mu1 = rng.gen_range(0.0..12.0);
    let mu2 = rng.gen_range(0.0..12.0);
    let nu1sq: f64 = rng.gen_range(0.0..4.0);
    let nu2sq: f64 = rng.gen_range(0.0..4.0);
    let p = SystemParams {
        m,
        n,
        mu1,
        mu2,
        nu1sq,
        nu2sq,
        p: 2.0,
        q: 2.0,
        sigma: 1.0,
    };
    let (d1, d2) = (p.delta1(), p.delta2());
    if d1 <= 0.0 || d2 <= 0.0 {
        return None;
    }
    let a = p.scaled_dim();
    let (b1, b2) = (beta(mu1, d1), beta(mu2, d2));
    if a + b1 - 1.0 <= 1e-3 || a + b2 - 1.0 <= 1e-3 {
        return None;
    }
    Some(p)
}

#[test]
fn corner_identity_and_implication() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut draws = 0;
    let mut pairs = 0;
    let start = std::time::Instant::now();
    while draws < 1000 {
        let Some(params) = random_params(&mut rng) else {
            continue;
        };
        let c = derive_constants(&params).unwrap();
        if c.p_tilde * c.q_tilde <= 1.0 {
            continue;
        }
        draws += 1;
        let g = gamma_m(c.p_tilde, c.q_tilde, &c, params.n, params.m);
        let scale = 1.0 + g.first.abs() + g.second.abs();
        assert!(g.value.abs() <= 1e-10 * scale, "corner {:?} {params:?}", g);
        for _ in 0..10 {
            let lo_p = 1.0 + 1e-6;
            if c.p_tilde <= lo_p || c.q_tilde <= lo_p {
                break;
            }
            let p = rng.gen_range(lo_p..=c.p_tilde);
            let q = rng.gen_range(lo_p..=c.q_tilde);
            if p * q <= 1.0 {
                continue;
            }
            pairs += 1;
            let g = gamma_m(p, q, &c, params.n, params.m);
            assert!(g.value >= -1e-12, "imply {p} {q} {:?}", g);
        }
    }
    assert!(pairs >= 1000, "only {pairs} pairs");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn implication_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pairs = 0;
    while pairs < 10_000 {
        let Some(params) = random_params(&mut rng) else {
            continue;
        };
        let c = derive_constants(&params).unwrap();
        if c.p_tilde <= 1.0 + 1e-6 || c.q_tilde <= 1.0 + 1e-6 {
            continue;
        }
        let p = rng.gen_range(1.0 + 1e-6..=c.p_tilde);
        let q = rng.gen_range(1.0 + 1e-6..=c.q_tilde);
        if p * q <= 1.0 + 1e-9 {
            continue;
        }
        pairs += 1;
        assert!(gamma_m(p, q, &c, params.n, params.m).value >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn swap_symmetry(
        m in -0.9f64..2.0, n in 1u32..4, mu1 in 0.0f64..10.0, mu2 in 0.0f64..10.0,
        nu1sq in 0.0f64..2.0, nu2sq in 0.0f64..2.0, p in 1.05f64..6.0, q in 1.05f64..6.0,
    ) {
        let params = SystemParams { m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma: 1.0 };
        let c = derive_constants(&params);
        let s = derive_constants(&params.swapped());
        if let (Ok(c), Ok(s)) = (c, s) {
            let g = gamma_m(p, q, &c, n, m);
            let h = gamma_m(q, p, &s, n, m);
            prop_assert!((g.first - h.second).abs() <= 1e-12 * (1.0 + g.first.abs()));
            prop_assert!((g.second - h.first).abs() <= 1e-12 * (1.0 + g.second.abs()));
            prop_assert!((c.p_tilde - s.q_tilde).abs() <= 1e-12 * c.p_tilde.abs());
            prop_assert!((c.q_tilde - s.p_tilde).abs() <= 1e-12 * c.q_tilde.abs());
        }
    }

    #[test]
    fn gamma_strictly_decreasing(
        m in -0.9f64..2.0, n in 1u32..4, mu1 in 0.0f64..10.0, mu2 in 0.0f64..10.0,
        p in 1.05f64..6.0, q in 1.05f64..6.0,
    ) {
        let params = SystemParams { m, n, mu1, mu2, nu1sq: 0.0, nu2sq: 0.0, p, q, sigma: 1.0 };
        if let Ok(c) = derive_constants(&params) {
            let h = 1e-4;
            let g = gamma_m(p, q, &c, n, m).value;
            prop_assert!(gamma_m(p + h, q, &c, n, m).value < g);
            prop_assert!(gamma_m(p, q + h, &c, n, m).value < g);
        }
    }

    #[test]
    fn verdicts_exclusive(
        m in -0.9f64..2.0, n in 1u32..5, mu1 in 0.0f64..40.0, mu2 in 0.0f64..40.0,
        nu1sq in 0.0f64..80.0, nu2sq in 0.0f64..80.0, p in 1.01f64..8.0, q in 1.01f64..8.0,
        sigma in 0.1f64..3.0,
    ) {
        let params = SystemParams { m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma };
        if let Ok(cl) = classify(&params) {
            match cl.verdict {
                Verdict::BlowUp => prop_assert_eq!(cl.satisfied_theorem, Some(Regime::BlowUp)),
                Verdict::GlobalExistence => {
                    prop_assert!(cl.satisfied_theorem.is_some());
                    prop_assert!(cl.satisfied_theorem != Some(Regime::BlowUp));
                }
                Verdict::TheorySilent => prop_assert!(cl.satisfied_theorem.is_none()),
            }
        }
    }

    #[test]
    fn classify_reports_gamma(
        mu1 in 1.5f64..10.0, mu2 in 1.5f64..10.0, p in 1.1f64..5.0, q in 1.1f64..5.0,
    ) {
        let params = SystemParams { m: 0.2, n: 2, mu1, mu2, nu1sq: 0.0, nu2sq: 0.0, p, q, sigma: 1.0 };
        let cl = classify(&params).unwrap();
        let c = derive_constants(&params).unwrap();
        prop_assert!((cl.gamma_m - c.gamma_m).abs() < 1e-15);
    }
}

#[test]
fn symmetric_rectangle_and_corner_on_contour() {
    let base = SystemParams {
        m: 0.0,
        n: 1,
        mu1: 2.0,
        mu2: 2.0,
        nu1sq: 0.0,
        nu2sq: 0.0,
        p: 2.0,
        q: 2.0,
        sigma: 1.0,
    };
    let c = derive_constants(&base).unwrap();
    assert!((c.p_tilde - c.q_tilde).abs() < 1e-15);
    let map = region_map(&base, (1.05, 6.0), (1.05, 6.0), 40).unwrap();
    let (pt, qt) = map.corner.unwrap();
    let g = gamma_m(pt, qt, &c, 1, 0.0);
    assert!(g.value.abs() < 1e-12);
    // The rectangle below the corner lies inside the blow-up region.
    for cell in &map.cells {
        if cell.p <= pt && cell.q <= qt {
            let cl = cell.class.as_ref().unwrap();
            assert_eq!(cl.verdict, Verdict::BlowUp, "{} {}", cell.p, cell.q);
        }
    }
    // On the diagonal the Gamma = 0 crossing is the corner.
    let above = gamma_m(pt * 1.001, qt * 1.001, &c, 1, 0.0).value;
    let below = gamma_m(pt * 0.999, qt * 0.999, &c, 1, 0.0).value;
    assert!(above < 0.0 && below > 0.0);
}

#[test]
fn unequal_betas_shift_the_corner() {
    let base = SystemParams {
        m: 0.1,
        n: 2,
        mu1: 4.0,
        mu2: 4.0,
        nu1sq: 0.5,
        nu2sq: 0.5,
        p: 2.0,
        q: 2.0,
        sigma: 1.0,
    };
    let c0 = derive_constants(&base).unwrap();
    let shifted = SystemParams {
        nu2sq: 1.5,
        ..base
    };
    let c1 = derive_constants(&shifted).unwrap();
    assert!(c1.beta2 > c0.beta2);
    // Relabel so that the first beta exceeds the second.
    let swapped = shifted.swapped();
    let c2 = derive_constants(&swapped).unwrap();
    assert!(c2.beta1 > c2.beta2);
    assert!(c2.p_tilde > c0.p_tilde);
    assert!(c2.q_tilde < c0.q_tilde);
}

#[test]
fn small_map_inside_blow_up() {
    let map = region_map(&blowup_case(), (2.0, 2.1), (2.0, 2.2), 2).unwrap();
    assert_eq!(map.cells.len(), 4);
    for cell in &map.cells {
        assert_eq!(cell.class.as_ref().unwrap().verdict, Verdict::BlowUp);
    }
    assert!((map.cell(1, 0).p - 2.1).abs() < 1e-15);
    assert_eq!(map.cell(1, 0).q, 2.0);
}

#[test]
fn map_keeps_going_past_bad_cells() {
    let mut base = blowup_case();
    base.mu1 = 1.0;
    let map = region_map(&base, (1.5, 3.0), (1.5, 3.0), 3).unwrap();
    assert!(map.cells.iter().all(|c| c.class.is_err()));
    assert!(map.corner.is_none());
    assert!(region_map(&blowup_case(), (0.5, 3.0), (1.5, 3.0), 3).is_err());
    assert!(region_map(&blowup_case(), (1.5, 3.0), (1.5, 3.0), 1).is_err());
}

#[test]
fn feasibility_examples() {
    for s in [1.1, 2.0, 7.0] {
        assert!(matches!(
            exponent_feasibility(2, 1.0, s, 1).unwrap(),
            Feasibility::Feasible { .. }
        ));
    }
    let s = 1.0 + 2.0 / (3.0 - 2.0 * 1.1);
    assert!(matches!(
        exponent_feasibility(3, 1.1, s, 1).unwrap(),
        Feasibility::Feasible { .. }
    ));
    assert_eq!(exponent_feasibility(4, 1.0, 4.0, 1).unwrap(), Feasibility::Infeasible);
    assert!(matches!(exponent_feasibility(3, 1.0, 2.0, 3), Err(Error::InvalidOrder(3))));
}

#[test]
fn feasibility_matches_scan() {
    // Brute-force scan of 1/r_a at step 1e-4.
    let scan = |n: u32, sigma: f64, s: f64, order: u32| {
        let nf = n as f64;
        let xa_lo = if nf > 2.0 * sigma { (nf - 2.0 * sigma) / (2.0 * nf) } else { 1e-4 };
        let yb_lo = if nf > 2.0 * order as f64 {
            (nf - 2.0 * order as f64) / (2.0 * nf)
        } else {
            1e-9
        };
        let mut x = xa_lo;
        while x <= 0.5 + 1e-12 {
            let y = 0.5 - (s - 1.0) * x;
            if y >= yb_lo - 1e-12 && y <= 0.5 {
                return true;
            }
            x += 1e-4;
        }
        false
    };
    for n in 1..=5 {
        for &sigma in &[0.5, 1.0, 1.4, 2.0] {
            for &s in &[1.2, 1.8, 2.5, 3.5, 5.0] {
                for order in 1..=2 {
                    let f = exponent_feasibility(n, sigma, s, order).unwrap();
                    let ok = matches!(f, Feasibility::Feasible { .. });
                    assert_eq!(ok, scan(n, sigma, s, order), "{n} {sigma} {s} {order}");
                    if let Feasibility::Feasible { r_a, r_b } = f {
                        assert!(((s - 1.0) / r_a + 1.0 / r_b - 0.5).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn derived_constants_serialize_flat() {
    let c = derive_constants(&blowup_case()).unwrap();
    let v: serde_json::Value = serde_json::to_value(c).unwrap();
    for key in [
        "delta1", "delta2", "beta1", "beta2", "gamma_m", "p_tilde", "q_tilde", "alpha1",
        "alpha2", "sigma_threshold1", "sigma_threshold2", "log_flag1", "log_flag2",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
