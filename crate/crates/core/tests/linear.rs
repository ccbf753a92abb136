use epdt_core::data::DataSpec;
use epdt_core::linear::*;
use epdt_core::quadrature::{geometric_grid, power_law_fit};
use epdt_core::spectral::{Grid, SpectralField};
use epdt_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lp(mu: f64, nu_sq: f64, m: f64) -> LinearParams {
    LinearParams { mu, nu_sq, m }
}

/// Classical RK4 on `u'' + (mu/t) u' + (nu^2/t^2 + t^{2m} k^2) u = 0`,
/// written out independently of the crate's integrators.
fn rk4_mode(k: f64, p: LinearParams, y0: [f64; 2], t0: f64, t1: f64, steps: usize) -> [f64; 2] {
    let f = |t: f64, y: [f64; 2]| {
        [
            y[1],
            -p.mu / t * y[1] - (p.nu_sq / (t * t) + t.powf(2.0 * p.m) * k * k) * y[0],
        ]
    };
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = f(t + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = f(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[test]
fn matches_brute_force_rk4() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let k = rng.gen_range(0.0..4.0);
        let mu = rng.gen_range(0.0..6.0);
        let nu_sq = rng.gen_range(0.0..1.0);
        let m = rng.gen_range(-0.5..1.0);
        let t1 = rng.gen_range(1.5..3.0);
        let p = lp(mu, nu_sq, m);
        let fm = fundamental_pair(k, 1.0, t1, p, 1e-13).unwrap();
        for col in 0..2 {
            let y0 = if col == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let want = rk4_mode(k, p, y0, 1.0, t1, 1_000_000);
            let scale = want[0].abs().max(want[1].abs());
            for row in 0..2 {
                let got = fm.entries[row][col];
                assert!(
                    (got - want[row]).abs() <= 1e-8 * scale,
                    "k {k} mu {mu} nu2 {nu_sq} m {m}: {got} vs {}",
                    want[row]
                );
            }
        }
    }
}

#[test]
fn zero_frequency_matches_euler_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let p = lp(rng.gen_range(0.0..8.0), rng.gen_range(0.0..0.2), 0.3);
        let Ok((rm, rp)) = p.euler_exponents() else { continue };
        let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        // u = A t^{rp} + B t^{rm} with u(1) = a, u'(1) = b.
        let ca = (b - rm * a) / (rp - rm);
        let cb = a - ca;
        let t: f64 = rng.gen_range(1.0..20.0);
        let want = ca * t.powf(rp) + cb * t.powf(rm);
        let want_d = ca * rp * t.powf(rp - 1.0) + cb * rm * t.powf(rm - 1.0);
        let s = ModeState {
            k: 0.0,
            value: Complex64::new(a, -a),
            velocity: Complex64::new(b, -b),
            time: 1.0,
        };
        let out = propagate_mode(s, t, p, 1e-13).unwrap();
        let scale = want.abs().max(want_d.abs()).max(1e-3);
        assert!((out.value.re - want).abs() <= 1e-10 * scale);
        assert!((out.value.im + want).abs() <= 1e-10 * scale);
        assert!((out.velocity.re - want_d).abs() <= 1e-10 * scale);
        assert_eq!(out.time, t);
    }
}

#[test]
fn reduced_euler_closed_forms() {
    let p = lp(2.0, 0.0, 0.0);
    let s = ModeState {
        k: 0.0,
        value: Complex64::new(1.0, 0.0),
        velocity: Complex64::new(1.0, 0.0),
        time: 1.0,
    };
    for t in [1.5, 2.0, 10.0] {
        let out = propagate_mode(s, t, p, 1e-12).unwrap();
        assert!((out.value.re - (2.0 - 1.0 / t)).abs() < 1e-10);
    }
    let fm = fundamental_pair(0.0, 1.0, 2.0, p, 1e-12).unwrap();
    assert!((fm.entries[0][0] - 1.0).abs() < 1e-12);
    assert!(fm.entries[1][0].abs() < 1e-12);
    assert!((fm.entries[0][1] - 0.5).abs() < 1e-10);
    assert!((fm.entries[1][1] - 0.25).abs() < 1e-10);
}

#[test]
fn identity_and_composition() {
    let p = lp(2.5, 0.3, 0.2);
    assert_eq!(
        fundamental_pair(1.3, 2.0, 2.0, p, 1e-10).unwrap().entries,
        [[1.0, 0.0], [0.0, 1.0]]
    );
    for k in [0.0, 0.7, 3.0] {
        let a = fundamental_pair(k, 1.0, 2.0, p, 1e-12).unwrap();
        let b = fundamental_pair(k, 2.0, 4.0, p, 1e-12).unwrap();
        let direct = fundamental_pair(k, 1.0, 4.0, p, 1e-12).unwrap();
        let c = b.compose(&a);
        assert_eq!((c.tau, c.t), (1.0, 4.0));
        for r in 0..2 {
            for s in 0..2 {
                assert!((c.entries[r][s] - direct.entries[r][s]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn path_matches_pointwise_pairs() {
    let p = lp(1.5, 0.1, 0.4);
    let times = [1.0, 1.5, 2.5, 4.0];
    let path = fundamental_path(2.0, 1.0, &times, p, 1e-12).unwrap();
    for (fm, &t) in path.iter().zip(&times) {
        let single = fundamental_pair(2.0, 1.0, t, p, 1e-12).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                assert!((fm.entries[r][s] - single.entries[r][s]).abs() < 1e-9);
            }
        }
    }
    assert!(fundamental_path(2.0, 1.0, &[2.0, 1.5], p, 1e-10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Abel: the Wronskian satisfies `W' = -(mu/t) W`.
    #[test]
    fn determinant_follows_abel(
        k in 0.0f64..3.0, mu in 0.0f64..5.0, nu_sq in 0.0f64..1.0,
        m in -0.5f64..1.0, tau in 1.0f64..3.0, dt in 0.0f64..3.0,
    ) {
        let t = tau + dt;
        let fm = fundamental_pair(k, tau, t, lp(mu, nu_sq, m), 1e-12).unwrap();
        let want = (tau / t).powf(mu);
        prop_assert!((fm.det() - want).abs() <= 1e-8 * want.max(1e-3));
    }

    #[test]
    fn mode_propagation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let p = lp(3.0, 0.2, 0.1);
        let go = |v: f64, w: f64| {
            propagate_mode(
                ModeState { k: 1.7, value: Complex64::new(v, 0.0), velocity: Complex64::new(w, 0.0), time: 1.0 },
                3.0, p, 1e-12,
            ).unwrap()
        };
        let e1 = go(1.0, 0.0);
        let e2 = go(0.0, 1.0);
        let both = go(a, b);
        let lin = a * e1.value + b * e2.value;
        prop_assert!((both.value - lin).norm() <= 1e-9 * (1.0 + lin.norm()));
    }

    #[test]
    fn branch_selector_matches_inequality(
        mu in 0.0f64..10.0, nu_sq in 0.0f64..1.0, m in -0.9f64..2.0,
        n in 1u32..4, kappa in 0.0f64..4.0,
    ) {
        let p = lp(mu, nu_sq, m);
        prop_assume!(p.delta() > 0.0);
        let c = p.delta().sqrt() / (2.0 * (m + 1.0)) + 0.5 - n as f64 / 2.0;
        prop_assume!((kappa - c).abs() > 1e-6);
        let want = if kappa < c { DecayBranch::Below } else { DecayBranch::Above };
        prop_assert_eq!(decay_branch(p, n, kappa), want);
    }
}

#[test]
fn critical_branch_carries_log_loss() {
    let p = lp(3.0, 0.0, 0.0);
    let c = critical_regularity(p, 1);
    assert!((c - 1.0).abs() < 1e-15);
    let (b, e, log_c) = theory_decay_exponent(p, 1, c);
    assert_eq!(b, DecayBranch::Critical);
    assert_eq!((e, log_c), (-1.5, 0.5));
    let (b, e, _) = theory_decay_exponent(p, 1, 0.0);
    assert_eq!(b, DecayBranch::Below);
    assert!((e + 0.5).abs() < 1e-15);
}

#[test]
fn rejects_bad_times_and_tolerances() {
    let p = lp(1.0, 0.0, 0.0);
    let s = ModeState {
        k: 1.0,
        value: Complex64::new(1.0, 0.0),
        velocity: Complex64::new(0.0, 0.0),
        time: 2.0,
    };
    assert!(propagate_mode(s, 1.5, p, 1e-8).is_err());
    assert!(matches!(propagate_mode(s, 3.0, p, 1e-2), Err(Error::InvalidTolerance(_))));
    assert!(fundamental_pair(1.0, 0.5, 2.0, p, 1e-8).is_err());
}

fn combine(a: f64, f: &SpectralField, b: f64, g: &SpectralField) -> SpectralField {
    let v = f.values().iter().zip(g.values()).map(|(x, y)| a * x + b * y).collect();
    SpectralField::new(*f.grid(), v).unwrap()
}

fn opts() -> LinearOptions {
    LinearOptions { rel_tol: 1e-11, mode_floor: 0.0 }
}

#[test]
fn zero_data_and_zero_span() {
    let grid = Grid::new(1, 64, 8.0).unwrap();
    let z = SpectralField::zeros(grid);
    let p = lp(2.0, 0.1, 0.2);
    let (a, b) = linear_evolve(&z, &z, 1.0, 3.0, p, opts()).unwrap();
    assert_eq!(a.max_abs(), 0.0);
    assert_eq!(b.max_abs(), 0.0);
    let [_, u1, _, _] = DataSpec::bump(1.0, 1.0).fields(grid, 0);
    let u0 = u1.scaled(0.3);
    let (a, b) = linear_evolve(&u0, &u1, 2.0, 2.0, p, opts()).unwrap();
    assert_eq!(a.spectrum(), u0.spectrum());
    assert_eq!(b.spectrum(), u1.spectrum());
    let other = Grid::new(1, 32, 8.0).unwrap();
    assert!(matches!(
        linear_evolve(&u0, &SpectralField::zeros(other), 1.0, 2.0, p, opts()),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn field_evolution_is_linear() {
    let grid = Grid::new(1, 128, 10.0).unwrap();
    let f = SpectralField::from_fn(grid, |x| (-x[0] * x[0]).exp());
    let g = SpectralField::from_fn(grid, |x| x[0] * (-x[0] * x[0] / 2.0).exp());
    let p = lp(3.0, 0.2, 0.1);
    let (fa, fb) = linear_evolve(&f, &g, 1.0, 3.0, p, opts()).unwrap();
    let (ga, gb) = linear_evolve(&g, &f, 1.0, 3.0, p, opts()).unwrap();
    let (ca, cb) = linear_evolve(
        &combine(2.0, &f, -0.5, &g),
        &combine(2.0, &g, -0.5, &f),
        1.0,
        3.0,
        p,
        opts(),
    )
    .unwrap();
    let want_a = combine(2.0, &fa, -0.5, &ga);
    let want_b = combine(2.0, &fb, -0.5, &gb);
    for (x, y) in ca.values().iter().zip(want_a.values()) {
        assert!((x - y).abs() < 1e-9);
    }
    for (x, y) in cb.values().iter().zip(want_b.values()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn single_mode_stays_single() {
    let grid = Grid::new(2, 16, 4.0).unwrap();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    let (i, j) = (2 * 16 + 3, 14 * 16 + 13);
    spec[i] = Complex64::new(5.0, 1.0);
    spec[j] = spec[i].conj();
    let f = SpectralField::from_spectrum(grid, spec).unwrap();
    let (a, b) = linear_evolve(&f, &f, 1.0, 2.5, lp(2.0, 0.0, 0.5), opts()).unwrap();
    for (idx, (x, y)) in a.spectrum().iter().zip(b.spectrum()).enumerate() {
        if idx != i && idx != j {
            assert_eq!(*x, Complex64::new(0.0, 0.0));
            assert_eq!(*y, Complex64::new(0.0, 0.0));
        }
    }
    let fm = fundamental_pair(grid.k_squared(i).sqrt(), 1.0, 2.5, lp(2.0, 0.0, 0.5), 1e-11).unwrap();
    let want = (fm.entries[0][0] + fm.entries[0][1]) * Complex64::new(5.0, 1.0);
    assert!((a.spectrum()[i] - want).norm() < 1e-9 * want.norm());
}

#[test]
fn finite_propagation_of_bump() {
    let m = 0.2;
    let (t0, t1) = (1.0, 3.0);
    let grid = Grid::new(1, 2048, 16.0).unwrap();
    let [_, u1, _, _] = DataSpec::bump(1.0, 1.0).fields(grid, 0);
    let (u, _) = linear_evolve(&u1.scaled(0.0), &u1, t0, t1, lp(2.0, 0.1, m), opts()).unwrap();
    let phi = |t: f64| t.powf(m + 1.0) / (m + 1.0);
    let bound = phi(t1) - phi(t0) + 1.0;
    let radius = u.support_radius(1e-8);
    assert!(radius <= bound + 2.0 * grid.dx(), "{radius} > {bound}");
    // The wave does reach most of the way out.
    assert!(radius >= bound - 0.5);
}

#[test]
fn decay_report_on_small_box() {
    // Odd data, so the zero mode carries nothing.
    let grid = Grid::new(1, 1024, 300.0).unwrap();
    let g = SpectralField::from_fn(grid, |x| x[0] * (-x[0] * x[0] / 8.0).exp());
    let z = SpectralField::zeros(grid);
    let p = lp(3.0, 0.0, 0.0);
    let ts = geometric_grid(1.0, 100.0, 40);
    let rep = verify_linear_decay(&z, &g, p, 1.0, &ts, opts()).unwrap();
    assert_eq!(rep.branch, DecayBranch::Critical);
    assert_eq!(rep.times.len(), rep.norms.len());
    assert_eq!(rep.envelope.len(), rep.norms.len());
    assert!(rep.fit.exponent < 0.0);
    assert!(matches!(
        verify_linear_decay(&z, &g, p, 0.0, &geometric_grid(1.0, 50.0, 40), opts()),
        Err(Error::InsufficientSpan(_))
    ));
}

#[test]
fn norm_history_matches_evolved_field() {
    let grid = Grid::new(1, 256, 12.0).unwrap();
    let f = SpectralField::from_fn(grid, |x| (-x[0] * x[0]).exp());
    let g = SpectralField::from_fn(grid, |x| (1.0 - x[0]) * (-x[0] * x[0]).exp());
    let p = lp(1.5, 0.05, 0.3);
    let ts = [1.0, 2.0, 3.5];
    for kappa in [0.0, 0.5, 1.0] {
        let h = linear_norm_history(&f, &g, 1.0, &ts, p, kappa, opts()).unwrap();
        for (&t, hn) in ts.iter().zip(&h) {
            let (u, _) = linear_evolve(&f, &g, 1.0, t, p, opts()).unwrap();
            let want = u.hdot_norm(kappa);
            assert!((hn - want).abs() <= 1e-9 * want, "kappa {kappa} t {t}");
        }
    }
}

#[test]
fn power_fit_sanity() {
    let ts = geometric_grid(1.0, 1000.0, 40);
    let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(-2.0)).collect();
    let f = power_law_fit(&ts, &ys, 0.0).unwrap();
    assert!((f.exponent + 2.0).abs() < 1e-6);
    let ys: Vec<f64> = ts.iter().map(|t| t.powf(-1.5) * (1.0 + t.ln()).sqrt()).collect();
    let f = power_law_fit(&ts, &ys, 0.5).unwrap();
    assert!((f.exponent + 1.5).abs() < 1e-12);
}
