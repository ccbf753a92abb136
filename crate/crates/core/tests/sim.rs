use epdt_core::criticality::{derive_constants, SystemParams};
use epdt_core::data::DataSpec;
use epdt_core::sim::*;
use epdt_core::spectral::{Grid, SpectralField};
use epdt_core::Error;
use num_complex::Complex64;
use std::f64::consts::PI;

fn params(m: f64, n: u32, mu: (f64, f64), nu_sq: (f64, f64), p: f64, q: f64) -> SystemParams {
    SystemParams {
        m,
        n,
        mu1: mu.0,
        mu2: mu.1,
        nu1sq: nu_sq.0,
        nu2sq: nu_sq.1,
        p,
        q,
        sigma: 1.0,
    }
}

fn blowup_family_1d() -> SystemParams {
    params(0.1, 1, (3.0, 0.5), (0.0625, 0.015625), 2.1, 2.2)
}

#[test]
fn rhs_matches_hand_computation() {
    // Band-limited data with p = q = 2, so the squares are resolved exactly.
    let grid = Grid::new(1, 64, PI).unwrap();
    let f = |g: fn(f64) -> f64| SpectralField::from_fn(grid, move |x| g(x[0]));
    let state = SystemState::new(
        1.7,
        f(|x| (3.0 * x).cos()),
        f(|x| x.sin()),
        f(|x| 1.0 + 0.5 * (2.0 * x).cos()),
        f(|x| x.cos()),
    )
    .unwrap();
    let p = params(0.3, 1, (2.0, 1.5), (0.2, 0.1), 2.0, 2.0);
    let d = rhs(&state, &p).unwrap();
    let t: f64 = 1.7;
    let speed = t.powf(2.0 * p.m);
    for j in 0..grid.points {
        let x = grid.coord(j);
        let (u, ut, v, vt) = ((3.0 * x).cos(), x.sin(), 1.0 + 0.5 * (2.0 * x).cos(), x.cos());
        let utt = -9.0 * speed * u - p.mu1 / t * ut - p.nu1sq / (t * t) * u + v * v;
        let vtt = -4.0 * speed * 0.5 * (2.0 * x).cos() - p.mu2 / t * vt - p.nu2sq / (t * t) * v + u * u;
        assert!((d.u.values()[j] - ut).abs() < 1e-12);
        assert!((d.v.values()[j] - vt).abs() < 1e-12);
        assert!((d.ut.values()[j] - utt).abs() < 1e-11, "{j}");
        assert!((d.vt.values()[j] - vtt).abs() < 1e-11, "{j}");
    }
}

/// With `mu = 2`, `nu = 0`, `m = 0` the product `t u` solves the free wave
/// equation, which gives a closed form for every Fourier mode.
#[test]
fn free_wave_oracle() {
    let grid = Grid::new(1, 512, 20.0).unwrap();
    let p = params(0.0, 1, (2.0, 2.0), (0.0, 0.0), 3.0, 3.0);
    let mut data = DataSpec::bump(1e-3, 1.0);
    data.weights.u0 = 0.7;
    let init = SystemState::initial(&data, grid, 0).unwrap();
    let controls = SimControls {
        rel_tol: 1e-10,
        snapshot_interval: Some(1.0),
        ..SimControls::default()
    };
    let traj = simulate(&init, &p, 3.0, &controls).unwrap();
    assert_eq!(traj.outcome, Outcome::CompletedHorizon);
    let w0 = init.u.spectrum();
    let w1: Vec<Complex64> = w0.iter().zip(init.ut.spectrum()).map(|(a, b)| a + b).collect();
    for snap in &traj.snapshots[1..] {
        let t = snap.t;
        let want: Vec<Complex64> = (0..grid.len())
            .map(|i| {
                let k = grid.k_squared(i).sqrt();
                let s = if k == 0.0 { t - 1.0 } else { (k * (t - 1.0)).sin() / k };
                (w0[i] * (k * (t - 1.0)).cos() + w1[i] * s) / t
            })
            .collect();
        let want = SpectralField::from_spectrum(grid, want).unwrap();
        let scale = want.max_abs();
        for (a, b) in snap.u.values().iter().zip(want.values()) {
            assert!((a - b).abs() <= 1e-7 * scale, "t = {t}");
        }
        let h1 = want.hdot_norm(1.0);
        assert!((snap.u.hdot_norm(1.0) - h1).abs() <= 1e-7 * h1);
    }
    assert_eq!(traj.snapshots.len(), 3);
    assert_eq!(traj.snapshots[0], init);
}

#[test]
fn zero_data_stays_zero() {
    let grid = Grid::new(1, 64, 10.0).unwrap();
    let init = SystemState::zeros(grid, 1.0);
    let traj = simulate(&init, &blowup_family_1d(), 5.0, &SimControls::default()).unwrap();
    assert_eq!(traj.outcome, Outcome::CompletedHorizon);
    assert!((traj.t_end - 5.0).abs() < 1e-12);
    for s in &traj.samples {
        assert_eq!((s.u.l2, s.v.l2, s.ut.l2, s.vt.l2), (0.0, 0.0, 0.0, 0.0));
    }
}

#[test]
fn samples_are_geometric_and_ordered() {
    let grid = Grid::new(1, 128, 12.0).unwrap();
    let init = SystemState::initial(&DataSpec::bump(0.01, 1.0), grid, 0).unwrap();
    let controls = SimControls {
        samples_per_decade: 10,
        ..SimControls::default()
    };
    let traj = simulate(&init, &blowup_family_1d(), 10.0, &controls).unwrap();
    assert_eq!(traj.samples.len(), 11);
    for w in traj.samples.windows(2) {
        assert!(w[1].t > w[0].t);
        assert!((w[1].t / w[0].t - 10f64.powf(0.1)).abs() < 1e-9);
    }
    assert!(traj.samples.iter().all(|s| s.weighted.is_some()));
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &traj).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRAJECTORY_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == TRAJECTORY_COLUMNS.len()));
}

#[test]
fn support_stays_in_envelope() {
    let p = params(0.1, 1, (3.0, 0.5), (0.0625, 0.015625), 2.0, 2.0);
    let t_max = 3.0;
    let l = auto_half_length(p.m, t_max, 1.0);
    let grid = Grid::new(1, 2048, l).unwrap();
    let init = SystemState::initial(&DataSpec::bump(0.5, 1.0), grid, 0).unwrap();
    let controls = SimControls {
        check_support: true,
        ..SimControls::default()
    };
    let traj = simulate(&init, &p, t_max, &controls).unwrap();
    assert_eq!(traj.outcome, Outcome::CompletedHorizon);
    assert!(traj.support_checks >= 2 * traj.steps_accepted);
    assert_eq!(traj.support_violations, 0, "{:?}", traj.first_violation);
}

#[test]
fn large_data_blows_up_and_refinement_agrees() {
    let grid = Grid::new(1, 1024, 20.0).unwrap();
    let rep = simulate_refined(
        &DataSpec::bump(5.0, 1.0),
        grid,
        0,
        &blowup_family_1d(),
        10.0,
        &SimControls::default(),
    )
    .unwrap();
    assert_eq!(rep.coarse.outcome, Outcome::BlowUpSuspected);
    assert_eq!(rep.verdict, RefinedVerdict::Confirmed(Outcome::BlowUpSuspected));
    assert_eq!(rep.fine.grid.points, 2048);
    assert!(rep.coarse.t_end < 10.0);
    assert!((rep.coarse.t_end - rep.fine.t_end).abs() < 0.05 * rep.coarse.t_end);
}

#[test]
fn rejects_bad_runs() {
    let grid = Grid::new(1, 64, 3.0).unwrap();
    let p = blowup_family_1d();
    let c = SimControls::default();
    let mut init = SystemState::initial(&DataSpec::bump(0.1, 1.0), grid, 0).unwrap();
    assert!(simulate(&init, &p, 1.0, &c).is_err());
    let mut p2 = p;
    p2.n = 2;
    assert!(matches!(simulate(&init, &p2, 2.0, &c), Err(Error::GridMismatch(_))));
    let wide = SystemState::initial(&DataSpec::bump(0.1, 2.95), grid, 0).unwrap();
    assert!(matches!(
        simulate(&wide, &p, 2.0, &c),
        Err(Error::UnsupportedSupport { .. })
    ));
    init.t = 2.0;
    assert!(simulate(&init, &p, 3.0, &c).is_err());
}

#[test]
fn state_round_trip() {
    let grid = Grid::new(2, 16, 3.0).unwrap();
    let mut data = DataSpec::bump(0.4, 1.0);
    data.weights.u0 = 1.0;
    data.weights.v0 = -2.0;
    let s = SystemState::initial(&data, grid, 3).unwrap();
    let mut buf = Vec::new();
    write_state(&mut buf, &s).unwrap();
    let back = read_state(&mut buf.as_slice()).unwrap();
    assert_eq!(back, s);
    assert!(read_state(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn weighted_norms_follow_exponents() {
    let p = params(0.1, 1, (3.0, 0.5), (0.0625, 0.015625), 2.1, 2.2);
    let consts = derive_constants(&p).unwrap();
    let grid = Grid::new(1, 128, 10.0).unwrap();
    let g = SpectralField::from_fn(grid, |x| (-x[0] * x[0]).exp());
    let t: f64 = 7.0;
    let s = SystemState::new(t, g.clone(), g.scaled(2.0), g.scaled(3.0), g.scaled(4.0)).unwrap();
    for sigma in [0.5, 1.0, 1.6] {
        let wn = weighted_norms(&s, &consts, sigma);
        let (l2, hs, dl2, dhs) = (g.l2_norm(), g.hdot_norm(sigma), g.l2_norm(), g.hdot_norm(sigma - 1.0));
        for (i, c, mu, nu_sq) in [(1, 1.0, p.mu1, p.nu1sq), (2, 3.0, p.mu2, p.nu2sq)] {
            let d = (mu - 1.0) * (mu - 1.0) - 4.0 * nu_sq;
            let rho = (d.sqrt() - mu + 1.0) / 2.0;
            let a = p.m + 1.0;
            let w = c * (t.powf(-rho + a / 2.0) * l2 + t.powf(-rho + a * (sigma + 0.5)) * hs);
            let got_w = if i == 1 { wn.w1 } else { wn.w2 };
            assert!((got_w - w).abs() <= 1e-12 * w, "sigma {sigma} eq {i}");
            let got_m = if i == 1 { wn.m1 } else { wn.m2 };
            if sigma < 1.0 {
                assert!(got_m.is_none());
                continue;
            }
            let dc = c + 1.0;
            let mut m = w + dc * t.powf(-p.m - rho + a * (sigma + 0.5)) * dhs;
            if sigma > 1.0 {
                m += dc * t.powf(-p.m - rho + a * 1.5) * dl2;
            }
            let got_m = got_m.unwrap();
            assert!((got_m - m).abs() <= 1e-12 * m, "sigma {sigma} eq {i}");
        }
    }
}

#[test]
fn log_flag_divides_sobolev_terms() {
    let mut w = WeightProfile {
        m: 0.0,
        n: 1,
        sigma: 1.5,
        rho1: 0.2,
        rho2: 0.3,
        log_flag1: false,
        log_flag2: false,
    };
    let t: f64 = 20.0;
    let plain = w.combine(1, t, 1.0, 1.0, 1.0, 1.0);
    w.log_flag1 = true;
    let flagged = w.combine(1, t, 1.0, 1.0, 1.0, 1.0);
    let e = w.exponents(1);
    let ell = (1.0 + t.ln()).sqrt();
    let want = t.powf(e[0]) + t.powf(e[1]) / ell;
    assert!((flagged.0 - want).abs() < 1e-12 * want);
    assert!(flagged.0 < plain.0);
    let want_m = want + t.powf(e[2]) + t.powf(e[3]) / ell;
    assert!((flagged.1.unwrap() - want_m).abs() < 1e-12 * want_m);
}

#[test]
fn decay_report_needs_a_decade() {
    let grid = Grid::new(1, 64, 10.0).unwrap();
    let p = blowup_family_1d();
    let traj = simulate(&SystemState::zeros(grid, 1.0), &p, 50.0, &SimControls::default()).unwrap();
    let consts = derive_constants(&p).unwrap();
    assert!(matches!(
        decay_report(&traj, &consts, 1.0),
        Err(Error::InsufficientSpan(_))
    ));
    let names: Vec<&str> = theory_exponents(&consts, 1, 1.0).iter().map(|x| x.0).collect();
    assert_eq!(names, ["u_l2", "u_hdot", "ut_hdot", "v_l2", "v_hdot", "vt_hdot"]);
    assert_eq!(theory_exponents(&consts, 1, 1.5).len(), 8);
    assert_eq!(theory_exponents(&consts, 1, 0.5).len(), 4);
}

#[test]
fn picard_on_zero_data_is_immediate() {
    let grid = Grid::new(1, 32, 5.0).unwrap();
    let z = SpectralField::zeros(grid);
    let p = params(0.1, 1, (3.0, 3.0), (0.0, 0.0), 3.0, 3.0);
    let res = picard_iterate([&z, &z, &z, &z], &p, 2.0, &PicardOptions::default()).unwrap();
    assert_eq!(res.fixed_point_iteration, Some(0));
    assert_eq!(res.deltas, vec![0.0]);
    assert_eq!(res.state.u.max_abs(), 0.0);
}

#[test]
fn picard_agrees_with_time_stepping() {
    let grid = Grid::new(1, 256, 8.0).unwrap();
    let p = params(0.1, 1, (3.0, 3.0), (0.0, 0.0), 3.0, 3.0);
    let data = DataSpec::bump(0.3, 1.0);
    let init = SystemState::initial(&data, grid, 0).unwrap();
    let res = picard_iterate(init.fields(), &p, 2.0, &PicardOptions::default()).unwrap();
    assert!(res.fixed_point_iteration.is_some());
    let ratios = res.contraction_ratios(1e-12);
    assert!(!ratios.is_empty() && ratios.iter().all(|&r| r < 0.5), "{:?}", res.deltas);
    let controls = SimControls {
        rel_tol: 1e-10,
        snapshot_interval: Some(1.0),
        ..SimControls::default()
    };
    let traj = simulate(&init, &p, 2.0, &controls).unwrap();
    let end = traj.snapshots.last().unwrap();
    assert!((end.t - 2.0).abs() < 1e-12);
    for (a, b) in [(&res.state.u, &end.u), (&res.state.v, &end.v)] {
        let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let diff = SpectralField::new(grid, diff).unwrap();
        assert!(diff.l2_norm() <= 1e-6 * b.l2_norm(), "{}", diff.l2_norm() / b.l2_norm());
    }
}

#[test]
fn controls_deserialize_with_defaults() {
    let c: SimControls = serde_json::from_str(r#"{"rel_tol": 1e-9, "check_support": true}"#).unwrap();
    assert_eq!(c.rel_tol, 1e-9);
    assert!(c.check_support);
    assert_eq!(c.cfl_safety, SimControls::default().cfl_safety);
    assert!(serde_json::from_str::<SimControls>(r#"{"stride": 3}"#).is_err());
}
