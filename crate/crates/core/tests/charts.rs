use dsswave_core::charts::{ChartConfig, ChartId, ChartPoint, Charts, CotangentPointB, Side};
use dsswave_core::{Geometry, SpacetimeParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn atlas(m: f64, lambda: f64) -> Charts {
    Charts::new(Geometry::new(SpacetimeParams::new(m, lambda)).unwrap(), &ChartConfig::default()).unwrap()
}

fn standard() -> Charts {
    atlas(1.0, 0.02)
}

/// Product-chart sample with prescribed mu on the black-hole side.
fn product_at_mu(c: &Charts, t: f64, mu: f64, side: Side) -> ChartPoint {
    ChartPoint::product(t, c.radius_from_mu(mu, side).unwrap(), side)
}

#[test]
fn blowup_transition_example() {
    let g = Geometry::new(SpacetimeParams::new(1.0, 0.001)).unwrap();
    let cfg = ChartConfig { lambda_bh: Some(0.1), lambda_ds: Some(0.2), ..ChartConfig::default() };
    let c = Charts::new(g, &cfg).unwrap();
    let p = ChartPoint::new(ChartId::BlowupBh, 0.1, 0.5, Side::Bh);
    let q = c.to_chart(&p, ChartId::BlowupDs).unwrap();
    assert!((q.coords[0] - 0.005).abs() < 1e-15);
    assert_eq!(q.coords[1], 0.5);
    let back = c.to_chart(&q, ChartId::BlowupBh).unwrap();
    assert!((back.coords[0] - 0.1).abs() < 1e-14);
}

#[test]
fn blowdown_product_is_mu() {
    let c = standard();
    for (t, r) in [(2.0, 2.1), (5.0, 4.0), (30.0, 10.9), (1.5, 6.0)] {
        let p = ChartPoint::product(t, r, c.side_of(r));
        for target in [ChartId::BlowdownBh, ChartId::BlowdownDs] {
            let q = c.to_chart(&p, target).unwrap();
            let mu = c.geom.mu(r);
            assert!((q.coords[0] * q.coords[1] - mu).abs() <= 4.0 * f64::EPSILON * mu);
        }
    }
}

#[test]
fn product_blowup_round_trip_1000() {
    let c = standard();
    let h = c.geom.horizons;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let t = rng.gen_range(1.01..40.0);
        let r = rng.gen_range(h.r_bh + 1e-6..h.r_ds - 1e-6);
        let p = ChartPoint::product(t, r, c.side_of(r));
        let q = c.to_chart(&p, ChartId::BlowupBh).unwrap();
        let back = c.to_chart(&q, ChartId::Product).unwrap();
        assert!((back.coords[0] - t).abs() < 1e-10 * t, "t {t} -> {}", back.coords[0]);
        assert!((back.coords[1] - r).abs() < 1e-10 * r);
    }
}

#[test]
fn triple_overlaps_compose_to_identity() {
    let c = standard();
    let h = c.geom.horizons;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let charts = ChartId::ALL;
    for _ in 0..100 {
        let t = rng.gen_range(1.5..30.0);
        let r = rng.gen_range(h.r_bh + 1e-3..h.r_ds - 1e-3);
        let p = ChartPoint::product(t, r, c.side_of(r));
        for &a in &charts {
            for &b in &charts {
                let pa = c.to_chart(&p, a).unwrap();
                let pb = c.to_chart(&pa, b).unwrap();
                let back = c.to_chart(&pb, ChartId::Product).unwrap();
                assert!((back.coords[0] - t).abs() < 1e-10 * t, "{a:?}->{b:?}");
                assert!((back.coords[1] - r).abs() < 1e-10 * r, "{a:?}->{b:?}");
            }
        }
    }
}

#[test]
fn outside_overlap_reported() {
    let c = standard();
    let early = ChartPoint::product(0.5, 4.0, Side::Bh);
    assert!(c.to_chart(&early, ChartId::BlowupBh).is_err());
    let face = ChartPoint::new(ChartId::BlowupBh, 1.0, 0.0, Side::Bh);
    assert!(c.to_chart(&face, ChartId::Product).is_err());
}

/// Independent limit of (beta_h^2 - beta^2) / mu at the horizon by
/// Richardson extrapolation of the naive quotient.
fn gamma_limit_oracle(c: &Charts) -> f64 {
    let g = &c.geom;
    let rh = g.horizons.r_bh;
    let q = |d: f64| {
        let r = rh + d;
        (g.beta(rh).powi(2) - g.beta(r).powi(2)) / g.mu(r)
    };
    let d = 1e-3;
    let (a, b, e) = (q(d), q(d / 2.0), q(d / 4.0));
    let r1 = 2.0 * b - a;
    let r2 = 2.0 * e - b;
    (4.0 * r2 - r1) / 3.0
}

#[test]
fn blowup_metric_at_horizon_face() {
    let c = standard();
    let p = ChartPoint::new(ChartId::BlowupBh, 0.7, 0.0, Side::Bh);
    let g = c.dual_metric(&p).unwrap();
    let [a, b, cc, ang] = g.quadratic_coeffs();
    assert_eq!(cc, 0.0);
    let beta_h = c.geom.horizons.kappa_bh;
    assert!((b - 8.0 * beta_h * beta_h).abs() < 1e-14);
    assert!(a.is_finite());
    assert!((a - 4.0 * gamma_limit_oracle(&c)).abs() < 1e-8);
    assert!((ang + 1.0 / c.geom.horizons.r_bh.powi(2)).abs() < 1e-14);
    assert!(g.is_lorentzian());
}

#[test]
fn product_metric_in_t_frame() {
    let c = standard();
    let lam = c.lambda_bh;
    let r = c.radius_from_mu(0.3, Side::Bh).unwrap();
    let t = 3.0;
    let g = c.dual_metric(&ChartPoint::product(t, r, Side::Bh)).unwrap();
    let mu = c.geom.mu(r);
    assert!((g.matrix[0][0] - 1.0 / mu).abs() < 1e-14 && (g.matrix[1][1] + mu).abs() < 1e-15);
    // dT = -2 lambda T dt
    let tt = (-2.0 * lam * t).exp();
    let gtt = (2.0 * lam * tt).powi(2) * g.matrix[0][0];
    assert!((gtt - 4.0 * lam * lam * tt * tt / mu).abs() < 1e-15);
}

#[test]
fn scattering_faces_are_characteristic() {
    let c = standard();
    for (chart, side) in [(ChartId::BlowdownBh, Side::Bh), (ChartId::BlowdownDs, Side::Ds)] {
        for s in [0.05, 0.2, 0.5] {
            // face s_- = 0: conormal ds_-
            let g = c.dual_metric(&ChartPoint::new(chart, s, 0.0, side)).unwrap();
            assert!(g.eval([0.0, 1.0], 0.0).abs() < 1e-10);
            // face s_+ = 0: conormal ds_+
            let g = c.dual_metric(&ChartPoint::new(chart, 0.0, s, side)).unwrap();
            assert!(g.eval([1.0, 0.0], 0.0).abs() < 1e-10);
        }
    }
    // d mu is null on mu = 0 in blown-up charts
    for (chart, side) in [(ChartId::BlowupBh, Side::Bh), (ChartId::BlowupDs, Side::Ds)] {
        let g = c.dual_metric(&ChartPoint::new(chart, 0.3, 0.0, side)).unwrap();
        assert_eq!(g.eval([0.0, 1.0], 0.0), 0.0);
    }
}

#[test]
fn pushforward_product_to_blowup() {
    let c = standard();
    let samples: Vec<_> = (0..100)
        .map(|i| {
            let mu = 1e-3 * (300.0f64).powf(i as f64 / 99.0);
            product_at_mu(&c, 2.0 + 0.1 * i as f64, mu, Side::Bh)
        })
        .collect();
    let rep = c.pushforward_check(ChartId::Product, ChartId::BlowupBh, &samples).unwrap();
    assert!(rep.max_abs_discrepancy < 1e-6, "{}", rep.max_abs_discrepancy);
}

#[test]
fn pushforward_blowup_to_blowdown_and_others() {
    let c = standard();
    let blow: Vec<_> = (0..50)
        .map(|i| {
            let mu = 1e-3 * (300.0f64).powf(i as f64 / 49.0);
            c.to_chart(&product_at_mu(&c, 3.0 + 0.2 * i as f64, mu, Side::Bh), ChartId::BlowupBh).unwrap()
        })
        .collect();
    let rep = c.pushforward_check(ChartId::BlowupBh, ChartId::BlowdownBh, &blow).unwrap();
    assert!(rep.max_abs_discrepancy < 1e-6, "{}", rep.max_abs_discrepancy);

    let ds: Vec<_> = (0..50)
        .map(|i| {
            let mu = 1e-3 * (300.0f64).powf(i as f64 / 49.0);
            product_at_mu(&c, 3.0 + 0.5 * i as f64, mu, Side::Ds)
        })
        .collect();
    for target in [ChartId::BlowupDs, ChartId::BlowdownDs, ChartId::TfDefining] {
        let rep = c.pushforward_check(ChartId::Product, target, &ds).unwrap();
        let scale = ds.iter().map(|p| c.dual_metric(&c.to_chart(p, target).unwrap()).unwrap())
            .map(|g| g.matrix.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs())))
            .fold(1.0f64, f64::max);
        assert!(rep.max_abs_discrepancy < 1e-6 * scale, "{target:?} {} {scale}", rep.max_abs_discrepancy);
    }
}

fn pushed_rho_coefficient(c: &Charts, mu: f64) -> f64 {
    let p = product_at_mu(c, 4.0, mu, Side::Bh);
    c.transported_metric(&p, ChartId::BlowupBh).unwrap().matrix[0][0]
}

#[test]
fn cancellation_limit_exists_and_negative_control_blows_up() {
    let c = standard();
    let mu0 = 1e-3;
    let k: Vec<f64> = (0..4).map(|j| pushed_rho_coefficient(&c, mu0 / 2f64.powi(j))).collect();
    let extrap = |a: f64, b: f64, e: f64| {
        let (r1, r2) = (2.0 * b - a, 2.0 * e - b);
        (4.0 * r2 - r1) / 3.0
    };
    let e1 = extrap(k[0], k[1], k[2]);
    let e2 = extrap(k[1], k[2], k[3]);
    assert!((e1 - e2).abs() < 1e-6, "{e1} {e2}");
    assert!((e1 - 4.0 * gamma_limit_oracle(&c)).abs() < 1e-6);
    // (d mu)^2 coefficient equals -4 beta^2 mu
    let p = product_at_mu(&c, 4.0, 0.01, Side::Bh);
    let moved = c.transported_metric(&p, ChartId::BlowupBh).unwrap();
    let beta = c.geom.beta(p.coords[1]);
    assert!((moved.matrix[1][1] + 4.0 * beta * beta * 0.01).abs() < 1e-9);

    let wrong = c.with_lambdas(1.1 * c.lambda_bh, c.lambda_ds);
    let kh = wrong.geom.horizons.kappa_bh;
    let target = 4.0 * (1.21 - 1.0) * kh * kh;
    for j in 0..4 {
        let mu = mu0 / 4f64.powi(j);
        let v = pushed_rho_coefficient(&wrong, mu);
        assert!((mu * v - target).abs() < 0.05 * target, "mu {mu}: {}", mu * v);
    }
}

#[test]
fn hamilton_field_examples() {
    let c = standard();
    let bh = c.geom.horizons.kappa_bh;
    let q = CotangentPointB { rho: 1.0, mu: 0.0, xi: 0.0, zeta: 1.0, eta: 0.0 };
    let f = c.hamilton_field(&q).unwrap();
    assert_eq!(f.mu_dot, 0.0);
    assert_eq!(f.xi_dot, 0.0);
    assert_eq!(f.eta_dot, 0.0);
    assert!((f.rho_dot_over_rho - 8.0 * bh * bh).abs() < 1e-14);
    assert!((f.zeta_dot - 4.0 * bh * bh).abs() < 1e-14);
    let z = c.hamilton_field(&CotangentPointB { zeta: 0.0, ..q }).unwrap();
    assert_eq!([z.rho_dot_over_rho, z.mu_dot, z.xi_dot, z.zeta_dot, z.angular_speed], [0.0; 5]);
}

#[test]
fn hamilton_flow_conserves_metric_to_fourth_order() {
    let c = standard();
    let q0 = CotangentPointB { rho: 0.8, mu: 0.05, xi: 0.3, zeta: -0.7, eta: 0.4 };
    let g0 = c.dual_metric_value(ChartId::BlowupBh, Side::Bh, &q0).unwrap();
    let drift = |n: usize| {
        let h = 0.5 / n as f64;
        let mut q = q0;
        for _ in 0..n {
            q = c.hamilton_rk4_step(ChartId::BlowupBh, Side::Bh, &q, h).unwrap();
        }
        (c.dual_metric_value(ChartId::BlowupBh, Side::Bh, &q).unwrap() - g0).abs()
    };
    let (d1, d2) = (drift(20), drift(40));
    let order = (d1 / d2).log2();
    assert!(order > 3.5 && order < 4.8, "order {order} ({d1:e}, {d2:e})");
}

#[test]
fn hamilton_field_matches_metric_gradient() {
    // independent check: finite differences of the dual metric value
    let c = standard();
    let q = CotangentPointB { rho: 0.5, mu: 0.02, xi: 0.2, zeta: 0.9, eta: 0.3 };
    let f = c.hamilton_field(&q).unwrap();
    let gv = |q: CotangentPointB| c.dual_metric_value(ChartId::BlowupBh, Side::Bh, &q).unwrap();
    let h = 1e-6;
    let dzeta = (gv(CotangentPointB { zeta: q.zeta + h, ..q }) - gv(CotangentPointB { zeta: q.zeta - h, ..q })) / (2.0 * h);
    let dmu = (gv(CotangentPointB { mu: q.mu + h, ..q }) - gv(CotangentPointB { mu: q.mu - h, ..q })) / (2.0 * h);
    let dxi = (gv(CotangentPointB { xi: q.xi + h, ..q }) - gv(CotangentPointB { xi: q.xi - h, ..q })) / (2.0 * h);
    assert!((f.mu_dot - dzeta).abs() < 1e-7);
    assert!((f.zeta_dot + dmu).abs() < 1e-6);
    assert!((f.rho_dot_over_rho - dxi).abs() < 1e-7);
}

#[test]
fn defining_function_properties() {
    let c = standard();
    let h = c.geom.horizons;
    let r = h.r_bh + 0.05;
    let t = 5.0;
    let x = c.defining_function_x(t, r).unwrap();
    let tt = (-2.0 * c.lambda_bh * t).exp();
    assert!((x.powf(2.0 * c.lambda_bh) * c.geom.mu(r) / tt - 1.0).abs() < 1e-10);
    let rho_ds = c.to_chart(&ChartPoint::product(t, h.r_ds - 0.05, Side::Ds), ChartId::BlowupDs).unwrap();
    let xd = c.defining_function_x(t, h.r_ds - 0.05).unwrap();
    assert!((xd - rho_ds.coords[0].powf(0.5 / c.lambda_ds)).abs() < 1e-12 * xd);
    assert!(c.defining_function_x(t + 1.0, r).unwrap() < x);
    assert!(c.defining_function_x(0.5, r).is_err());

    let other = Charts::new(c.geom.clone(), &ChartConfig { r1_frac: 0.2, r2_frac: 0.8, ..ChartConfig::default() }).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 1..400 {
        let r = h.r_bh + (h.r_ds - h.r_bh) * i as f64 / 400.0;
        let q = c.defining_function_x(3.0, r).unwrap() / other.defining_function_x(3.0, r).unwrap();
        lo = lo.min(q);
        hi = hi.max(q);
    }
    assert!(lo > 0.0 && hi.is_finite() && hi / lo < 1e3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lorentzian_in_every_chart(t in 1.5f64..20.0, u in 0.001f64..0.999, x in 0.02f64..0.98) {
        let c = atlas(1.0, x / 9.0);
        let h = c.geom.horizons;
        let r = h.r_bh + u * (h.r_ds - h.r_bh);
        let p = ChartPoint::product(t, r, c.side_of(r));
        for target in ChartId::ALL {
            let q = c.to_chart(&p, target).unwrap();
            prop_assert!(c.dual_metric(&q).unwrap().is_lorentzian(), "{:?}", target);
        }
    }

    #[test]
    fn blowdown_identity_is_exact(t in -20.0f64..20.0, u in 0.001f64..0.999) {
        let c = standard();
        let h = c.geom.horizons;
        let r = h.r_bh + u * (h.r_ds - h.r_bh);
        let q = c.to_chart(&ChartPoint::product(t, r, c.side_of(r)), ChartId::BlowdownBh).unwrap();
        let mu = c.geom.mu(r);
        prop_assert!((q.coords[0] * q.coords[1] - mu).abs() <= 4.0 * f64::EPSILON * mu);
    }
}
