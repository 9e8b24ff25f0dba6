#![allow(clippy::needless_range_loop)]

use dsswave_core::charts::{ChartConfig, Charts};
use dsswave_core::modes::{self, ModePotential};
use dsswave_core::resolvent::{
    self, FrequencyConvention, ResidueConfig, SearchBox, SearchConfig, Shooter, ShootingConfig, SolveConfig,
    StripConfig,
};
use dsswave_core::{Error, Geometry, RadialGrid, SpacetimeParams};
use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sds() -> Geometry {
    Geometry::new(SpacetimeParams::new(1.0, 0.02)).unwrap()
}

fn gaussian(grid: &RadialGrid, center: f64, width: f64) -> Vec<C> {
    grid.nodes.iter().map(|n| C::new((-((n.r_star - center) / width).powi(2)).exp(), 0.0)).collect()
}

fn sup(v: &[C]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.norm()))
}

fn l2(v: &[C], h: f64) -> f64 {
    (v.iter().map(|x| x.norm_sqr()).sum::<f64>() * h).sqrt()
}

#[test]
fn frequency_convention_is_consistent() {
    FrequencyConvention::check().unwrap();
    assert!(FrequencyConvention::is_physical(C::new(1.0, -0.1)));
    assert!(!FrequencyConvention::is_physical(C::new(1.0, 0.1)));
}

#[test]
fn delta_source_residual_and_decay() {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -80.0, 80.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 1);
    let mut src = vec![C::new(0.0, 0.0); grid.len()];
    src[grid.index_of(0.0)] = C::new(1.0 / grid.spacing, 0.0);
    let sol = resolvent::solve(C::new(0.4, -1.0), &src, &grid, &pot, &SolveConfig::default()).unwrap();
    assert!(sol.residual < 1e-8, "{}", sol.residual);
    let peak = sup(&sol.w);
    let n = grid.len();
    assert!(sol.w[0].norm() < 1e-8 * peak && sol.w[n - 1].norm() < 1e-8 * peak);
    // apply the operator directly as an independent residual oracle
    let h2 = grid.spacing * grid.spacing;
    let s2 = sol.sigma * sol.sigma;
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        let lw = -(sol.w[i + 1] - 2.0 * sol.w[i] + sol.w[i - 1]) / h2 + (pot.v_scheme[i] - s2) * sol.w[i];
        worst = worst.max((lw - src[i]).norm());
    }
    assert!(worst / sup(&src) < 1e-8, "{worst:e}");
}

/// `int exp(-i sigma |x - s|) / (2 i sigma) g(s) ds` by composite Simpson.
fn free_convolution(sigma: C, x: f64, width: f64) -> C {
    let (a, b, n) = (-12.0 * width, 12.0 * width, 24_000);
    let h = (b - a) / n as f64;
    let f = |s: f64| (-C::new(0.0, 1.0) * sigma * (x - s).abs()).exp() * (-(s / width).powi(2)).exp();
    // split at the kink s = x for full Simpson accuracy
    let simpson = |lo: f64, hi: f64| {
        if hi <= lo {
            return C::new(0.0, 0.0);
        }
        let m = (((hi - lo) / h).ceil() as usize).max(2) & !1;
        let hh = (hi - lo) / m as f64;
        let mut acc = f(lo) + f(hi);
        for k in 1..m {
            acc += f(lo + k as f64 * hh) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * hh / 3.0
    };
    let xc = x.clamp(a, b);
    (simpson(a, xc) + simpson(xc, b)) / (2.0 * C::new(0.0, 1.0) * sigma)
}

#[test]
fn free_green_function_matches_convolution() {
    let g = sds();
    let sigma = C::new(0.8, -0.5);
    let solve_at = |h: f64| {
        let grid = RadialGrid::uniform(&g, -30.0, 30.0, h).unwrap();
        let pot = ModePotential::zero(0, grid.len());
        let src = gaussian(&grid, 0.0, 1.0);
        (grid.clone(), resolvent::solve(sigma, &src, &grid, &pot, &SolveConfig::default()).unwrap())
    };
    let (coarse_grid, coarse) = solve_at(0.1);
    let (_, fine) = solve_at(0.05);
    let mut worst: f64 = 0.0;
    for x in [-6.0, -3.0, -1.0, 0.0, 0.5, 2.0, 4.0, 7.0] {
        let i = coarse_grid.index_of(x);
        let rich = (fine.w[2 * i] * 4.0 - coarse.w[i]) / 3.0;
        let exact = free_convolution(sigma, coarse_grid.nodes[i].r_star, 1.0);
        worst = worst.max((rich - exact).norm());
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn self_adjoint_bound_on_physical_side() {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -40.0, 40.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 0);
    let src = gaussian(&grid, 3.0, 2.0);
    for sigma in [C::new(0.3, -0.2), C::new(1.5, -0.05), C::new(0.05, -0.4), C::new(-0.7, -0.3)] {
        let sol = resolvent::solve(sigma, &src, &grid, &pot, &SolveConfig::default()).unwrap();
        let bound = l2(&src, grid.spacing) / (sigma * sigma).im.abs();
        assert!(l2(&sol.w, grid.spacing) <= bound, "{sigma}");
    }
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<C>>, mut b: Vec<C>) -> Vec<C> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f.norm() == 0.0 {
                continue;
            }
            for j in k..n {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
            let t = b[k];
            b[i] -= f * t;
        }
    }
    let mut x = vec![C::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    x
}

#[test]
fn agrees_with_dense_solve() {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -20.0, 20.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 1);
    let src = gaussian(&grid, -2.0, 1.5);
    let n = grid.len();
    let h = grid.spacing;
    for sigma in [C::new(0.6, -0.4), C::new(-0.2, -1.1), C::new(2.0, -0.3)] {
        // decaying root of z + 1/z = 2 - h^2 sigma^2, chosen by modulus
        let b = C::new(2.0, 0.0) - sigma * sigma * h * h;
        let disc = (b * b - 4.0).sqrt();
        let (z1, z2) = ((b + disc) / 2.0, (b - disc) / 2.0);
        let grow = if z1.norm() > z2.norm() { z1 } else { z2 };
        let r = |i: usize| grid.nodes[i].r;
        let mut a = vec![vec![C::new(0.0, 0.0); n]; n];
        a[0][0] = -grow / r(0);
        a[0][1] = C::new(1.0 / r(1), 0.0);
        a[n - 1][n - 2] = -(C::new(1.0, 0.0) / grow) / r(n - 2);
        a[n - 1][n - 1] = C::new(1.0 / r(n - 1), 0.0);
        for i in 1..n - 1 {
            a[i][i - 1] = C::new(-1.0 / (h * h), 0.0);
            a[i][i + 1] = C::new(-1.0 / (h * h), 0.0);
            a[i][i] = C::new(2.0 / (h * h) + pot.v_scheme[i], 0.0) - sigma * sigma;
        }
        let mut rhs = src.clone();
        rhs[0] = C::new(0.0, 0.0);
        rhs[n - 1] = C::new(0.0, 0.0);
        let dense = dense_solve(a, rhs);
        let sol = resolvent::solve(sigma, &src, &grid, &pot, &SolveConfig::default()).unwrap();
        let err = dense.iter().zip(&sol.w).map(|(x, y)| (x - y).norm()).fold(0.0f64, f64::max);
        assert!(err < 1e-6 * sup(&dense), "{sigma}: {err:e}");
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -10.0, 10.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 0);
    let src = vec![C::new(1.0, 0.0); grid.len() - 1];
    let err = resolvent::solve(C::new(1.0, -1.0), &src, &grid, &pot, &SolveConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
    let pot1 = modes::potential(&g, &grid, 1);
    assert!(resolvent::residue_at_zero(&grid, &pot1, &ResidueConfig::default()).is_err());
}

#[test]
fn solve_flags_the_pole_at_zero() {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -40.0, 40.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 0);
    let src = gaussian(&grid, 0.0, 2.0);
    let cfg = SolveConfig { near_resonance: 1e-6, ..SolveConfig::default() };
    let err = resolvent::solve(C::new(1e-9, 0.0), &src, &grid, &pot, &cfg).unwrap_err();
    assert!(matches!(err, Error::NearResonance { .. }), "{err:?}");
}

fn circle_scale(shooter: &Shooter, radius: f64) -> f64 {
    (0..8)
        .map(|k| shooter.wronskian(C::from_polar(radius, 0.25 * std::f64::consts::PI * k as f64)).unwrap().norm())
        .sum::<f64>()
        / 8.0
}

#[test]
fn wronskian_at_zero_frequency() {
    let g = sds();
    let k = g.horizons.kappa_min();
    let s0 = Shooter::new(&g, 0, ShootingConfig::default()).unwrap();
    let scale = circle_scale(&s0, 0.5 * k);
    assert!(s0.wronskian(C::new(0.0, 0.0)).unwrap().norm() < 1e-6 * scale);
    let s1 = Shooter::new(&g, 1, ShootingConfig::default()).unwrap();
    let scale = circle_scale(&s1, 0.5 * k);
    assert!(s1.wronskian(C::new(0.0, 0.0)).unwrap().norm() > 0.1 * scale);
}

#[test]
fn wronskian_conjugation_symmetry() {
    let g = sds();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for ell in [0, 1, 2] {
        let s = Shooter::new(&g, ell, ShootingConfig::covering(&g, 0.2)).unwrap();
        for _ in 0..20 {
            let z = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.2));
            let (a, b) = (s.wronskian(z).unwrap(), s.wronskian(-z.conj()).unwrap());
            assert!((a - b.conj()).norm() <= 1e-10 * a.norm(), "{ell} {z}");
        }
    }
}

#[test]
fn wronskian_cauchy_riemann() {
    let g = sds();
    let s = Shooter::new(&g, 1, ShootingConfig::covering(&g, 0.3)).unwrap();
    let d = 1e-3;
    // fourth-order central differences along a direction
    let diff = |z: C, e: C| {
        let w = |t: f64| s.wronskian(z + e * t).unwrap();
        (w(-2.0 * d) - w(-d) * 8.0 + w(d) * 8.0 - w(2.0 * d)) / (12.0 * d)
    };
    let mut worst: f64 = 0.0;
    for x in [-0.6, -0.2, 0.1, 0.45] {
        for y in [-0.3, 0.0, 0.12, 0.25] {
            let z = C::new(x, y);
            let fx = diff(z, C::new(1.0, 0.0));
            let fy = diff(z, C::new(0.0, 1.0));
            worst = worst.max((fy - C::new(0.0, 1.0) * fx).norm() / fx.norm());
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn renormalization_does_not_move_zeros() {
    let g = sds();
    let z = C::new(0.2602878543674, 0.0910025362964);
    for (kb, kd) in [(1, 2), (3, 5), (6, 9)] {
        let cfg = ShootingConfig { lattice_bh: kb, lattice_ds: kd, ..ShootingConfig::default() };
        let s = Shooter::new(&g, 1, cfg).unwrap();
        let scale = circle_scale(&s, 0.1);
        assert!(s.wronskian(z).unwrap().norm() < 1e-9 * scale);
    }
}

#[test]
fn ell_zero_box_holds_only_the_zero_resonance() {
    let g = sds();
    let k = g.horizons.kappa_min();
    let set =
        resolvent::find_resonances(&g, 0, SearchBox::new([-0.1, 0.1], [-0.05, 0.3 * k]), &SearchConfig::default())
            .unwrap();
    assert_eq!(set.winding_number, 1);
    assert_eq!(set.resonances.len(), 1);
    let r = set.resonances[0];
    assert!(r.sigma.norm() < 1e-10 && r.simple && r.multiplicity == 1);
    assert!(set.symmetry_defect.unwrap() < 1e-10);
}

#[test]
fn higher_channels_are_pole_free_near_zero() {
    let g = sds();
    let k = 0.1 * g.horizons.kappa_min();
    for ell in 1..=3 {
        let set = resolvent::find_resonances(&g, ell, SearchBox::new([-k, k], [-k, k]), &SearchConfig::default())
            .unwrap();
        assert_eq!(set.winding_number, 0, "{ell}");
        assert!(set.resonances.is_empty());
    }
}

#[test]
fn low_resonances_match_frozen_values() {
    // independent shooting in extended precision
    let g = sds();
    let cfg = SearchConfig::default();
    let set = resolvent::find_resonances(&g, 1, SearchBox::new([-0.4, 0.4], [-0.05, 0.15]), &cfg).unwrap();
    let expect = [
        C::new(0.0, 0.0815654957476),
        C::new(-0.2602878543674, 0.0910025362964),
        C::new(0.2602878543674, 0.0910025362964),
    ];
    assert_eq!(set.resonances.len(), 3);
    for (r, e) in set.resonances.iter().zip(expect) {
        assert!((r.sigma - e).norm() < 1e-9, "{} vs {e}", r.sigma);
        assert!(r.simple && r.sigma.im > 0.0);
    }
    assert!(set.symmetry_defect.unwrap() < 1e-10);
    let set = resolvent::find_resonances(&g, 0, SearchBox::new([-0.2, 0.2], [-0.05, 0.12]), &cfg).unwrap();
    let expect = [C::new(0.0, 0.0), C::new(-0.0976250313451, 0.1039065760722), C::new(0.0976250313451, 0.1039065760722)];
    assert_eq!(set.resonances.len(), 3);
    for (r, e) in set.resonances.iter().zip(expect) {
        assert!((r.sigma - e).norm() < 1e-9, "{} vs {e}", r.sigma);
    }
}

#[test]
fn resonances_lie_in_the_continuation_half_plane() {
    let g = sds();
    for ell in 0..=2 {
        let set =
            resolvent::find_resonances(&g, ell, SearchBox::new([-0.5, 0.5], [-0.3, 0.12]), &SearchConfig::default())
                .unwrap();
        for r in &set.resonances {
            assert!(r.sigma.im > -1e-10, "{ell} {}", r.sigma);
            assert!(r.newton_residual < 1e-8 * r.derivative.max(1.0));
        }
        assert!(set.symmetry_defect.unwrap() < 1e-9);
    }
}

/// Regular solution `r^(l+1) mu^(i sigma / 2) y(r^2)` of the pure de Sitter
/// channel with `y` the Gauss series of `(a, b; c)`; returns the coefficients.
fn gauss_coefficients(ell: u32, sigma: C, terms: usize) -> Vec<C> {
    let i = C::new(0.0, 1.0);
    let l = ell as f64;
    let a = (i * sigma + l) * 0.5;
    let b = (i * sigma + l + 3.0) * 0.5;
    let c = l + 1.5;
    let mut out = vec![C::new(1.0, 0.0)];
    for n in 0..terms {
        let nf = n as f64;
        let next = out[n] * (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0));
        out.push(next);
    }
    out
}

#[test]
fn pure_de_sitter_ladder_matches_series_oracle() {
    let d = Geometry::new(SpacetimeParams::de_sitter(3.0)).unwrap();
    let kappa = d.horizons.kappa_ds;
    for ell in 0..=2u32 {
        let mut expect = Vec::new();
        for k in 0..=6 {
            let sigma = C::new(0.0, kappa * k as f64);
            let coefs = gauss_coefficients(ell, sigma, 60);
            if coefs[59].norm() != 0.0 {
                continue;
            }
            // validate the oracle: the polynomial solution satisfies the radial equation
            let phi = |r: f64| {
                let y: C = coefs.iter().enumerate().map(|(n, c)| c * (r * r).powi(n as i32)).sum();
                y * r.powi(ell as i32 + 1) * C::new(1.0 - r * r, 0.0).powc(C::new(0.0, 0.5) * sigma)
            };
            for r in [0.3, 0.5, 0.7] {
                let mu = |x: f64| 1.0 - x * x;
                let op = |h: f64| {
                    let flux = |x: f64| (phi(x + 0.5 * h) - phi(x - 0.5 * h)) / h * mu(x);
                    (flux(r + 0.5 * h) - flux(r - 0.5 * h)) / h * mu(r)
                };
                let lhs = (op(1e-3) * 4.0 - op(2e-3)) / 3.0;
                let v = modes::potential_at(&d, ell, r);
                let res = lhs + (sigma * sigma - v) * phi(r);
                assert!(res.norm() < 1e-5 * (phi(r).norm() + lhs.norm()), "oracle l={ell} k={k}");
            }
            expect.push(sigma);
        }
        let set = resolvent::find_resonances(
            &d,
            ell,
            SearchBox::new([-0.5, 0.5], [-0.5, 6.5 * kappa]),
            &SearchConfig::default(),
        )
        .unwrap();
        let found: Vec<C> = set.resonances.iter().map(|r| r.sigma).collect();
        assert_eq!(found.len(), expect.len(), "l={ell}: {found:?} vs {expect:?}");
        for (f, e) in found.iter().zip(&expect) {
            assert!((f - e).norm() < 1e-4, "l={ell}: {f} vs {e}");
            assert!(f.re.abs() < 1e-8);
        }
    }
}

fn residue_setup() -> (Geometry, RadialGrid, ModePotential) {
    let g = sds();
    let grid = RadialGrid::uniform(&g, -60.0, 80.0, 0.1).unwrap();
    let pot = modes::potential(&g, &grid, 0);
    (g, grid, pot)
}

#[test]
fn residue_is_a_constant_profile() {
    let (g, grid, pot) = residue_setup();
    let data = resolvent::residue_at_zero(&grid, &pot, &ResidueConfig::default()).unwrap();
    assert!(data.constancy_defect < 1e-6, "{:e}", data.constancy_defect);
    // exact discrete value from the summed flux identity
    let n = grid.len();
    let r = |i: usize| grid.nodes[i].r;
    let exact = C::new(0.0, -1.0) / (r(0) * r(1) + r(n - 2) * r(n - 1));
    assert!((data.gamma_res - exact).norm() < 1e-8 * exact.norm(), "{} vs {exact}", data.gamma_res);
    let h = g.horizons;
    let continuum = C::new(0.0, -1.0) / (h.r_bh * h.r_bh + h.r_ds * h.r_ds);
    assert!((data.gamma_res - continuum).norm() < 1e-3 * continuum.norm());
}

#[test]
fn residue_is_linear_and_constant_for_any_source() {
    let (_, grid, pot) = residue_setup();
    let data = resolvent::residue_at_zero(&grid, &pot, &ResidueConfig::default()).unwrap();
    let g1 = gaussian(&grid, -5.0, 1.0);
    let g2: Vec<C> = gaussian(&grid, 12.0, 3.0).iter().map(|x| x * C::new(0.3, -2.0)).collect();
    let sum: Vec<C> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
    let r1 = data.residue_of(&g1, &grid, &pot).unwrap();
    let r2 = data.residue_of(&g2, &grid, &pot).unwrap();
    let r12 = data.residue_of(&sum, &grid, &pot).unwrap();
    let scale = sup(&r12);
    for i in 0..grid.len() {
        assert!((r12[i] - r1[i] - r2[i]).norm() < 1e-12 * scale);
    }
    for (g, res) in [(&g1, &r1), (&g2, &r2)] {
        assert!(resolvent::constancy_defect(&grid, res) < 1e-6);
        let c = data.constant_for(&grid, g);
        let i = grid.index_of(0.0);
        let psi = res[i] / grid.nodes[i].r;
        assert!((psi - c).norm() < 1e-6 * c.norm());
    }
}

#[test]
fn strip_scan_physical_side_is_polynomially_bounded() {
    let charts = Charts::new(sds(), &ChartConfig::default()).unwrap();
    let scan = resolvent::strip_bound_scan(&charts, 1, -0.5, [1.0, 30.0], 8, 0.0, &StripConfig::default()).unwrap();
    assert_eq!(scan.samples.len(), 8);
    assert!(scan.samples.iter().all(|s| s.surrogate.is_finite() && s.surrogate > 0.0));
    let slope = scan.growth_exponent.unwrap();
    assert!(slope.is_finite() && slope < 4.0, "{slope}");
}

#[test]
fn strip_scan_above_the_axis_is_finite_and_weight_absorbs_growth() {
    let g = sds();
    let s = 0.2 * g.horizons.kappa_bh;
    let charts = Charts::new(g, &ChartConfig::default()).unwrap();
    let scan = resolvent::strip_bound_scan(&charts, 0, s, [0.5, 10.0], 6, 0.05, &StripConfig::default()).unwrap();
    for x in &scan.samples {
        assert!(x.surrogate.is_finite(), "{}", x.sigma);
        assert!(x.surrogate < x.unweighted, "{}", x.sigma);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn residual_identity_holds(re in -2.0f64..2.0, im in -1.5f64..-0.05, ell in 0u32..4, c in -10.0f64..10.0) {
        let g = sds();
        let grid = RadialGrid::uniform(&g, -30.0, 30.0, 0.1).unwrap();
        let pot = modes::potential(&g, &grid, ell);
        let src = gaussian(&grid, c, 1.5);
        let sol = resolvent::solve(C::new(re, im), &src, &grid, &pot, &SolveConfig::default()).unwrap();
        prop_assert!(sol.residual < 1e-8);
        let bound = l2(&src, grid.spacing) / (C::new(re, im) * C::new(re, im)).im.abs();
        if ell == 0 {
            prop_assert!(l2(&sol.w, grid.spacing) <= bound * (1.0 + 1e-12));
        }
    }
}
