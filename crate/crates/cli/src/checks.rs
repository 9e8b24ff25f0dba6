//! Acceptance battery shared by `theorem-check`, `charts-verify`,
//! `mellin-verify` and the acceptance test target.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use dsswave_core::asymptotics::{self, TailFit};
use dsswave_core::charts::{ChartId, ChartPoint, Charts, Side};
use dsswave_core::resolvent::{self, ResonanceSet, SearchBox};
use dsswave_core::{
    evolve, geometry, modes, Boundary, Error, EvolutionConfig, EvolutionOutput, FitConfig, Geometry,
    MellinReconstruction, RadialGrid, SpacetimeParams, WaveState,
};

use crate::config::{ProbeFit, ScenarioConfig};
use crate::output::{csv_string, sha256_hex, Cell};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub passed: bool,
    pub note: String,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value: Some(value), limit: Some(limit), passed: value <= limit, note: String::new() }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value: Some(value), limit: Some(limit), passed: value >= limit, note: String::new() }
    }

    pub fn holds(name: impl Into<String>, passed: bool, note: impl Into<String>) -> Self {
        Self { name: name.into(), value: None, limit: None, passed, note: note.into() }
    }

    pub fn error(name: impl Into<String>, err: &Error) -> Self {
        Self::holds(name, false, err.to_string())
    }

    fn noted(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Criterion {
    fn new(id: u32, title: &str, checks: Vec<Check>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self { id, title: title.to_string(), checks, passed }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------------------
// 1. Geometry

pub fn geometry(cfg: &ScenarioConfig) -> Criterion {
    let gc = &cfg.acceptance.geometry;
    let mut checks = Vec::new();
    let extremal = geometry::horizons_with(&SpacetimeParams::new(1.0, gc.extremal_lambda), &cfg.geometry);
    checks.push(Check::holds(
        "extremal parameters rejected",
        matches!(extremal, Err(Error::ExtremalOrInvalidParams { .. })),
        format!("{extremal:?}"),
    ));
    match geometry::horizons_with(&SpacetimeParams::new(1.0, gc.schwarzschild_lambda), &cfg.geometry) {
        Ok(h) => checks.push(Check::at_most("|kappa_bh - 1/(4m)|", (h.kappa_bh - 0.25).abs(), gc.schwarzschild_tol)),
        Err(e) => checks.push(Check::error("|kappa_bh - 1/(4m)|", &e)),
    }
    let mut sets = vec![[1.0, 0.02], [1.0, 0.1], [0.5, 0.01], [1.0, gc.schwarzschild_lambda], [1.0, 0.11]];
    if !cfg.spacetime.de_sitter {
        sets.push([cfg.spacetime.m, cfg.spacetime.lambda]);
    }
    let mut worst = 0.0f64;
    for [m, l] in sets {
        match geometry::horizons_with(&SpacetimeParams::new(m, l), &cfg.geometry) {
            Ok(h) => worst = worst.max((h.r_neg + h.r_bh + h.r_ds).abs() / h.r_ds),
            Err(e) => checks.push(Check::error(format!("horizons at m = {m}, lambda = {l}"), &e)),
        }
    }
    checks.push(Check::at_most("|r_neg + r_bh + r_dS| / r_dS", worst, gc.root_sum_tol));
    Criterion::new(1, "geometry exactness", checks)
}

// ---------------------------------------------------------------------------
// 2, 3. Charts

fn product_at_mu(c: &Charts, t: f64, mu: f64, side: Side) -> dsswave_core::Result<ChartPoint> {
    Ok(ChartPoint::product(t, c.radius_from_mu(mu, side)?, side))
}

fn pushed_rho_coefficient(c: &Charts, mu: f64) -> dsswave_core::Result<f64> {
    let p = product_at_mu(c, 4.0, mu, Side::Bh)?;
    Ok(c.transported_metric(&p, ChartId::BlowupBh)?.matrix[0][0])
}

fn richardson(a: f64, b: f64, e: f64) -> f64 {
    let (r1, r2) = (2.0 * b - a, 2.0 * e - b);
    (4.0 * r2 - r1) / 3.0
}

/// `lim (beta(r_bh)^2 - beta(r)^2) / mu` by Richardson extrapolation in `r - r_bh`.
fn gamma_limit(g: &Geometry) -> f64 {
    let rh = g.horizons.r_bh;
    let q = |d: f64| {
        let r = rh + d;
        (g.beta(rh).powi(2) - g.beta(r).powi(2)) / g.mu(r)
    };
    let d = 1e-3;
    richardson(q(d), q(d / 2.0), q(d / 4.0))
}

fn pushforward_samples(c: &Charts, seed: u64, count: usize, side: Side) -> dsswave_core::Result<Vec<ChartPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = (0.9 * c.mu_max()).min(0.3);
    (0..count)
        .map(|_| {
            let mu = 1e-3 * (top / 1e-3).powf(rng.gen::<f64>());
            let t = 2.0 + 10.0 * rng.gen::<f64>();
            product_at_mu(c, t, mu, side)
        })
        .collect()
}

fn pushforward_check(c: &Charts, source: ChartId, target: ChartId, samples: &[ChartPoint], tol: f64) -> Check {
    let name = format!("pushforward {} -> {}", source.name(), target.name());
    let run = || -> dsswave_core::Result<(f64, f64)> {
        let rep = c.pushforward_check(source, target, samples)?;
        let mut scale = 1.0f64;
        for p in samples {
            let g = c.dual_metric(&c.to_chart(p, target)?)?;
            scale = g.matrix.iter().flatten().fold(scale, |a, b| a.max(b.abs()));
        }
        Ok((rep.max_abs_discrepancy, scale))
    };
    match run() {
        Ok((d, scale)) => Check::at_most(name, d / scale, tol),
        Err(e) => Check::error(name, &e),
    }
}

pub fn cancellation(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let cc = &cfg.acceptance.charts;
    let c = Charts::new(cfg.geometry()?, &cfg.charts)?;
    let mut checks = Vec::new();
    let kappa = c.geom.horizons.kappa_bh;

    let seq: dsswave_core::Result<Vec<f64>> =
        (0..4).map(|j| pushed_rho_coefficient(&c, cc.mu0 / 2f64.powi(j))).collect();
    match seq {
        Ok(k) => {
            let e1 = richardson(k[0], k[1], k[2]);
            let e2 = richardson(k[1], k[2], k[3]);
            checks.push(Check::at_most("Richardson extrapolants of the (rho d_rho)^2 coefficient", (e1 - e2).abs(), cc.richardson_tol));
            checks.push(Check::at_most(
                "limit vs 4 lim (beta_bh^2 - beta^2) / mu",
                (e1 - 4.0 * gamma_limit(&c.geom)).abs(),
                cc.richardson_tol,
            ));
        }
        Err(e) => checks.push(Check::error("Richardson extrapolants", &e)),
    }
    let dmu = (|| -> dsswave_core::Result<f64> {
        let mu = 0.01;
        let p = product_at_mu(&c, 4.0, mu, Side::Bh)?;
        let moved = c.transported_metric(&p, ChartId::BlowupBh)?;
        let beta = c.geom.beta(p.coords[1]);
        Ok((moved.matrix[1][1] + 4.0 * beta * beta * mu).abs())
    })();
    match dmu {
        Ok(d) => checks.push(Check::at_most("(d_mu)^2 coefficient + 4 beta^2 mu", d, cc.coefficient_tol)),
        Err(e) => checks.push(Check::error("(d_mu)^2 coefficient", &e)),
    }

    let wrong = c.with_lambdas(cc.control_factor * c.lambda_bh, c.lambda_ds);
    let target = 4.0 * (wrong.lambda_bh.powi(2) - kappa * kappa);
    let control: dsswave_core::Result<Vec<f64>> =
        (0..4).map(|j| cc.mu0 / 4f64.powi(j)).map(|mu| pushed_rho_coefficient(&wrong, mu).map(|v| mu * v)).collect();
    match control {
        Ok(v) => {
            let worst = v.iter().map(|x| rel(*x, target)).fold(0.0f64, f64::max);
            checks.push(
                Check::at_most("negative control: mu * coefficient vs 4 (lambda^2 - kappa_bh^2)", worst, cc.control_tol)
                    .noted(format!("lambda = {} (factor {})", wrong.lambda_bh, cc.control_factor)),
            );
        }
        Err(e) => checks.push(Check::error("negative control", &e)),
    }

    let (bh, ds) = (
        pushforward_samples(&c, cfg.seed, cc.pushforward_samples, Side::Bh)?,
        pushforward_samples(&c, cfg.seed.wrapping_add(1), cc.pushforward_samples, Side::Ds)?,
    );
    checks.push(pushforward_check(&c, ChartId::Product, ChartId::BlowupBh, &bh, cc.pushforward_tol));
    let blown: dsswave_core::Result<Vec<ChartPoint>> = bh.iter().map(|p| c.to_chart(p, ChartId::BlowupBh)).collect();
    match blown {
        Ok(b) => checks.push(pushforward_check(&c, ChartId::BlowupBh, ChartId::BlowdownBh, &b, cc.pushforward_tol)),
        Err(e) => checks.push(Check::error("blow-up samples", &e)),
    }
    for target in [ChartId::BlowupDs, ChartId::BlowdownDs, ChartId::TfDefining] {
        checks.push(pushforward_check(&c, ChartId::Product, target, &ds, cc.pushforward_tol));
    }
    Ok(Criterion::new(2, "dual metric cancellation at the black-hole face", checks))
}

pub fn faces(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let cc = &cfg.acceptance.charts;
    let c = Charts::new(cfg.geometry()?, &cfg.charts)?;
    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for (chart, side) in [(ChartId::BlowdownBh, Side::Bh), (ChartId::BlowdownDs, Side::Ds)] {
        for s in [0.05, 0.2, 0.5] {
            let g = c.dual_metric(&ChartPoint::new(chart, s, 0.0, side))?;
            worst = worst.max(g.eval([0.0, 1.0], 0.0).abs());
            let g = c.dual_metric(&ChartPoint::new(chart, 0.0, s, side))?;
            worst = worst.max(g.eval([1.0, 0.0], 0.0).abs());
        }
    }
    checks.push(Check::at_most("G(ds, ds) on the four scattering faces", worst, cc.null_tol));
    let mut worst = 0.0f64;
    for (chart, side) in [(ChartId::BlowupBh, Side::Bh), (ChartId::BlowupDs, Side::Ds)] {
        let g = c.dual_metric(&ChartPoint::new(chart, 0.3, 0.0, side))?;
        worst = worst.max(g.eval([0.0, 1.0], 0.0).abs());
    }
    checks.push(Check::at_most("G(d mu, d mu) at mu = 0", worst, cc.null_tol));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let h = c.geom.horizons;
    let mut worst = 0.0f64;
    for _ in 0..64 {
        let t = 1.5 + 28.5 * rng.gen::<f64>();
        let r = h.r_bh + (h.r_ds - h.r_bh) * (0.01 + 0.98 * rng.gen::<f64>());
        let p = ChartPoint::product(t, r, c.side_of(r));
        let mu = c.geom.mu(r);
        for target in [ChartId::BlowdownBh, ChartId::BlowdownDs] {
            let q = c.to_chart(&p, target)?;
            worst = worst.max((q.coords[0] * q.coords[1] - mu).abs() / (f64::EPSILON * mu));
        }
    }
    checks.push(Check::at_most("|s_+ s_- - mu| / (eps mu)", worst, cc.product_ulps));
    Ok(Criterion::new(3, "characteristic scattering faces", checks))
}

// ---------------------------------------------------------------------------
// 4. Mode reduction

fn d2(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let s = |h: f64| (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h);
    (16.0 * s(h / 2.0) - s(h)) / 15.0
}

pub fn mode_oracle(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let mc = &cfg.acceptance.modes;
    let profiles: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = vec![
        Box::new(|s: f64| (-(s - 1.0).powi(2) / 4.0).exp()),
        Box::new(|s: f64| (0.7 * s).sin() / (s / 5.0).cosh()),
        Box::new(|s: f64| (s / 3.0).tanh()),
        Box::new(|s: f64| 1.0 / (1.0 + 0.1 * s * s)),
        Box::new(|s: f64| (-s * s / 10.0).exp() * s.cos()),
    ];
    let mut worst = 0.0f64;
    for &[m, lambda] in &mc.params {
        let g = Geometry::with_config(SpacetimeParams::new(m, lambda), &cfg.geometry)?;
        for ell in 0..=mc.l_max {
            for phi in &profiles {
                for s in [-12.0, -4.0, 0.0, 2.5, 9.0] {
                    let r = g.tortoise_inverse(s)?;
                    let psi = |rr: f64| g.tortoise(rr).map(|x| phi(x) / rr).unwrap_or(f64::NAN);
                    let h = 1e-2 * (r - g.horizons.r_bh).min(g.horizons.r_ds - r).min(1.0);
                    let direct = modes::mode_laplacian(&g, ell, &psi, r, h);
                    let v = modes::potential_at(&g, ell, r);
                    let dd = d2(&|x| phi(x), s, 0.05);
                    let reduced = (-dd + v * phi(s)) / r;
                    let d1 = (phi(s + 1e-4) - phi(s - 1e-4)) / 2e-4;
                    let scale = (dd.abs() + d1.abs() + (v * phi(s)).abs()) / r;
                    worst = worst.max((direct - reduced).abs() / scale.max(1e-300));
                }
            }
        }
    }
    let checks = vec![Check::at_most(
        format!("relative defect, l <= {}, {} parameter sets", mc.l_max, mc.params.len()),
        worst,
        mc.tol,
    )];
    Ok(Criterion::new(4, "mode reduction oracle", checks))
}

// ---------------------------------------------------------------------------
// Desk-scale runs shared by 5 and 7

#[derive(Debug, Clone)]
pub struct DeskRuns {
    pub geom: Geometry,
    pub grid: RadialGrid,
    pub initial0: WaveState,
    pub ell0: EvolutionOutput,
    pub ell1: EvolutionOutput,
    /// `(l, run)` for channels that must converge to zero.
    pub zero: Vec<(u32, EvolutionOutput)>,
}

pub fn desk_runs(cfg: &ScenarioConfig) -> dsswave_core::Result<DeskRuns> {
    let th = &cfg.acceptance.theorem;
    let geom = cfg.geometry()?;
    let grid = RadialGrid::surface_gravity_normalized(&geom, th.extent, cfg.evolution.spacing)?;
    let initial0 = th.ell0.profile.state(&grid, 0);
    let probes = |fits: &[ProbeFit]| fits.iter().map(|p| p.r_star).collect::<Vec<f64>>();
    let evo0 = EvolutionConfig {
        t_end: th.ell0.t_end,
        probes: probes(&th.ell0.probes),
        snapshot_every: Some(th.snapshot_every),
        ..cfg.evolution.clone()
    };
    let evo1 = EvolutionConfig { t_end: th.ell1.t_end, probes: probes(&th.ell1.probes), snapshot_every: None, ..cfg.evolution.clone() };
    let mut ells = vec![1u32];
    ells.extend(th.zero_channels.iter().copied().filter(|&l| l != 1));
    let jobs: Vec<Option<u32>> = std::iter::once(None).chain(ells.iter().map(|&l| Some(l))).collect();
    let mut outs = jobs
        .par_iter()
        .map(|job| match job {
            None => evolve::evolve(&initial0, &modes::potential(&geom, &grid, 0), &grid, &evo0),
            Some(l) => {
                let s = th.ell1.profile.state(&grid, *l);
                evolve::evolve(&s, &modes::potential(&geom, &grid, *l), &grid, &evo1)
            }
        })
        .collect::<dsswave_core::Result<Vec<_>>>()?
        .into_iter();
    let ell0 = outs.next().expect("l = 0 run");
    let ell1 = outs.next().expect("l = 1 run");
    let mut zero: Vec<(u32, EvolutionOutput)> = ells[1..].iter().copied().zip(outs).collect();
    if th.zero_channels.contains(&1) {
        zero.insert(0, (1, ell1.clone()));
    }
    zero.sort_by_key(|z| z.0);
    Ok(DeskRuns { geom, grid, initial0, ell0, ell1, zero })
}

fn probe_fit(out: &EvolutionOutput, k: usize, window: [f64; 2], cfg: &FitConfig) -> dsswave_core::Result<TailFit> {
    asymptotics::fit_tail(&out.series.times, &out.series.probes[k].psi(), window, cfg)
}

/// Fits at every configured probe of the l = 0 run.
pub fn ell0_fits(cfg: &ScenarioConfig, runs: &DeskRuns) -> Vec<dsswave_core::Result<TailFit>> {
    let th = &cfg.acceptance.theorem;
    th.ell0.probes.par_iter().enumerate().map(|(k, p)| probe_fit(&runs.ell0, k, p.window, &cfg.fit)).collect()
}

// ---------------------------------------------------------------------------
// 5. Convergence to a constant

pub fn decay(cfg: &ScenarioConfig, runs: &DeskRuns) -> dsswave_core::Result<Criterion> {
    let th = &cfg.acceptance.theorem;
    let mut checks = Vec::new();
    let fits = ell0_fits(cfg, runs);
    for (p, f) in th.ell0.probes.iter().zip(&fits) {
        let name = format!("l = 0 window variation at r_* = {}", p.r_star);
        match f {
            Ok(f) => {
                checks.push(Check::at_most(name, f.window_variation, cfg.fit.stability_tol).noted(format!("c = {}", f.c)));
                checks.push(Check::at_least(format!("l = 0 fitted nu at r_* = {}", p.r_star), f.nu, f64::MIN_POSITIVE));
            }
            Err(e) => checks.push(Check::error(name, e)),
        }
    }
    let ok: Vec<&TailFit> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
    if ok.len() == fits.len() && ok.len() >= 2 {
        let (first, last) = (ok[0], ok[ok.len() - 1]);
        let spread = ok.iter().map(|f| (f.c - first.c).abs()).fold(0.0f64, f64::max) / first.c.abs();
        checks.push(Check::at_most("relative spread of c across probes", spread, cfg.fit.stability_tol));
        checks.push(
            Check::at_most("black-hole side vs dS side decay rate", rel(first.nu, last.nu), th.rate_agreement)
                .noted(format!("nu = {} and {}", first.nu, last.nu)),
        );
        let snaps: Vec<WaveState> = runs.ell0.snapshots.iter().filter(|s| s.t >= th.uniformity_start).cloned().collect();
        match asymptotics::uniformity_check(&snaps, &runs.grid, first.c, th.uniformity_region) {
            Ok(u) => {
                let dev = u.deviation_rate.unwrap_or(f64::NAN);
                let der = u.derivative_rate.unwrap_or(f64::NAN);
                checks.push(Check::at_least("decay rate of sup |psi - c|", dev, f64::MIN_POSITIVE));
                checks.push(Check::at_least("decay rate of sup |d psi / d r_*|", der, f64::MIN_POSITIVE));
            }
            Err(e) => checks.push(Check::error("uniformity", &e)),
        }
    }
    for (l, out) in &runs.zero {
        for (k, p) in th.ell1.probes.iter().enumerate() {
            let name = format!("l = {l} constant at r_* = {}", p.r_star);
            match probe_fit(out, k, p.window, &cfg.fit) {
                Ok(f) => {
                    let scale = sup(&out.series.probes[k].psi());
                    checks.push(Check::at_most(name, f.c.abs() / scale, th.zero_tol).noted(format!("c = {:e}", f.c)));
                }
                Err(e) => checks.push(Check::error(name, &e)),
            }
        }
    }
    Ok(Criterion::new(5, "uniform exponential convergence to a constant", checks))
}

// ---------------------------------------------------------------------------
// 6. Spectral gap

pub fn search(cfg: &ScenarioConfig, geom: &Geometry, ell: u32, b: SearchBox) -> dsswave_core::Result<ResonanceSet> {
    resolvent::find_resonances(geom, ell, b, &cfg.resonances.search)
}

pub fn spectral_gap(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let th = &cfg.acceptance.theorem;
    let geom = cfg.geometry()?;
    let k = geom.horizons.kappa_min();
    let mut checks = Vec::new();
    let gap = SearchBox::new([-th.gap_re, th.gap_re], [-0.5 * th.gap_re, th.gap_im_frac * k]);
    match search(cfg, &geom, 0, gap) {
        Ok(set) => {
            checks.push(Check::holds("l = 0 winding number is 1", set.winding_number == 1, format!("{}", set.winding_number)));
            checks.push(Check::holds("l = 0 box holds one zero", set.resonances.len() == 1, format!("{}", set.resonances.len())));
            if let Some(r) = set.resonances.first() {
                checks.push(Check::at_most("|sigma| of the l = 0 zero", r.sigma.norm(), th.zero_resonance_tol));
                checks.push(Check::holds("the zero is simple", r.simple && r.multiplicity == 1, ""));
            }
        }
        Err(e) => checks.push(Check::error("l = 0 gap box", &e)),
    }
    let e = th.exclusion_frac * k;
    for &ell in &th.exclusion_ells {
        match search(cfg, &geom, ell, SearchBox::new([-e, e], [-e, e])) {
            Ok(set) => checks.push(Check::holds(
                format!("l = {ell} pole free in |sigma| < {} kappa_min", th.exclusion_frac),
                set.winding_number == 0 && set.resonances.is_empty(),
                format!("winding {}, {} zeros", set.winding_number, set.resonances.len()),
            )),
            Err(err) => checks.push(Check::error(format!("l = {ell} exclusion box"), &err)),
        }
    }
    for b in &cfg.resonances.boxes {
        if (b.re[0] + b.re[1]).abs() > 1e-12 {
            continue;
        }
        match search(cfg, &geom, b.ell, b.search_box()) {
            Ok(set) => checks.push(Check::at_most(
                format!("l = {} symmetry sigma -> -conj(sigma)", b.ell),
                set.symmetry_defect.unwrap_or(f64::NAN),
                th.symmetry_tol,
            )),
            Err(err) => checks.push(Check::error(format!("l = {} box", b.ell), &err)),
        }
    }
    Ok(Criterion::new(6, "pole-free strip and simple pole at zero", checks))
}

// ---------------------------------------------------------------------------
// 7. Time-frequency consistency

/// Resonance with the smallest positive imaginary part.
pub fn lowest_resonance(set: &ResonanceSet, zero_tol: f64) -> Option<Complex64> {
    set.resonances
        .iter()
        .map(|r| r.sigma)
        .filter(|s| s.norm() > zero_tol && s.im > 0.0)
        .min_by(|a, b| a.im.total_cmp(&b.im).then(a.re.abs().total_cmp(&b.re.abs())))
}

fn mode_agreement(checks: &mut Vec<Check>, ell: u32, fit: &TailFit, sigma: Complex64, tol: f64) {
    checks.push(
        Check::at_most(format!("l = {ell} fitted nu vs Im sigma_1"), rel(fit.nu, sigma.im), tol)
            .noted(format!("nu = {}, sigma_1 = {} + {}i", fit.nu, sigma.re, sigma.im)),
    );
    let re = sigma.re.abs();
    if re > tol * sigma.norm() {
        checks.push(
            Check::at_most(format!("l = {ell} fitted omega vs |Re sigma_1|"), rel(fit.omega, re), tol)
                .noted(format!("omega = {}", fit.omega)),
        );
    } else {
        checks.push(
            Check::at_most(format!("l = {ell} |omega| / |sigma_1| for a purely decaying mode"), fit.omega.abs() / sigma.norm(), tol)
                .noted(format!("omega = {}", fit.omega)),
        );
    }
}

fn box_for(cfg: &ScenarioConfig, ell: u32) -> Option<SearchBox> {
    cfg.resonances.boxes.iter().find(|b| b.ell == ell).map(|b| b.search_box())
}

pub fn consistency(cfg: &ScenarioConfig, runs: &DeskRuns) -> dsswave_core::Result<Criterion> {
    let th = &cfg.acceptance.theorem;
    let geom = &runs.geom;
    let mut checks = Vec::new();
    let fit0 = ell0_fits(cfg, runs).into_iter().next().expect("l = 0 probe");
    for ell in [1u32, 0] {
        let Some(b) = box_for(cfg, ell) else {
            checks.push(Check::holds(format!("l = {ell} resonance box configured"), false, ""));
            continue;
        };
        let sigma = match search(cfg, geom, ell, b) {
            Ok(set) => lowest_resonance(&set, th.zero_resonance_tol),
            Err(e) => {
                checks.push(Check::error(format!("l = {ell} resonance search"), &e));
                continue;
            }
        };
        let Some(sigma) = sigma else {
            checks.push(Check::holds(format!("l = {ell} decaying resonance in box"), false, format!("{b:?}")));
            continue;
        };
        let fit = if ell == 1 {
            let p = th.ell1.probes[0];
            probe_fit(&runs.ell1, 0, p.window, &cfg.fit)
        } else {
            fit0.clone()
        };
        match fit {
            Ok(f) => mode_agreement(&mut checks, ell, &f, sigma, th.resonance_agreement),
            Err(e) => checks.push(Check::error(format!("l = {ell} tail fit"), &e)),
        }
    }

    let pot = modes::potential(geom, &runs.grid, 0);
    let pi0: Vec<Complex64> = runs.initial0.pi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let residue = resolvent::residue_at_zero(&runs.grid, &pot, &th.residue);
    let h = geom.horizons;
    let pairing = resolvent::radial_pairing(&runs.grid, &pi0).re / (h.r_bh * h.r_bh + h.r_ds * h.r_ds);
    match (fit0, residue) {
        (Ok(f), Ok(res)) => {
            let c_res = (Complex64::i() * res.constant_for(&runs.grid, &pi0)).re;
            for (name, a, b) in [
                ("fit c vs residue c", f.c, c_res),
                ("fit c vs gamma pairing", f.c, pairing),
                ("residue c vs gamma pairing", c_res, pairing),
            ] {
                checks.push(Check::at_most(name, rel(a, b), th.triangle_tol).noted(format!("{a} vs {b}")));
            }
        }
        (Err(e), _) | (_, Err(e)) => checks.push(Check::error("constant triangle", &e)),
    }
    Ok(Criterion::new(7, "time-frequency consistency", checks))
}

// ---------------------------------------------------------------------------
// 8. Mellin round trip

pub fn mellin(cfg: &ScenarioConfig) -> dsswave_core::Result<(Criterion, Option<MellinReconstruction>)> {
    let m = &cfg.mellin;
    let rc = &m.reconstruction;
    let geom = cfg.geometry()?;
    let charts = Charts::new(geom.clone(), &cfg.charts)?;
    let grid = RadialGrid::surface_gravity_normalized(&geom, m.extent, cfg.evolution.spacing)?;
    let pot = modes::potential(&geom, &grid, m.ell);
    let init = m.profile.state(&grid, m.ell);
    let evo = EvolutionConfig { t_end: m.t_end, probes: m.probes.clone(), snapshot_every: None, ..cfg.evolution.clone() };
    let run = asymptotics::record_cutoff_run(&init, &pot, &grid, &charts, &evo, &m.cutoff)?;
    let rec = match asymptotics::mellin_reconstruct(&run, &grid, &pot, rc) {
        Ok(r) => r,
        Err(e) => {
            let checks = vec![Check::error("contour reconstruction", &e)];
            return Ok((Criterion::new(8, "Mellin round trip and contour shift", checks), None));
        }
    };
    let mut checks = vec![
        Check::at_most("sup |time - frequency| / sup |time|", rec.reconstruction_error, rc.reconstruction_tol),
        Check::at_most("contour height independence", rec.contour_defect, rc.contour_tol),
        Check::at_most("max |psi - c| e^{eps t} / A", rec.remainder_ratio, 1.0),
    ];
    for l in &rec.lines {
        checks.push(Check::at_most(
            format!("frequency truncation on Im sigma = {}", l.s),
            l.tail_source / l.peak_source,
            rc.decay_tol,
        ));
    }
    if let Some(f) = &rec.c_fit {
        for (name, a, b) in
            [("fit c vs residue c", f.c, rec.c_residue), ("fit c vs shifted-contour c", f.c, rec.c_shift), ("residue c vs shifted-contour c", rec.c_residue, rec.c_shift)]
        {
            checks.push(Check::at_most(name, rel(a, b), rc.residue_tol).noted(format!("{a} vs {b}")));
        }
    }
    Ok((Criterion::new(8, "Mellin round trip and contour shift", checks), Some(rec)))
}

// ---------------------------------------------------------------------------
// 9. Pure de Sitter

/// Coefficients of the hypergeometric series of the static-patch mode with
/// frequency `sigma`; the series terminates exactly on the resonance ladder.
pub fn de_sitter_series(ell: u32, sigma: Complex64, terms: usize) -> Vec<Complex64> {
    let i = Complex64::i();
    let l = ell as f64;
    let a = (i * sigma + l) * 0.5;
    let b = (i * sigma + l + 3.0) * 0.5;
    let c = l + 1.5;
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for n in 0..terms {
        let nf = n as f64;
        let next = out[n] * (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0));
        out.push(next);
    }
    out
}

/// `sigma = i kappa k`, `k <= k_max`, with terminating series.
pub fn de_sitter_ladder(ell: u32, kappa: f64, k_max: usize, terms: usize) -> Vec<Complex64> {
    (0..=k_max)
        .map(|k| Complex64::new(0.0, kappa * k as f64))
        .filter(|&s| de_sitter_series(ell, s, terms)[terms - 1].norm() == 0.0)
        .collect()
}

fn flux_constant(grid: &RadialGrid, pi0: &[f64]) -> f64 {
    let n = grid.len();
    let q: f64 = (0..n)
        .map(|i| {
            let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
            w * grid.spacing * grid.nodes[i].r * pi0[i]
        })
        .sum();
    q / (grid.nodes[0].r.powi(2) + grid.nodes[n - 1].r.powi(2))
}

pub fn de_sitter(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let dc = &cfg.acceptance.de_sitter;
    let d = Geometry::with_config(SpacetimeParams::de_sitter(dc.lambda), &cfg.geometry)?;
    let kappa = d.horizons.kappa_ds;
    let mut checks = Vec::new();
    for ell in dc.ells[0]..=dc.ells[1] {
        let expect = de_sitter_ladder(ell, kappa, dc.ladder_max, dc.ladder_terms);
        let b = SearchBox::new([-0.5 * kappa, 0.5 * kappa], [-0.5 * kappa, (dc.ladder_max as f64 + 0.5) * kappa]);
        match search(cfg, &d, ell, b) {
            Ok(set) => {
                let found: Vec<Complex64> = set.resonances.iter().map(|r| r.sigma).collect();
                checks.push(Check::holds(
                    format!("l = {ell} ladder count"),
                    found.len() == expect.len(),
                    format!("{} found, {} expected", found.len(), expect.len()),
                ));
                if found.len() == expect.len() {
                    let dev = found.iter().zip(&expect).map(|(f, e)| (f - e).norm() / e.norm().max(kappa)).fold(0.0, f64::max);
                    let re = found.iter().map(|f| f.re.abs() / kappa).fold(0.0, f64::max);
                    checks.push(Check::at_most(format!("l = {ell} ladder vs series oracle"), dev, dc.ladder_tol));
                    checks.push(Check::at_most(format!("l = {ell} |Re sigma| / kappa"), re, dc.real_part_tol));
                }
            }
            Err(e) => checks.push(Check::error(format!("l = {ell} ladder search"), &e)),
        }
    }

    let grid = RadialGrid::uniform(&d, 0.0, dc.r_star_max, dc.spacing)?;
    let pot = modes::potential(&d, &grid, 0);
    let s = dc.profile.state(&grid, 0);
    let evo = EvolutionConfig {
        spacing: dc.spacing,
        t_end: dc.t_end,
        probes: dc.probes.to_vec(),
        record_every: cfg.evolution.cfl * dc.spacing,
        snapshot_every: None,
        ..cfg.evolution.clone()
    };
    let out = evolve::evolve(&s, &pot, &grid, &evo)?;
    let oracle = flux_constant(&grid, &s.pi);
    let rate = de_sitter_ladder(0, kappa, dc.ladder_max, dc.ladder_terms).into_iter().map(|s| s.im).find(|&x| x > 0.0);
    for (k, p) in out.series.probes.iter().enumerate() {
        let name = format!("l = 0 constant at r_* = {}", p.r_star);
        match asymptotics::fit_tail(&out.series.times, &p.psi(), dc.window, &dc.fit) {
            Ok(f) => {
                checks.push(Check::at_most(name, rel(f.c, oracle), dc.constant_tol).noted(format!("{} vs {oracle}", f.c)));
                let target = rate.unwrap_or(f64::NAN);
                checks.push(
                    Check::at_most(format!("remainder rate at r_* = {} vs first nonzero ladder rate", p.r_star), rel(f.nu, target), dc.rate_tol)
                        .noted(format!("nu = {}, ladder {target}", f.nu)),
                );
            }
            Err(e) => checks.push(Check::error(name, &e)),
        }
        let _ = k;
    }
    Ok(Criterion::new(9, "pure de Sitter cross-check", checks))
}

// ---------------------------------------------------------------------------
// 10. Solver quality

/// Probe CSV of one run, as written by `evolve`.
pub fn probe_csv(out: &EvolutionOutput) -> String {
    let mut rows = Vec::new();
    for p in &out.series.probes {
        for ((t, phi), psi) in out.series.times.iter().zip(&p.phi).zip(p.psi()) {
            rows.push(vec![Cell::F(*t), Cell::F(p.r_star), Cell::F(p.r), Cell::F(*phi), Cell::F(psi)]);
        }
    }
    csv_string(&["t", "r_star", "r", "phi", "psi"], &rows)
}

pub fn solver(cfg: &ScenarioConfig) -> dsswave_core::Result<Criterion> {
    let sc = &cfg.acceptance.solver;
    let g = cfg.geometry()?;
    let mut checks = Vec::new();
    let gauss = |s: f64, c: f64, w: f64| (-((s - c) / w).powi(2)).exp();

    let run = |h: f64| -> dsswave_core::Result<Vec<f64>> {
        let grid = RadialGrid::uniform(&g, -30.0, 30.0, h)?;
        let pot = modes::potential(&g, &grid, 1);
        let mut s = WaveState::gaussian(&grid, 1, 0.0, 2.0, 1.0);
        s.pi = grid.nodes.iter().map(|n| 0.5 * gauss(n.r_star, 1.0, 1.5)).collect();
        let evo = EvolutionConfig { spacing: h, t_end: 9.0, boundary: Boundary::Reflecting, ..cfg.evolution.clone() };
        let out = evolve::evolve(&s, &pot, &grid, &evo)?;
        let stride = (sc.order_spacings[0] / h).round() as usize;
        Ok(out.final_state.phi.iter().step_by(stride).copied().collect())
    };
    let [h0, h1, h2] = sc.order_spacings;
    let (a, b, c) = (run(h0)?, run(h1)?, run(h2)?);
    let d1 = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let d2 = b.iter().zip(&c).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let order = (d1 / d2).log2();
    checks.push(Check::at_most("leapfrog order vs 2", (order - sc.order_target).abs() / sc.order_target, sc.order_tol).noted(format!("order {order}")));

    let grid = RadialGrid::uniform(&g, -40.0, 40.0, cfg.evolution.spacing)?;
    let pot = modes::potential(&g, &grid, 1);
    let s = WaveState::gaussian(&grid, 1, 0.0, 2.0, 1.0);
    let dt = cfg.evolution.dt();
    let evo = EvolutionConfig {
        t_end: sc.energy_steps as f64 * dt,
        boundary: Boundary::Reflecting,
        record_every: 10.0 * dt,
        probes: vec![0.0],
        snapshot_every: None,
        ..cfg.evolution.clone()
    };
    let out = evolve::evolve(&s, &pot, &grid, &evo)?;
    let e0 = out.series.energy[0];
    let drift = out.series.energy.iter().fold(0.0f64, |a, e| a.max((e - e0).abs())) / e0;
    checks.push(Check::at_most(format!("reflecting energy drift over {} steps", evo.steps()), drift, sc.energy_tol));

    let dep = |lo: f64, hi: f64| -> dsswave_core::Result<EvolutionOutput> {
        let grid = RadialGrid::uniform(&g, lo, hi, cfg.evolution.spacing)?;
        let pot = modes::potential(&g, &grid, 1);
        let s = WaveState::gaussian(&grid, 1, 0.0, 2.0, 1.0);
        let evo = EvolutionConfig { t_end: 30.0, probes: vec![-5.0, 0.0, 5.0], snapshot_every: None, ..cfg.evolution.clone() };
        evolve::evolve(&s, &pot, &grid, &evo)
    };
    let (s1, s2) = (dep(-40.0, 40.0)?, dep(-60.0, 60.0)?);
    let mut diff = 0.0f64;
    for (p, q) in s1.series.probes.iter().zip(&s2.series.probes) {
        for (x, y) in p.phi.iter().zip(&q.phi) {
            diff = diff.max((x - y).abs());
        }
    }
    checks.push(Check::at_most("domain-of-dependence perturbation", diff, sc.dependence_tol));

    let rerun = || -> dsswave_core::Result<String> {
        let grid = RadialGrid::uniform(&g, -40.0, 40.0, cfg.evolution.spacing)?;
        let pot = modes::potential(&g, &grid, 0);
        let mut s = WaveState::gaussian(&grid, 0, 3.0, 2.0, 1.0);
        s.pi = s.phi.clone();
        let evo = EvolutionConfig { t_end: 60.0, snapshot_every: None, ..cfg.evolution.clone() };
        Ok(sha256_hex(probe_csv(&evolve::evolve(&s, &pot, &grid, &evo)?).as_bytes()))
    };
    let (x, y) = (rerun()?, rerun()?);
    checks.push(Check::holds("byte-identical reruns", x == y, x));
    Ok(Criterion::new(10, "solver quality gates", checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_terminates_on_the_ladder_only() {
        let k = 1.0;
        let l0: Vec<f64> = de_sitter_ladder(0, k, 8, 60).iter().map(|s| s.im).collect();
        let l1: Vec<f64> = de_sitter_ladder(1, k, 8, 60).iter().map(|s| s.im).collect();
        let l2: Vec<f64> = de_sitter_ladder(2, k, 8, 60).iter().map(|s| s.im).collect();
        assert_eq!(l0, vec![0.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(l1, vec![1.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(l2, vec![2.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let off = de_sitter_series(0, Complex64::new(0.0, 1.0), 60);
        assert!(off[59].norm() > 0.0);
    }

    #[test]
    fn lowest_resonance_skips_zero_and_growing_modes() {
        let mk = |re: f64, im: f64| resolvent::Resonance {
            sigma: Complex64::new(re, im),
            ell: 0,
            newton_residual: 0.0,
            derivative: 1.0,
            multiplicity: 1,
            simple: true,
        };
        let set = ResonanceSet {
            ell: 0,
            search_box: SearchBox::new([-1.0, 1.0], [-1.0, 1.0]),
            winding_number: 4,
            resonances: vec![mk(0.0, 0.0), mk(0.3, 0.2), mk(-0.3, 0.2), mk(0.0, -0.1), mk(0.0, 0.25)],
            symmetry_defect: None,
        };
        let s = lowest_resonance(&set, 1e-10).unwrap();
        assert_eq!((s.re.abs(), s.im), (0.3, 0.2));
    }

    #[test]
    fn flux_constant_of_uniform_data() {
        let g = Geometry::new(SpacetimeParams::de_sitter(3.0)).unwrap();
        let grid = RadialGrid::uniform(&g, 0.0, 10.0, 0.05).unwrap();
        let zero = vec![0.0; grid.len()];
        assert_eq!(flux_constant(&grid, &zero), 0.0);
        let pi: Vec<f64> = grid.nodes.iter().map(|n| n.r).collect();
        assert!(flux_constant(&grid, &pi) > 0.0);
    }

    #[test]
    fn criterion_needs_checks() {
        assert!(!Criterion::new(1, "empty", Vec::new()).passed);
        assert!(Criterion::new(1, "one", vec![Check::at_most("x", 1.0, 1.0)]).passed);
        assert!(!Criterion::new(1, "nan", vec![Check::at_most("x", f64::NAN, 1.0)]).passed);
    }
}
