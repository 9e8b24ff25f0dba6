//! Subcommand bodies. Each writes through the run's single [`RunWriter`].

use rayon::prelude::*;
use serde::Serialize;

use dsswave_core::evolve::{self, CauchyData};
use dsswave_core::resolvent::{self, ResonanceSet, StripScan};
use dsswave_core::{asymptotics, geometry, modes, Charts, EvolutionOutput, Horizons, MellinReconstruction};

use crate::checks::{self, Criterion};
use crate::config::{InitialKind, ScenarioConfig};
use crate::error::Result;
use crate::output::{Cell, RunWriter};

pub fn horizons(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let h: Horizons = geometry::horizons_with(&cfg.spacetime, &cfg.geometry)?;
    let p = cfg.spacetime;
    let header = ["m", "lambda", "r_neg", "r_bh", "r_ds", "kappa_bh", "kappa_ds"];
    let values = [p.m, p.lambda, h.r_neg, h.r_bh, h.r_ds, h.kappa_bh, h.kappa_ds];
    for (k, v) in header.iter().zip(values) {
        println!("{k:<9} {}", crate::output::fmt_f64(v));
    }
    out.csv("horizons.csv", &header, &[values.iter().map(|&v| Cell::F(v)).collect()])?;
    Ok(Vec::new())
}

fn write_run(out: &mut RunWriter, stem: &str, run: &EvolutionOutput, grid_r_star: Option<&[f64]>) -> Result<()> {
    out.write(&format!("{stem}_probes.csv"), checks::probe_csv(run).as_bytes())?;
    let s = &run.series;
    let rows: Vec<Vec<Cell>> =
        (0..s.times.len()).map(|k| vec![Cell::F(s.times[k]), Cell::F(s.sup_phi[k]), Cell::F(s.energy[k])]).collect();
    out.csv(&format!("{stem}_diagnostics.csv"), &["t", "sup_phi", "energy"], &rows)?;
    if let (Some(grid_r_star), false) = (grid_r_star, run.snapshots.is_empty()) {
        let mut rows = Vec::new();
        for snap in &run.snapshots {
            for (i, x) in grid_r_star.iter().enumerate() {
                rows.push(vec![Cell::F(snap.t), Cell::F(*x), Cell::F(snap.phi[i]), Cell::F(snap.pi[i])]);
            }
        }
        out.csv(&format!("{stem}_snapshots.csv"), &["t", "r_star", "phi", "pi"], &rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FieldSummary {
    l_max: usize,
    constant_estimate: f64,
}

pub fn evolve(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let geom = cfg.geometry()?;
    let grid = cfg.grid.build(&geom, cfg.evolution.spacing)?;
    let r_star = grid.r_star();
    let init = &cfg.initial;
    match init.kind {
        InitialKind::Mode => {
            let runs = init
                .channels
                .par_iter()
                .map(|&l| {
                    let s = init.profile.state(&grid, l);
                    evolve::evolve(&s, &modes::potential(&geom, &grid, l), &grid, &cfg.evolution)
                })
                .collect::<dsswave_core::Result<Vec<_>>>()?;
            for (l, run) in init.channels.iter().zip(&runs) {
                write_run(out, &format!("evolve_l{l}"), run, Some(&r_star))?;
            }
        }
        InitialKind::Field => {
            let p = init.profile;
            let star = |r: f64| geom.tortoise(r).unwrap_or(f64::NAN);
            let u0 = |r: f64, th: f64, _: f64| p.phi(star(r)) * (1.0 + init.dipole * th.cos()) / r;
            let u1 = |r: f64, th: f64, _: f64| p.pi(star(r)) * (1.0 + init.dipole * th.cos()) / r;
            let ells: Vec<u32> = (0..=init.l_max as u32).collect();
            let pots = modes::potentials(&geom, &grid, &ells);
            let mut evo = cfg.evolution.clone();
            for q in &init.points {
                if !evo.probes.iter().any(|&x| x == q[0]) {
                    evo.probes.push(q[0]);
                }
            }
            let points: Vec<(f64, f64, f64)> = init.points.iter().map(|q| (q[0], q[1], q[2])).collect();
            let data = CauchyData { u0: &u0, u1: &u1 };
            let res = evolve::evolve_3d(&data, init.l_max, &grid, &pots, &evo, &points, init.quadrature_threshold)?;
            let mut rows = Vec::new();
            for p in &res.points {
                for (t, u) in res.times.iter().zip(&p.u) {
                    rows.push(vec![Cell::F(*t), Cell::F(p.r_star), Cell::F(p.theta), Cell::F(p.phi), Cell::F(*u)]);
                }
            }
            out.csv("evolve_points.csv", &["t", "r_star", "theta", "phi", "u"], &rows)?;
            out.json("evolve_field.json", &FieldSummary { l_max: res.l_max, constant_estimate: res.constant_estimate })?;
        }
    }
    Ok(Vec::new())
}

#[derive(Debug, Serialize)]
struct ResonanceReport {
    sets: Vec<ResonanceSet>,
    strips: Vec<StripScan>,
}

pub fn resonances(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let geom = cfg.geometry()?;
    let sets = cfg
        .resonances
        .boxes
        .par_iter()
        .map(|b| checks::search(cfg, &geom, b.ell, b.search_box()))
        .collect::<dsswave_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for set in &sets {
        for r in &set.resonances {
            rows.push(vec![
                Cell::from(r.ell),
                Cell::F(r.sigma.re),
                Cell::F(r.sigma.im),
                Cell::F(r.derivative),
                Cell::F(r.newton_residual),
                Cell::from(r.multiplicity),
                Cell::from(r.simple),
            ]);
        }
    }
    out.csv("resonances.csv", &["ell", "re", "im", "abs_derivative", "newton_residual", "multiplicity", "simple"], &rows)?;

    let st = &cfg.strip;
    let mut strips = Vec::new();
    if !geom.is_de_sitter() {
        let charts = Charts::new(geom.clone(), &cfg.charts)?;
        let jobs: Vec<(u32, f64)> = st.ells.iter().flat_map(|&l| st.heights.iter().map(move |&h| (l, h))).collect();
        strips = jobs
            .par_iter()
            .map(|&(l, h)| resolvent::strip_bound_scan(&charts, l, h, st.re_range, st.count, st.delta, &st.scan))
            .collect::<dsswave_core::Result<Vec<_>>>()?;
        for &l in &st.ells {
            let mut rows = Vec::new();
            for scan in strips.iter().filter(|s| s.ell == l) {
                for s in &scan.samples {
                    rows.push(vec![Cell::F(scan.im), Cell::F(s.sigma.re), Cell::F(s.surrogate), Cell::F(s.unweighted)]);
                }
            }
            out.csv(&format!("strip_l{l}.csv"), &["im", "re", "weighted_norm", "unweighted_norm"], &rows)?;
        }
    }
    for set in &sets {
        println!("l = {}: winding {}, {} resonances", set.ell, set.winding_number, set.resonances.len());
        for r in &set.resonances {
            println!("  {:+.12} {:+.12}i", r.sigma.re, r.sigma.im);
        }
    }
    out.json("resonances.json", &ResonanceReport { sets, strips })?;
    Ok(Vec::new())
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    command: &'a str,
    passed: bool,
    criteria: &'a [Criterion],
}

fn report(out: &mut RunWriter, name: &str, command: &str, criteria: &[Criterion]) -> Result<()> {
    let passed = criteria.iter().all(|c| c.passed);
    out.json(name, &Report { command, passed, criteria })
}

pub fn charts_verify(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let criteria = vec![checks::cancellation(cfg)?, checks::faces(cfg)?];
    report(out, "charts_report.json", "charts-verify", &criteria)?;
    Ok(criteria)
}

fn write_mellin(out: &mut RunWriter, rec: &MellinReconstruction) -> Result<()> {
    let mut rows = Vec::new();
    for p in 0..rec.probe_r_star.len() {
        for [t, a, b, d] in rec.rows(p) {
            rows.push(vec![Cell::F(rec.probe_r_star[p]), Cell::F(t), Cell::F(a), Cell::F(b), Cell::F(d)]);
        }
    }
    out.csv("mellin_reconstruction.csv", &["r_star", "t", "time_domain", "frequency_domain", "difference"], &rows)
}

pub fn mellin_verify(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let (c, rec) = checks::mellin(cfg)?;
    if let Some(rec) = &rec {
        write_mellin(out, rec)?;
    }
    let criteria = vec![c];
    report(out, "mellin_report.json", "mellin-verify", &criteria)?;
    Ok(criteria)
}

/// Every acceptance criterion; independent groups run concurrently.
pub fn all_criteria(cfg: &ScenarioConfig) -> Result<(Vec<Criterion>, Option<checks::DeskRuns>, Option<MellinReconstruction>)> {
    type Out = (Vec<Criterion>, Option<checks::DeskRuns>, Option<MellinReconstruction>);
    let fast = || -> dsswave_core::Result<Vec<Criterion>> {
        Ok(vec![checks::geometry(cfg), checks::cancellation(cfg)?, checks::faces(cfg)?, checks::mode_oracle(cfg)?])
    };
    let desk = || -> dsswave_core::Result<(Vec<Criterion>, checks::DeskRuns)> {
        let runs = checks::desk_runs(cfg)?;
        Ok((vec![checks::decay(cfg, &runs)?, checks::consistency(cfg, &runs)?], runs))
    };
    let rest = || -> dsswave_core::Result<Vec<Criterion>> {
        let (a, b) = rayon::join(|| checks::spectral_gap(cfg), || checks::de_sitter(cfg));
        Ok(vec![a?, b?, checks::solver(cfg)?])
    };
    let ((fast, desk), (rest, mellin)) =
        rayon::join(|| rayon::join(fast, desk), || rayon::join(rest, || checks::mellin(cfg)));
    let (mellin_c, rec) = mellin?;
    let (desk_c, runs) = desk?;
    let mut all: Vec<Criterion> = fast?.into_iter().chain(desk_c).chain(rest?).chain([mellin_c]).collect();
    all.sort_by_key(|c| c.id);
    let out: Out = (all, Some(runs), rec);
    Ok(out)
}

pub fn theorem_check(cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    let (criteria, runs, rec) = all_criteria(cfg)?;
    if let Some(runs) = &runs {
        let th = &cfg.acceptance.theorem;
        let mut rows = Vec::new();
        let fits = checks::ell0_fits(cfg, runs);
        for (p, f) in th.ell0.probes.iter().zip(&fits) {
            if let Ok(f) = f {
                rows.push(vec![
                    Cell::from(0u32),
                    Cell::F(p.r_star),
                    Cell::F(f.window[0]),
                    Cell::F(f.window[1]),
                    Cell::F(f.c),
                    Cell::F(f.a),
                    Cell::F(f.nu),
                    Cell::F(f.omega),
                    Cell::F(f.window_variation),
                ]);
            }
        }
        out.csv("tail_fits.csv", &["ell", "r_star", "t0", "t1", "c", "a", "nu", "omega", "window_variation"], &rows)?;
        write_run(out, "theorem_l0", &runs.ell0, None)?;
        write_run(out, "theorem_l1", &runs.ell1, None)?;
        if let Some(Ok(first)) = fits.first() {
            let snaps: Vec<_> = runs.ell0.snapshots.iter().filter(|s| s.t >= th.uniformity_start).cloned().collect();
            if let Ok(u) = asymptotics::uniformity_check(&snaps, &runs.grid, first.c, th.uniformity_region) {
                let rows: Vec<Vec<Cell>> = (0..u.times.len())
                    .map(|k| vec![Cell::F(u.times[k]), Cell::F(u.sup_deviation[k]), Cell::F(u.sup_derivative[k])])
                    .collect();
                out.csv("uniformity.csv", &["t", "sup_abs_psi_minus_c", "sup_abs_dpsi"], &rows)?;
            }
        }
    }
    if let Some(rec) = &rec {
        write_mellin(out, rec)?;
    }
    report(out, "theorem_report.json", "theorem-check", &criteria)?;
    Ok(criteria)
}
