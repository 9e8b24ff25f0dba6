//! Late-time asymptotics: tail fits, uniform decay, and the Mellin picture.
//!
//! Tail fits use `c + a exp(-nu t) cos(omega t + phase)` with the linear
//! coefficients eliminated (variable projection), so only `(nu, omega)` are
//! searched. The Mellin transform in `T = exp(-t)` is the Fourier-Laplace
//! transform `v_hat(sigma) = int exp(-i sigma t) v(t) dt`, computed with the
//! kernel fixed by [`FrequencyConvention`].
//!
//! The field reconstruction cuts off a leapfrog run with
//! `chi(exp(-2 lambda t) / mu)`. The cut-off field `v = chi phi` obeys the
//! same leapfrog scheme with the exact discrete commutator `f` as source and
//! vanishes for `t <= 0`, so its discrete transform is the resolvent at
//! `sigma_dt = (2 / dt) sin(sigma dt / 2)` applied to `f_hat`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::Charts;
use crate::error::{Error, Result};
use crate::evolve::{self, EvolutionConfig, EvolutionOutput, WaveState};
use crate::geometry::RadialGrid;
use crate::modes::{self, ModePotential};
use crate::resolvent::{self, FrequencyConvention, ResidueConfig, SolveConfig};

// ---------------------------------------------------------------------------
// Tail fits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Search range for the decay rate.
    pub nu_range: [f64; 2],
    pub omega_max: f64,
    /// Grid points per search axis before local refinement.
    pub grid: usize,
    /// Admissible relative spread of `c` across the nested windows.
    pub stability_tol: f64,
    /// The window must span at least this many e-folds of the decay.
    pub min_decays: f64,
    /// Expected decay rate, used for the window length check.
    pub nu_guess: Option<f64>,
    /// Number of nested windows sharing the right end point.
    pub nested: usize,
    /// Relative spread below which the series counts as constant.
    pub flat_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nu_range: [1e-3, 2.0],
            omega_max: 3.0,
            grid: 48,
            stability_tol: 1e-3,
            min_decays: 5.0,
            nu_guess: None,
            nested: 3,
            flat_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub c: f64,
    /// Amplitude at `reference_time`.
    pub a: f64,
    pub nu: f64,
    pub omega: f64,
    pub phase: f64,
    pub reference_time: f64,
    pub window: [f64; 2],
    pub samples: usize,
    pub rms_residual: f64,
    /// Standard errors of `(c, nu, omega)` from the linearized covariance.
    pub std_error: [f64; 3],
    /// `c` fitted on each nested window.
    pub window_constants: Vec<f64>,
    pub window_variation: f64,
    /// The series is constant: `a = 0` and `nu`, `omega` are not identifiable.
    pub constant_only: bool,
}

#[derive(Debug, Clone, Copy)]
struct Projection {
    rss: f64,
    coef: [f64; 3],
    oscillating: bool,
}

/// Least squares on the columns `1, e cos, e sin` with `e = exp(-nu tau)`.
fn project(tau: &[f64], v: &[f64], nu: f64, omega: Option<f64>) -> Option<Projection> {
    let n = tau.len();
    let k = if omega.is_some() { 3 } else { 2 };
    let mut cols = vec![vec![0.0; n]; k];
    for (i, &t) in tau.iter().enumerate() {
        let e = (-nu * t).exp();
        cols[0][i] = 1.0;
        match omega {
            Some(w) => {
                cols[1][i] = e * (w * t).cos();
                cols[2][i] = e * (w * t).sin();
            }
            None => cols[1][i] = e,
        }
    }
    // modified Gram-Schmidt, applied twice
    let mut r = [[0.0; 3]; 3];
    let mut q = cols;
    for j in 0..k {
        for _ in 0..2 {
            for p in 0..j {
                let d: f64 = q[p].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                r[p][j] += d;
                let (head, tail) = q.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[p]) {
                    *x -= d * y;
                }
            }
        }
        let norm = q[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-10 * (n as f64).sqrt()) {
            return None;
        }
        r[j][j] = norm;
        for x in q[j].iter_mut() {
            *x /= norm;
        }
    }
    let mut qtv = [0.0; 3];
    let mut res = v.to_vec();
    for j in 0..k {
        qtv[j] = q[j].iter().zip(v).map(|(a, b)| a * b).sum();
        for (x, y) in res.iter_mut().zip(&q[j]) {
            *x -= qtv[j] * y;
        }
    }
    let mut coef = [0.0; 3];
    for j in (0..k).rev() {
        let mut s = qtv[j];
        for p in j + 1..k {
            s -= r[j][p] * coef[p];
        }
        coef[j] = s / r[j][j];
    }
    let rss = res.iter().map(|x| x * x).sum();
    Some(Projection { rss, coef, oscillating: omega.is_some() })
}

/// Minimizes `f` over two variables with the Nelder-Mead simplex.
fn nelder_mead(f: &dyn Fn([f64; 2]) -> f64, start: [f64; 2], scale: [f64; 2], tol: f64, max_iter: usize) -> [f64; 2] {
    let mut s = [start, [start[0] + scale[0], start[1]], [start[0], start[1] + scale[1]]];
    let mut fs = [f(s[0]), f(s[1]), f(s[2])];
    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        s = [s[idx[0]], s[idx[1]], s[idx[2]]];
        fs = [fs[idx[0]], fs[idx[1]], fs[idx[2]]];
        let size = (0..2).map(|d| (s[1][d] - s[0][d]).abs().max((s[2][d] - s[0][d]).abs()) / scale[d]).fold(0.0, f64::max);
        if size < tol {
            break;
        }
        let cen = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let at = |k: f64| [cen[0] + k * (s[2][0] - cen[0]), cen[1] + k * (s[2][1] - cen[1])];
        let xr = at(-1.0);
        let fr = f(xr);
        if fr < fs[0] {
            let xe = at(-2.0);
            let fe = f(xe);
            if fe < fr {
                s[2] = xe;
                fs[2] = fe;
            } else {
                s[2] = xr;
                fs[2] = fr;
            }
        } else if fr < fs[1] {
            s[2] = xr;
            fs[2] = fr;
        } else {
            let xc = if fr < fs[2] { at(-0.5) } else { at(0.5) };
            let fc = f(xc);
            if fc < fs[2].min(fr) {
                s[2] = xc;
                fs[2] = fc;
            } else {
                for k in 1..3 {
                    s[k] = [(s[k][0] + s[0][0]) / 2.0, (s[k][1] + s[0][1]) / 2.0];
                    fs[k] = f(s[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap_or(0);
    s[best]
}

/// Golden-section minimization on `[a, b]`.
fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

#[derive(Debug, Clone, Copy)]
struct RawFit {
    nu: f64,
    omega: f64,
    proj: Projection,
}

fn fit_window(tau: &[f64], v: &[f64], cfg: &FitConfig) -> Result<RawFit> {
    let n = tau.len();
    let span = tau[n - 1] - tau[0];
    let [nu_lo, nu_hi] = cfg.nu_range;
    let (l_lo, l_hi) = (nu_lo.ln(), nu_hi.ln());
    let g = cfg.grid.max(4);
    let huge = f64::MAX;
    let rss0 = |l: f64| project(tau, v, l.exp(), None).map_or(huge, |p| p.rss);
    // an oscillation must complete half a period inside the window
    let omega_min = std::f64::consts::PI / span;
    let omega_hi = cfg.omega_max.max(2.0 * omega_min);
    let reflect = |w: f64| {
        let w = if w < omega_min { 2.0 * omega_min - w } else { w };
        if w > omega_hi {
            (2.0 * omega_hi - w).max(omega_min)
        } else {
            w
        }
    };
    let rss1 = |p: [f64; 2]| {
        let l = p[0].clamp(l_lo, l_hi);
        project(tau, v, l.exp(), Some(reflect(p[1]))).map_or(huge, |q| q.rss)
    };
    let ls: Vec<f64> = (0..g).map(|i| l_lo + (l_hi - l_lo) * i as f64 / (g - 1) as f64).collect();
    let ws: Vec<f64> = (0..g).map(|j| omega_min + (omega_hi - omega_min) * j as f64 / (g - 1) as f64).collect();
    let dl = (l_hi - l_lo) / (g - 1) as f64;
    let dw = (omega_hi - omega_min) / (g - 1) as f64;

    // non-oscillating branch
    let (i0, _) = ls.iter().enumerate().map(|(i, &l)| (i, rss0(l))).fold((0, huge), |b, x| if x.1 < b.1 { x } else { b });
    let l0 = golden(&rss0, (ls[i0] - dl).max(l_lo), (ls[i0] + dl).min(l_hi), 1e-12);
    let p0 = project(tau, v, l0.exp(), None);

    // oscillating branch: refine the best few grid cells
    let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(g * g);
    for (i, &l) in ls.iter().enumerate() {
        for (j, &w) in ws.iter().enumerate() {
            cells.push((rss1([l, w]), i, j));
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best1: Option<(f64, f64, Projection)> = None;
    for &(_, i, j) in cells.iter().take(4) {
        let x = nelder_mead(&rss1, [ls[i], ws[j]], [0.5 * dl, 0.5 * dw], 1e-10, 4000);
        let (nu, w) = (x[0].clamp(l_lo, l_hi).exp(), reflect(x[1]));
        if let Some(p) = project(tau, v, nu, Some(w)) {
            if best1.is_none_or(|b| p.rss < b.2.rss) {
                best1 = Some((nu, w, p));
            }
        }
    }

    // model selection by the Bayesian information criterion
    let bic = |rss: f64, k: f64| n as f64 * (rss.max(f64::MIN_POSITIVE) / n as f64).ln() + k * (n as f64).ln();
    let cand0 = p0.map(|p| RawFit { nu: l0.exp(), omega: 0.0, proj: p });
    let cand1 = best1.map(|(nu, w, p)| RawFit { nu, omega: w, proj: p });
    match (cand0, cand1) {
        (Some(a), Some(b)) => Ok(if bic(b.proj.rss, 5.0) < bic(a.proj.rss, 3.0) { b } else { a }),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(Error::NoConvergence { what: "tail fit projection", iterations: g * g }),
    }
}

/// Symmetric positive definite inverse by Gauss-Jordan; `None` if singular.
fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[p][c] == 0.0 {
            return None;
        }
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    Some(inv)
}

fn std_errors(tau: &[f64], fit: &RawFit, dof_rss: f64) -> [f64; 3] {
    let [_, al, be] = fit.proj.coef;
    let (nu, w) = (fit.nu, fit.omega);
    let rows: Vec<Vec<f64>> = tau
        .iter()
        .map(|&t| {
            let e = (-nu * t).exp();
            if fit.proj.oscillating {
                let (c, s) = ((w * t).cos(), (w * t).sin());
                vec![1.0, e * c, e * s, -t * e * (al * c + be * s), t * e * (be * c - al * s)]
            } else {
                vec![1.0, e, -t * e * al]
            }
        })
        .collect();
    let k = rows[0].len();
    let jtj: Vec<Vec<f64>> =
        (0..k).map(|a| (0..k).map(|b| rows.iter().map(|r| r[a] * r[b]).sum()).collect()).collect();
    match invert(jtj) {
        Some(cov) => {
            let sd = |i: usize| (dof_rss * cov[i][i]).max(0.0).sqrt();
            if fit.proj.oscillating {
                [sd(0), sd(3), sd(4)]
            } else {
                [sd(0), sd(2), 0.0]
            }
        }
        None => [f64::INFINITY; 3],
    }
}

/// Fits `c + a exp(-nu t) cos(omega t + phase)` on `window`.
///
/// The series is refitted on `cfg.nested` windows sharing the right end
/// point; `FitUnstable` is returned when their constants disagree.
pub fn fit_tail(times: &[f64], values: &[f64], window: [f64; 2], cfg: &FitConfig) -> Result<TailFit> {
    if times.len() != values.len() {
        return Err(Error::InvalidInput(format!("{} times but {} values", times.len(), values.len())));
    }
    if !(window[1] > window[0]) || cfg.nested == 0 || !(cfg.nu_range[0] > 0.0 && cfg.nu_range[1] > cfg.nu_range[0]) {
        return Err(Error::InvalidInput(format!("fit window {window:?} or search ranges")));
    }
    let sel: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= window[0] && times[i] <= window[1]).collect();
    if sel.len() < 8 {
        return Err(Error::InvalidInput(format!("{} samples in fit window", sel.len())));
    }
    if sel.iter().any(|&i| !values[i].is_finite()) {
        return Err(Error::InvalidInput("non-finite sample in fit window".into()));
    }
    let t0 = times[sel[0]];
    let t1 = times[sel[sel.len() - 1]];
    let tau: Vec<f64> = sel.iter().map(|&i| times[i] - t0).collect();
    let v: Vec<f64> = sel.iter().map(|&i| values[i]).collect();
    let n = v.len();
    let length = t1 - t0;

    let mean = v.iter().sum::<f64>() / n as f64;
    let spread = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    if spread <= cfg.flat_tol * mean.abs() || spread == 0.0 {
        return Ok(TailFit {
            c: mean,
            a: 0.0,
            nu: 0.0,
            omega: 0.0,
            phase: 0.0,
            reference_time: t0,
            window: [t0, t1],
            samples: n,
            rms_residual: (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt(),
            std_error: [0.0; 3],
            window_constants: vec![mean; cfg.nested],
            window_variation: 0.0,
            constant_only: true,
        });
    }
    if let Some(g) = cfg.nu_guess {
        let required = cfg.min_decays / g;
        if length < required {
            return Err(Error::WindowTooShort { length, required });
        }
    }
    let fit = fit_window(&tau, &v, cfg)?;
    let required = cfg.min_decays / fit.nu;
    if length < required {
        return Err(Error::WindowTooShort { length, required });
    }
    let [c, al, be] = fit.proj.coef;
    let (a, phase) = if fit.proj.oscillating { (al.hypot(be), (-be).atan2(al)) } else { (al.abs(), if al < 0.0 { std::f64::consts::PI } else { 0.0 }) };
    let dof = (n as f64 - if fit.proj.oscillating { 5.0 } else { 3.0 }).max(1.0);
    let std_error = std_errors(&tau, &fit, fit.proj.rss / dof);

    let mut window_constants = vec![c];
    for k in 1..cfg.nested {
        let start = k as f64 * length / (2 * cfg.nested) as f64;
        let first = tau.partition_point(|&t| t < start);
        let sub_tau: Vec<f64> = tau[first..].iter().map(|t| t - tau[first]).collect();
        if sub_tau.len() < 8 {
            return Err(Error::InvalidInput("nested fit window holds too few samples".into()));
        }
        window_constants.push(fit_window(&sub_tau, &v[first..], cfg)?.proj.coef[0]);
    }
    let lo = window_constants.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = window_constants.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = c.abs().max(v.iter().map(|x| (x - c).abs()).fold(0.0, f64::max));
    let window_variation = (hi - lo) / scale;
    if !(window_variation <= cfg.stability_tol) {
        return Err(Error::FitUnstable { variation: window_variation });
    }
    Ok(TailFit {
        c,
        a,
        nu: fit.nu,
        omega: fit.omega,
        phase,
        reference_time: t0,
        window: [t0, t1],
        samples: n,
        rms_residual: (fit.proj.rss / n as f64).sqrt(),
        std_error,
        window_constants,
        window_variation,
        constant_only: false,
    })
}

// ---------------------------------------------------------------------------
// Uniform decay

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub times: Vec<f64>,
    /// `sup |psi - c|` over the region.
    pub sup_deviation: Vec<f64>,
    /// `sup |d psi / d r_*|` over the region.
    pub sup_derivative: Vec<f64>,
    /// Exponential rates from log-linear fits; `None` when identically zero.
    pub deviation_rate: Option<f64>,
    pub derivative_rate: Option<f64>,
    pub region: [f64; 2],
    pub decaying: bool,
}

fn log_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a, b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Decay of `psi - c` and of its `r_*` derivative on the static slices in
/// `snapshots`, restricted to `region` in `r_*`.
pub fn uniformity_check(snapshots: &[WaveState], grid: &RadialGrid, c: f64, region: [f64; 2]) -> Result<UniformityReport> {
    if snapshots.len() < 2 {
        return Err(Error::InvalidInput("uniformity check needs at least two snapshots".into()));
    }
    let idx: Vec<usize> = (1..grid.len() - 1)
        .filter(|&i| {
            let n = &grid.nodes[i];
            n.r > 0.0 && n.r_star >= region[0] && n.r_star <= region[1]
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("no grid nodes in region {region:?}")));
    }
    let h = grid.spacing;
    let mut times = Vec::with_capacity(snapshots.len());
    let mut dev = Vec::with_capacity(snapshots.len());
    let mut der = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        if s.phi.len() != grid.len() {
            return Err(Error::InvalidInput("snapshot does not match grid".into()));
        }
        let psi = s.psi(grid);
        times.push(s.t);
        dev.push(idx.iter().map(|&i| (psi[i] - c).abs()).fold(0.0, f64::max));
        der.push(idx.iter().map(|&i| ((psi[i + 1] - psi[i - 1]) / (2.0 * h)).abs()).fold(0.0, f64::max));
    }
    let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    let deviation_rate = if zero(&dev) { None } else { log_rate(&times, &dev) };
    let derivative_rate = if zero(&der) { None } else { log_rate(&times, &der) };
    let ok = |z: bool, r: Option<f64>| z || r.is_some_and(|r| r > 0.0);
    let decaying = ok(zero(&dev), deviation_rate) && ok(zero(&der), derivative_rate);
    Ok(UniformityReport {
        times,
        sup_deviation: dev,
        sup_derivative: der,
        deviation_rate,
        derivative_rate,
        region,
        decaying,
    })
}

// ---------------------------------------------------------------------------
// Mellin transform of sampled series

/// Nodes `x_j + i s` with `x_j = j step`, `|x_j| <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MellinGrid {
    pub s: f64,
    pub step: f64,
    pub max: f64,
}

impl MellinGrid {
    pub fn new(s: f64, step: f64, max: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidInput(format!("Mellin grid s = {s}, step = {step}, max = {max}")));
        }
        Ok(Self { s, step, max })
    }

    pub fn nodes(&self) -> Vec<Complex64> {
        let j = (self.max / self.step + 1e-9).floor() as i64;
        (-j..=j).map(|k| Complex64::new(k as f64 * self.step, self.s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MellinData {
    pub grid: MellinGrid,
    pub sigma: Vec<Complex64>,
    pub values: Vec<Complex64>,
}

/// Gauss-Legendre interval weights for a cubic interpolant on uniform samples.
struct SampleQuadrature {
    /// `(tau_q, w_q)` on `[0, 1]`.
    rule: Vec<(f64, f64)>,
    /// Per interval: `sum_m L_m(tau_q) v_m` at each node `q`.
    interp: Vec<Vec<f64>>,
    t0: f64,
    dt: f64,
}

impl SampleQuadrature {
    fn new(times: &[f64], values: &[f64]) -> Result<Self> {
        let n = times.len();
        if n < 4 || values.len() != n {
            return Err(Error::InvalidInput(format!("{n} samples, {} values", values.len())));
        }
        let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
        if !(dt > 0.0) || times.iter().enumerate().any(|(i, &t)| (t - times[0] - i as f64 * dt).abs() > 1e-9 * dt.max(1.0)) {
            return Err(Error::InvalidInput("Mellin samples must be uniform and increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Mellin sample".into()));
        }
        let (x, w) = modes::gauss_legendre(6);
        let rule: Vec<(f64, f64)> = x.iter().zip(&w).map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        let lagrange = |nodes: [f64; 4], tau: f64| {
            let mut l = [1.0; 4];
            for m in 0..4 {
                for k in 0..4 {
                    if k != m {
                        l[m] *= (tau - nodes[k]) / (nodes[m] - nodes[k]);
                    }
                }
            }
            l
        };
        let interp = (0..n - 1)
            .map(|k| {
                let j0 = k.saturating_sub(1).min(n - 4);
                let nodes = [0, 1, 2, 3].map(|m| (j0 + m) as f64 - k as f64);
                rule.iter()
                    .map(|&(tau, _)| {
                        let l = lagrange(nodes, tau);
                        (0..4).map(|m| l[m] * values[j0 + m]).sum()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { rule, interp, t0: times[0], dt })
    }

    fn transform(&self, sigma: Complex64) -> Complex64 {
        let e: Vec<Complex64> = self
            .rule
            .iter()
            .map(|&(tau, w)| FrequencyConvention::mellin_kernel(sigma, tau * self.dt) * (w * self.dt))
            .collect();
        self.interp
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let inner: Complex64 = e.iter().zip(p).map(|(a, &b)| a * b).sum();
                FrequencyConvention::mellin_kernel(sigma, self.t0 + k as f64 * self.dt) * inner
            })
            .sum()
    }
}

/// `v_hat(sigma) = int exp(-i sigma t) v(t) dt` over the sampled range, for
/// a series on a uniform time grid (equivalently, a function of `T = exp(-t)`).
pub fn mellin_forward(times: &[f64], values: &[f64], grid: &MellinGrid) -> Result<MellinData> {
    let q = SampleQuadrature::new(times, values)?;
    let sigma = grid.nodes();
    let values = sigma.par_iter().map(|&s| q.transform(s)).collect();
    Ok(MellinData { grid: *grid, sigma, values })
}

/// Transform at a single frequency.
pub fn mellin_transform_at(times: &[f64], values: &[f64], sigma: Complex64) -> Result<Complex64> {
    Ok(SampleQuadrature::new(times, values)?.transform(sigma))
}

/// Trapezoid inversion along the contour: `v(t) = (1/2 pi) int exp(i sigma t) v_hat`.
pub fn mellin_inverse(data: &MellinData, times: &[f64]) -> Vec<f64> {
    let w = data.grid.step / (2.0 * std::f64::consts::PI);
    times
        .iter()
        .map(|&t| {
            let s: Complex64 = data.sigma.iter().zip(&data.values).map(|(&sg, &v)| (Complex64::i() * sg * t).exp() * v).sum();
            (s * w).re
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Cut-off runs

/// `chi(rho) = erfc((ln rho - log_rho_mid) / width) / 2`, set to exactly 0
/// for `rho >= 1` and exactly 1 deep inside the plateau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffConfig {
    pub log_rho_mid: f64,
    pub width: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self { log_rho_mid: -7.0, width: 0.8 }
    }
}

impl CutoffConfig {
    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !(self.log_rho_mid + 8.0 * self.width <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "cutoff transition must end inside rho < 1: mid {}, width {}",
                self.log_rho_mid, self.width
            )));
        }
        Ok(())
    }

    pub fn chi_of_log_rho(&self, log_rho: f64) -> f64 {
        if log_rho >= 0.0 {
            return 0.0;
        }
        let z = (log_rho - self.log_rho_mid) / self.width;
        if z < -6.5 {
            1.0
        } else {
            0.5 * libm::erfc(z)
        }
    }

    /// `chi(exp(-2 lambda t) / mu)` from `ln mu`.
    pub fn chi(&self, lambda: f64, t: f64, log_mu: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.chi_of_log_rho(-2.0 * lambda * t - log_mu)
    }
}

/// Nonzero values of the discrete commutator at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSlice {
    pub t: f64,
    pub first: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRun {
    pub output: EvolutionOutput,
    pub dt: f64,
    pub lambda: f64,
    pub cutoff: CutoffConfig,
    pub source: Vec<SourceSlice>,
    /// Time interval containing every nonzero source value.
    pub source_support: [f64; 2],
    /// `chi phi` at the recorded times for each probe.
    pub cutoff_probes: Vec<Vec<f64>>,
}

impl CutoffRun {
    /// `dt sum_n exp(-i sigma t_n) f^n` on the whole grid.
    pub fn source_transform(&self, sigma: Complex64, n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); n];
        for s in &self.source {
            let k = FrequencyConvention::mellin_kernel(sigma, s.t) * self.dt;
            for (o, &f) in out[s.first..s.first + s.values.len()].iter_mut().zip(&s.values) {
                *o += k * f;
            }
        }
        out
    }
}

/// Runs `evolve` while recording the source of `chi phi`.
pub fn record_cutoff_run(
    initial: &WaveState,
    potential: &ModePotential,
    grid: &RadialGrid,
    charts: &Charts,
    evo: &EvolutionConfig,
    cutoff: &CutoffConfig,
) -> Result<CutoffRun> {
    cutoff.validate()?;
    if initial.t != 0.0 {
        return Err(Error::InvalidInput("cut-off runs start at t = 0".into()));
    }
    let n = grid.len();
    let lambda = charts.lambda_bh;
    let log_mu: Vec<f64> = grid.nodes.iter().map(|nd| nd.mu.ln()).collect();
    let dt = evo.dt();
    let (ih2, idt2) = (1.0 / (grid.spacing * grid.spacing), 1.0 / (dt * dt));
    let v = &potential.v_scheme;
    let chi_row = |t: f64| -> Vec<f64> { log_mu.iter().map(|&l| cutoff.chi(lambda, t, l)).collect() };

    // phi and chi at levels n - 1, n
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut cur: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut source = Vec::new();
    let mut observer = |t: f64, phi: &[f64]| {
        let chi_new = chi_row(t);
        if let Some((tc, phi_c, chi_c)) = cur.take() {
            let (phi_p, chi_p) = prev.take().unwrap_or_else(|| (vec![0.0; n], vec![0.0; n]));
            let mut first = usize::MAX;
            let mut vals = Vec::new();
            for i in 1..n - 1 {
                let c5 = [chi_p[i], chi_new[i], chi_c[i - 1], chi_c[i], chi_c[i + 1]];
                if c5.iter().all(|&c| c == 0.0) || c5.iter().all(|&c| c == 1.0) {
                    continue;
                }
                let vc = |j: usize| chi_c[j] * phi_c[j];
                let f = (chi_new[i] * phi[i] - 2.0 * vc(i) + chi_p[i] * phi_p[i]) * idt2
                    - (vc(i + 1) - 2.0 * vc(i) + vc(i - 1)) * ih2
                    + v[i] * vc(i);
                if first == usize::MAX {
                    first = i;
                }
                vals.resize(i - first, 0.0);
                vals.push(f);
            }
            if vals.iter().any(|&f| f != 0.0) {
                source.push(SourceSlice { t: tc, first, values: vals });
            }
            prev = Some((phi_c, chi_c));
        }
        cur = Some((t, phi.to_vec(), chi_new));
    };
    let output = evolve::evolve_observed(initial, potential, grid, evo, &mut observer)?;
    let t_end = output.final_state.t;
    let support = match (source.first(), source.last()) {
        (Some(a), Some(b)) => [a.t, b.t],
        _ => [0.0, 0.0],
    };
    if support[1] > t_end - 2.0 * dt {
        return Err(Error::InvalidInput(format!(
            "cutoff source still active at t_end = {t_end}; lengthen the run or shorten the grid"
        )));
    }
    let cutoff_probes = output
        .series
        .probes
        .iter()
        .map(|p| {
            output.series.times.iter().zip(&p.phi).map(|(&t, &f)| cutoff.chi(lambda, t, log_mu[p.index]) * f).collect()
        })
        .collect();
    Ok(CutoffRun { output, dt, lambda, cutoff: *cutoff, source, source_support: support, cutoff_probes })
}

// ---------------------------------------------------------------------------
// Contour-shift reconstruction

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MellinConfig {
    /// Two contour heights on the physical side.
    pub heights: [f64; 2],
    /// Height of the shifted contour, past the pole at zero.
    pub shift: f64,
    /// Aliasing period `2 pi / step` of the frequency quadrature.
    pub period: f64,
    /// Truncate once `sup |f_hat|` falls below this fraction of its peak.
    pub decay_tol: f64,
    pub sigma_cap: f64,
    /// Comparison window in `t`.
    pub window: [f64; 2],
    pub reconstruction_tol: f64,
    pub contour_tol: f64,
    pub residue_tol: f64,
    /// Start of the tail fit, which runs to the end of the evolution.
    pub fit_start: f64,
    pub batch: usize,
    pub solve: SolveConfig,
    pub residue: ResidueConfig,
    pub fit: FitConfig,
}

impl Default for MellinConfig {
    fn default() -> Self {
        Self {
            heights: [-0.04, -0.06],
            shift: 0.04,
            period: 520.0,
            decay_tol: 1e-10,
            sigma_cap: 12.0,
            window: [20.0, 200.0],
            reconstruction_tol: 1e-3,
            contour_tol: 1e-6,
            residue_tol: 1e-2,
            fit_start: 100.0,
            batch: 32,
            // above the axis the solution grows towards the grid ends, so the
            // residual relative to the source carries that growth
            solve: SolveConfig { residual_tol: 1e-4, ..SolveConfig::default() },
            residue: ResidueConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

/// Contour data at the probes for one horizontal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourLine {
    pub s: f64,
    pub step: f64,
    /// `x_j = j step`, `j >= 0`; negative nodes follow by reality.
    pub x: Vec<f64>,
    /// `v_hat` at each probe and node.
    pub probe_values: Vec<Vec<Complex64>>,
    pub peak_source: f64,
    pub tail_source: f64,
}

impl ContourLine {
    /// `(1 / 2 pi) int exp(i sigma t) v_hat` at probe `p`.
    pub fn inverse(&self, p: usize, t: f64) -> f64 {
        let vals = &self.probe_values[p];
        let mut acc = 0.5 * vals[0].re;
        for (j, &x) in self.x.iter().enumerate().skip(1) {
            acc += (Complex64::new(0.0, x * t).exp() * vals[j]).re;
        }
        (-self.s * t).exp() * acc * self.step / std::f64::consts::PI
    }

    /// `(1 / 2 pi) int |v_hat|` along the line.
    pub fn abs_integral(&self, p: usize) -> f64 {
        let vals = &self.probe_values[p];
        let sum: f64 = vals.iter().enumerate().map(|(j, v)| if j == 0 { 0.5 * v.norm() } else { v.norm() }).sum();
        sum * self.step / std::f64::consts::PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MellinReconstruction {
    pub ell: u32,
    pub probe_r_star: Vec<f64>,
    pub probe_r: Vec<f64>,
    pub times: Vec<f64>,
    /// `psi` of the cut-off field from the run, per probe.
    pub time_domain: Vec<Vec<f64>>,
    /// `psi` from the first contour, per probe.
    pub frequency_domain: Vec<Vec<f64>>,
    pub lines: Vec<ContourLine>,
    /// `sup |time - frequency| / sup |time|` over the window.
    pub reconstruction_error: f64,
    /// `sup |first contour - second contour| / sup |time|`.
    pub contour_defect: f64,
    /// Constant from the residue operator applied to `f_hat(0)`.
    pub c_residue: f64,
    /// Constant from the difference of the first and shifted contours.
    pub c_shift: f64,
    /// Spread of the contour difference over probes and window.
    pub c_shift_spread: f64,
    pub c_fit: Option<TailFit>,
    /// `A` in `|psi - c| <= A exp(-shift t)`, per probe.
    pub remainder_bound: Vec<f64>,
    /// `max |psi - c| exp(shift t) / A` over the window.
    pub remainder_ratio: f64,
    pub source_support: [f64; 2],
}

impl MellinReconstruction {
    /// Rows `(t, time domain, frequency domain, difference)` for probe `p`.
    pub fn rows(&self, p: usize) -> Vec<[f64; 4]> {
        self.times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (a, b) = (self.time_domain[p][k], self.frequency_domain[p][k]);
                [t, a, b, a - b]
            })
            .collect()
    }
}

fn sample_line(
    run: &CutoffRun,
    grid: &RadialGrid,
    potential: &ModePotential,
    probes: &[usize],
    s: f64,
    cfg: &MellinConfig,
) -> Result<ContourLine> {
    let step = 2.0 * std::f64::consts::PI / cfg.period;
    let n = grid.len();
    let dt = run.dt;
    let batch = cfg.batch.max(1);
    let mut x = Vec::new();
    let mut probe_values = vec![Vec::new(); probes.len()];
    let mut peak = 0.0f64;
    let mut tail;
    let mut j0 = 0usize;
    loop {
        let js: Vec<usize> = (j0..j0 + batch).collect();
        let out: Vec<Result<(f64, Vec<Complex64>)>> = js
            .par_iter()
            .map(|&j| {
                let sigma = Complex64::new(j as f64 * step, s);
                let g = run.source_transform(sigma, n);
                let size = g[1..n - 1].iter().fold(0.0f64, |m, z| m.max(z.norm()));
                let sigma_dt = (sigma * (0.5 * dt)).sin() * (2.0 / dt);
                if size == 0.0 {
                    return Ok((0.0, vec![Complex64::default(); probes.len()]));
                }
                let sol = resolvent::solve(sigma_dt, &g, grid, potential, &cfg.solve)?;
                Ok((size, probes.iter().map(|&i| sol.w[i]).collect()))
            })
            .collect();
        tail = 0.0f64;
        for (k, r) in out.into_iter().enumerate() {
            let (size, vals) = r?;
            x.push(js[k] as f64 * step);
            for (pv, v) in probe_values.iter_mut().zip(vals) {
                pv.push(v);
            }
            peak = peak.max(size);
            tail = tail.max(size);
        }
        j0 += batch;
        if tail <= cfg.decay_tol * peak {
            break;
        }
        if j0 as f64 * step > cfg.sigma_cap {
            return Err(Error::NoConvergence { what: "Mellin frequency truncation", iterations: j0 });
        }
    }
    Ok(ContourLine { s, step, x, probe_values, peak_source: peak, tail_source: tail })
}

/// Reconstructs the cut-off field from its transform on two contours below
/// the real axis, then shifts past the pole at zero and isolates the constant.
pub fn mellin_reconstruct(
    run: &CutoffRun,
    grid: &RadialGrid,
    potential: &ModePotential,
    cfg: &MellinConfig,
) -> Result<MellinReconstruction> {
    for &s in &cfg.heights {
        if !(s < 0.0) {
            return Err(Error::ContourOutsideAnalyticity { height: s });
        }
    }
    if !(cfg.shift > 0.0) || !(cfg.period > 0.0) || !(cfg.window[1] > cfg.window[0]) {
        return Err(Error::InvalidInput("Mellin shift, period or window".into()));
    }
    let t_end = run.output.final_state.t;
    if cfg.window[1] > t_end || cfg.period < t_end {
        return Err(Error::InvalidInput(format!("window {:?} and period {} against t_end {t_end}", cfg.window, cfg.period)));
    }
    let series = &run.output.series;
    let probes: Vec<usize> = series.probes.iter().map(|p| p.index).collect();
    if probes.is_empty() {
        return Err(Error::InvalidInput("reconstruction needs at least one probe".into()));
    }
    let ell = potential.ell;
    let lines = [cfg.heights[0], cfg.heights[1], cfg.shift]
        .iter()
        .map(|&s| sample_line(run, grid, potential, &probes, s, cfg))
        .collect::<Result<Vec<_>>>()?;

    let sel: Vec<usize> =
        (0..series.times.len()).filter(|&k| series.times[k] >= cfg.window[0] && series.times[k] <= cfg.window[1]).collect();
    let times: Vec<f64> = sel.iter().map(|&k| series.times[k]).collect();
    let probe_r: Vec<f64> = series.probes.iter().map(|p| p.r).collect();
    let time_domain: Vec<Vec<f64>> =
        (0..probes.len()).map(|p| sel.iter().map(|&k| run.cutoff_probes[p][k] / probe_r[p]).collect()).collect();
    let from_line = |l: &ContourLine| -> Vec<Vec<f64>> {
        (0..probes.len()).map(|p| times.iter().map(|&t| l.inverse(p, t) / probe_r[p]).collect()).collect()
    };
    let frequency_domain = from_line(&lines[0]);
    let second = from_line(&lines[1]);
    let shifted = from_line(&lines[2]);

    let sup = |a: &[Vec<f64>]| a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0f64, f64::max)
    };
    let scale = sup(&time_domain).max(f64::MIN_POSITIVE);
    let reconstruction_error = diff(&time_domain, &frequency_domain) / scale;
    let contour_defect = diff(&frequency_domain, &second) / scale;

    let gaps: Vec<f64> = frequency_domain
        .iter()
        .zip(&shifted)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q))
        .collect();
    let c_shift = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    let c_shift_spread = gaps.iter().map(|g| (g - c_shift).abs()).fold(0.0, f64::max);

    let c_residue = if ell == 0 {
        let data = resolvent::residue_at_zero(grid, potential, &cfg.residue)?;
        let f0 = run.source_transform(Complex64::default(), grid.len());
        (Complex64::i() * data.constant_for(grid, &f0)).re
    } else {
        0.0
    };

    let remainder_bound: Vec<f64> = (0..probes.len()).map(|p| lines[2].abs_integral(p) / probe_r[p]).collect();
    let mut remainder_ratio = 0.0f64;
    for p in 0..probes.len() {
        for (k, &t) in times.iter().enumerate() {
            let r = (time_domain[p][k] - c_residue).abs() * (cfg.shift * t).exp();
            remainder_ratio = remainder_ratio.max(r / remainder_bound[p].max(f64::MIN_POSITIVE));
        }
    }

    let c_fit = if ell == 0 {
        let p0 = &series.probes[0];
        let psi: Vec<f64> = p0.psi();
        let fit = fit_tail(&series.times, &psi, [cfg.fit_start, t_end], &cfg.fit)?;
        if (fit.c - c_residue).abs() > cfg.residue_tol * fit.c.abs() {
            return Err(Error::ResidueMismatch { residue: c_residue, fitted: fit.c });
        }
        Some(fit)
    } else {
        None
    };

    Ok(MellinReconstruction {
        ell,
        probe_r_star: series.probes.iter().map(|p| p.r_star).collect(),
        probe_r,
        times,
        time_domain,
        frequency_domain,
        lines,
        reconstruction_error,
        contour_defect,
        c_residue,
        c_shift,
        c_shift_spread,
        c_fit,
        remainder_bound,
        remainder_ratio,
        source_support: run.source_support,
    })
}
