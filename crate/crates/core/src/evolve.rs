//! Time-domain evolution of `phi_tt = phi_{r_* r_*} - V phi` per channel.
//!
//! Staggered leapfrog on a uniform `r_*` grid: `phi` lives at integer steps,
//! `pi = phi_t` at half steps. Outgoing ends impose `psi_t = -+ psi_{r_*}`
//! on `psi = phi / r` with a box discretization, so constants in `psi` are
//! preserved exactly. A node at `r = 0` (de Sitter origin) is held at zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RadialGrid;
use crate::modes::{self, ModeCoefficients, ModePotential, SphereQuadrature};

/// Field and time derivative at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub t: f64,
    pub ell: u32,
    pub phi: Vec<f64>,
    pub pi: Vec<f64>,
}

impl WaveState {
    pub fn zero(grid: &RadialGrid, ell: u32) -> Self {
        Self { t: 0.0, ell, phi: vec![0.0; grid.len()], pi: vec![0.0; grid.len()] }
    }

    /// Time-symmetric data `phi(r_*)`, `pi = 0`.
    pub fn from_fn(grid: &RadialGrid, ell: u32, phi: impl Fn(f64) -> f64) -> Self {
        let phi: Vec<f64> = grid.nodes.iter().map(|n| if n.r == 0.0 { 0.0 } else { phi(n.r_star) }).collect();
        Self { t: 0.0, ell, pi: vec![0.0; phi.len()], phi }
    }

    pub fn gaussian(grid: &RadialGrid, ell: u32, center: f64, width: f64, amplitude: f64) -> Self {
        Self::from_fn(grid, ell, |s| amplitude * (-((s - center) / width).powi(2)).exp())
    }

    /// `phi / r` at every node; zero at an origin node.
    pub fn psi(&self, grid: &RadialGrid) -> Vec<f64> {
        self.phi.iter().zip(&grid.nodes).map(|(p, n)| if n.r == 0.0 { 0.0 } else { p / n.r }).collect()
    }

    fn validate(&self, grid: &RadialGrid) -> Result<()> {
        if self.phi.len() != grid.len() || self.pi.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "state has {} / {} entries, grid has {}",
                self.phi.len(),
                self.pi.len(),
                grid.len()
            )));
        }
        if self.phi.iter().chain(&self.pi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite initial data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Outgoing,
    /// Dirichlet at both ends.
    Reflecting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// Grid spacing in `r_*`; must match the grid handed to `evolve`.
    pub spacing: f64,
    /// `dt / dr_*`.
    pub cfl: f64,
    pub t_end: f64,
    pub boundary: Boundary,
    /// Probe locations in `r_*`; each is snapped to the nearest node.
    pub probes: Vec<f64>,
    /// Recording cadence in time units, rounded to a whole number of steps.
    pub record_every: f64,
    /// Cadence for full snapshots; none when absent.
    pub snapshot_every: Option<f64>,
    /// Require initial data to vanish on this many nodes at each end.
    pub support_margin: usize,
    /// Order of the outgoing condition at the (left, right) ends: 1 is the
    /// box scheme for `psi_t = -+ psi_{r_*}`, 2 applies that operator twice.
    /// Order 1 keeps the flux pairing of the constant mode exact; order 2
    /// cuts the discrete reflection where the potential tail is negligible.
    pub outgoing_order: [u8; 2],
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            spacing: 0.1,
            cfl: 0.9,
            t_end: 300.0,
            boundary: Boundary::Outgoing,
            probes: vec![-20.0, 0.0, 20.0],
            record_every: 0.9,
            snapshot_every: None,
            support_margin: 10,
            outgoing_order: [2, 1],
        }
    }
}

impl EvolutionConfig {
    pub fn dt(&self) -> f64 {
        self.cfl * self.spacing
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt() - 1e-9).ceil().max(0.0) as usize
    }

    fn stride(&self, every: f64) -> usize {
        ((every / self.dt()).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub r_star: f64,
    pub r: f64,
    pub index: usize,
    pub phi: Vec<f64>,
}

impl Probe {
    pub fn psi(&self) -> Vec<f64> {
        self.phi.iter().map(|p| p / self.r).collect()
    }
}

/// Recorded diagnostics on a common, strictly increasing time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub ell: u32,
    pub times: Vec<f64>,
    pub probes: Vec<Probe>,
    /// `sup_r |phi|`.
    pub sup_phi: Vec<f64>,
    /// Discrete energy of the scheme (see [`scheme_energy`]).
    pub energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOutput {
    pub series: ProbeSeries,
    pub snapshots: Vec<WaveState>,
    pub final_state: WaveState,
}

fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * h
    } else {
        h
    }
}

/// `E = 1/2 sum (pi^2 + (D phi)^2 + V phi^2)` with trapezoid weights and
/// one-sided edge differences.
pub fn energy(state: &WaveState, potential: &ModePotential, spacing: f64) -> f64 {
    let n = state.phi.len();
    let mut e = 0.0;
    for i in 0..n {
        let w = trapezoid_weight(i, n, spacing);
        e += w * (state.pi[i] * state.pi[i] + potential.v_scheme[i] * state.phi[i] * state.phi[i]);
    }
    for i in 0..n.saturating_sub(1) {
        let d = (state.phi[i + 1] - state.phi[i]) / spacing;
        e += spacing * d * d;
    }
    0.5 * e
}

/// Time-centred energy conserved exactly by leapfrog with Dirichlet ends:
/// `1/2 [ |pi^{n-1/2}|^2 + <D phi^{n-1}, D phi^n> + <V phi^{n-1}, phi^n> ]`.
pub fn scheme_energy(phi_prev: &[f64], phi: &[f64], pi_half: &[f64], v: &[f64], h: f64) -> f64 {
    let n = phi.len();
    let mut e = 0.0;
    for i in 0..n {
        let w = trapezoid_weight(i, n, h);
        e += w * (pi_half[i] * pi_half[i] + v[i] * phi_prev[i] * phi[i]);
    }
    for i in 0..n.saturating_sub(1) {
        e += (phi_prev[i + 1] - phi_prev[i]) * (phi[i + 1] - phi[i]) / h;
    }
    0.5 * e
}

fn accel(phi: &[f64], v: &[f64], inv_h2: f64, i: usize) -> f64 {
    (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) * inv_h2 - v[i] * phi[i]
}

struct Stepper<'a> {
    grid: &'a RadialGrid,
    v: &'a [f64],
    boundary: Boundary,
    order: [u8; 2],
    dt: f64,
    h: f64,
    /// `psi` at the three nodes nearest each end, previous step.
    hist: [[f64; 3]; 2],
    phi: Vec<f64>,
    next: Vec<f64>,
    /// `pi^{n-1/2}`
    pi_half: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(grid: &'a RadialGrid, v: &'a [f64], boundary: Boundary, order: [u8; 2], dt: f64, s: &WaveState) -> Self {
        let h = grid.spacing;
        let n = grid.len();
        let inv_h2 = 1.0 / (h * h);
        let mut pi_half = s.pi.clone();
        for i in 1..n - 1 {
            pi_half[i] -= 0.5 * dt * accel(&s.phi, v, inv_h2, i);
        }
        let mut st = Self { grid, v, boundary, order, dt, h, hist: [[0.0; 3]; 2], phi: s.phi.clone(), next: vec![0.0; n], pi_half };
        // psi^{-1} from the backward Taylor step
        let prev: Vec<f64> = st.phi.iter().zip(&st.pi_half).map(|(p, q)| p - dt * q).collect();
        st.hist = st.end_psi(&prev);
        st
    }

    fn end_psi(&self, phi: &[f64]) -> [[f64; 3]; 2] {
        let n = phi.len();
        let nodes = &self.grid.nodes;
        let psi = |i: usize| if nodes[i].r == 0.0 { 0.0 } else { phi[i] / nodes[i].r };
        [[psi(0), psi(1), psi(2)], [psi(n - 1), psi(n - 2), psi(n - 3)]]
    }

    /// New `psi` at an end from the box operator
    /// `B = (Z - 1)(1 + K) + lam (Z + 1)(1 - K)`, `Z` the forward time shift
    /// and `K` the inward space shift, applied `order` times.
    fn outgoing(&self, order: u8, new: [f64; 3], cur: [f64; 3], old: [f64; 3]) -> f64 {
        let lam = self.dt / self.h;
        // b[a][k]: coefficient of Z^a K^k
        let b = [[lam - 1.0, -1.0 - lam], [1.0 + lam, 1.0 - lam]];
        let levels = [old, cur, new];
        if order == 1 {
            let rest = b[0][0] * cur[0] + b[0][1] * cur[1] + b[1][1] * new[1];
            return -rest / b[1][0];
        }
        let mut c = [[0.0; 3]; 3];
        for a1 in 0..2 {
            for k1 in 0..2 {
                for a2 in 0..2 {
                    for k2 in 0..2 {
                        c[a1 + a2][k1 + k2] += b[a1][k1] * b[a2][k2];
                    }
                }
            }
        }
        let mut rest = 0.0;
        for (a, row) in c.iter().enumerate() {
            for (k, coef) in row.iter().enumerate() {
                if (a, k) != (2, 0) {
                    rest += coef * levels[a][k];
                }
            }
        }
        -rest / c[2][0]
    }

    fn step(&mut self) {
        let n = self.phi.len();
        let (dt, h) = (self.dt, self.h);
        let inv_h2 = 1.0 / (h * h);
        for i in 1..n - 1 {
            self.pi_half[i] += dt * accel(&self.phi, self.v, inv_h2, i);
            self.next[i] = self.phi[i] + dt * self.pi_half[i];
        }
        let nodes = &self.grid.nodes;
        let cur = self.end_psi(&self.phi);
        let fresh = self.end_psi(&self.next);
        for (side, end) in [0, n - 1].into_iter().enumerate() {
            let new = if nodes[end].r == 0.0 {
                0.0
            } else {
                match self.boundary {
                    Boundary::Reflecting => 0.0,
                    Boundary::Outgoing => {
                        nodes[end].r * self.outgoing(self.order[side], fresh[side], cur[side], self.hist[side])
                    }
                }
            };
            self.next[end] = new;
            self.pi_half[end] = (new - self.phi[end]) / dt;
        }
        self.hist = cur;
        std::mem::swap(&mut self.phi, &mut self.next);
    }

    /// `pi` at the current integer step, second-order accurate.
    fn state(&self, t: f64, ell: u32) -> WaveState {
        let n = self.phi.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut pi = self.pi_half.clone();
        for i in 1..n - 1 {
            pi[i] += 0.5 * self.dt * accel(&self.phi, self.v, inv_h2, i);
        }
        WaveState { t, ell, phi: self.phi.clone(), pi }
    }

    fn energy(&self) -> f64 {
        let prev: Vec<f64> = self.phi.iter().zip(&self.pi_half).map(|(p, q)| p - self.dt * q).collect();
        scheme_energy(&prev, &self.phi, &self.pi_half, self.v, self.h)
    }
}

/// Evolves one channel to `cfg.t_end`.
pub fn evolve(
    initial: &WaveState,
    potential: &ModePotential,
    grid: &RadialGrid,
    cfg: &EvolutionConfig,
) -> Result<EvolutionOutput> {
    evolve_observed(initial, potential, grid, cfg, &mut |_, _| {})
}

/// As [`evolve`], calling `observer(t, phi)` at every time level.
pub fn evolve_observed(
    initial: &WaveState,
    potential: &ModePotential,
    grid: &RadialGrid,
    cfg: &EvolutionConfig,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<EvolutionOutput> {
    if cfg.outgoing_order.iter().any(|o| !(1..=2).contains(o)) {
        return Err(Error::InvalidInput(format!("outgoing orders {:?} not in 1..=2", cfg.outgoing_order)));
    }
    if !(cfg.cfl > 0.0) || cfg.cfl > 1.0 {
        return Err(Error::CflViolation { ratio: cfg.cfl });
    }
    if (cfg.spacing - grid.spacing).abs() > 1e-12 * grid.spacing {
        return Err(Error::InvalidInput(format!("config spacing {} but grid spacing {}", cfg.spacing, grid.spacing)));
    }
    if potential.len() != grid.len() || potential.ell != initial.ell {
        return Err(Error::InvalidInput("potential does not match grid or channel".into()));
    }
    if grid.len() < 2 * cfg.support_margin + 3 {
        return Err(Error::InvalidInput(format!("grid of {} nodes is too short", grid.len())));
    }
    initial.validate(grid)?;
    let n = grid.len();
    let peak = initial.phi.iter().chain(&initial.pi).fold(0.0f64, |a, b| a.max(b.abs()));
    // an origin node is a regular point, not a truncation
    let lo = if grid.nodes[0].r == 0.0 { 0..0 } else { 0..cfg.support_margin };
    let hi = if grid.nodes[n - 1].r == 0.0 { n..n } else { n - cfg.support_margin..n };
    let edge = lo
        .chain(hi)
        .map(|i| initial.phi[i].abs().max(initial.pi[i].abs()))
        .fold(0.0f64, f64::max);
    if edge > 1e-12 * peak {
        return Err(Error::InvalidInput(format!(
            "initial data reaches within {} nodes of the boundary",
            cfg.support_margin
        )));
    }
    let mut probes = Vec::with_capacity(cfg.probes.len());
    for &p in &cfg.probes {
        if p < grid.r_star_min || p > grid.r_star_max {
            return Err(Error::OutOfDomain { value: p, domain: format!("[{}, {}]", grid.r_star_min, grid.r_star_max) });
        }
        let index = grid.index_of(p);
        let node = &grid.nodes[index];
        probes.push(Probe { r_star: node.r_star, r: node.r, index, phi: Vec::new() });
    }

    let dt = cfg.dt();
    let steps = cfg.steps();
    let stride = cfg.stride(cfg.record_every);
    let snap_stride = cfg.snapshot_every.map(|s| cfg.stride(s));
    let mut st = Stepper::new(grid, &potential.v_scheme, cfg.boundary, cfg.outgoing_order, dt, initial);
    let mut series = ProbeSeries { ell: initial.ell, times: Vec::new(), probes, sup_phi: Vec::new(), energy: Vec::new() };
    let mut snapshots = Vec::new();

    for k in 0..=steps {
        let t = initial.t + k as f64 * dt;
        if k % stride == 0 || k == steps {
            if st.phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteDetected { step: k });
            }
            series.times.push(t);
            for p in series.probes.iter_mut() {
                p.phi.push(st.phi[p.index]);
            }
            series.sup_phi.push(st.phi.iter().fold(0.0f64, |a, b| a.max(b.abs())));
            series.energy.push(st.energy());
        }
        observer(t, &st.phi);
        if let Some(s) = snap_stride {
            if k % s == 0 {
                snapshots.push(st.state(t, initial.ell));
            }
        }
        if k < steps {
            st.step();
        }
    }
    if st.phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDetected { step: steps });
    }
    let final_state = st.state(initial.t + steps as f64 * dt, initial.ell);
    Ok(EvolutionOutput { series, snapshots, final_state })
}

/// Cauchy data for the full field `u` on the initial slice.
pub struct CauchyData<'a> {
    pub u0: &'a (dyn Fn(f64, f64, f64) -> f64 + Sync),
    pub u1: &'a (dyn Fn(f64, f64, f64) -> f64 + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProbe {
    pub r_star: f64,
    pub theta: f64,
    pub phi: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution3d {
    pub l_max: usize,
    /// `[l][m + l]`
    pub channels: Vec<Vec<ProbeSeries>>,
    pub times: Vec<f64>,
    pub points: Vec<PointProbe>,
    /// Coefficient of `Y_00` in the late `psi` of the `l = 0` channel at the
    /// first probe, converted to the constant value of `u`.
    pub constant_estimate: f64,
}

/// Evolves `u` by projecting onto real harmonics with `l <= l_max`, running
/// every channel, and resumming `u = sum r^{-1} phi_lm Y_lm` at the points
/// `(r_*, theta, phi)`; each `r_*` must coincide with a probe of `cfg`.
pub fn evolve_3d(
    data: &CauchyData,
    l_max: usize,
    geom_grid: &RadialGrid,
    potentials: &[ModePotential],
    cfg: &EvolutionConfig,
    points: &[(f64, f64, f64)],
    quad_threshold: f64,
) -> Result<Evolution3d> {
    if potentials.len() <= l_max {
        return Err(Error::InvalidInput(format!("{} potentials for l_max = {l_max}", potentials.len())));
    }
    let quad = SphereQuadrature::new(l_max);
    let radii: Vec<f64> = geom_grid.nodes.iter().map(|n| n.r).collect();
    let c0: ModeCoefficients = modes::project(data.u0, &radii, &quad, quad_threshold)?;
    let c1: ModeCoefficients = modes::project(data.u1, &radii, &quad, quad_threshold)?;
    let jobs: Vec<(usize, usize)> = (0..=l_max).flat_map(|l| (0..=2 * l).map(move |k| (l, k))).collect();
    let runs: Vec<Result<EvolutionOutput>> = jobs
        .par_iter()
        .map(|&(l, k)| {
            let phi: Vec<f64> = c0.coeffs[l][k].iter().zip(&radii).map(|(c, r)| c * r).collect();
            let pi: Vec<f64> = c1.coeffs[l][k].iter().zip(&radii).map(|(c, r)| c * r).collect();
            let s = WaveState { t: 0.0, ell: l as u32, phi, pi };
            evolve(&s, &potentials[l], geom_grid, cfg)
        })
        .collect();
    let mut channels: Vec<Vec<ProbeSeries>> = (0..=l_max).map(|_| Vec::new()).collect();
    for ((l, _), run) in jobs.iter().zip(runs) {
        channels[*l].push(run?.series);
    }
    let times = channels[0][0].times.clone();
    let mut out_points = Vec::with_capacity(points.len());
    for &(rs, th, ph) in points {
        let pidx = cfg
            .probes
            .iter()
            .position(|p| geom_grid.index_of(*p) == geom_grid.index_of(rs))
            .ok_or_else(|| Error::InvalidInput(format!("point at r_* = {rs} is not a probe")))?;
        let y = modes::real_harmonics(l_max, th, ph);
        let r = channels[0][0].probes[pidx].r;
        let u = (0..times.len())
            .map(|j| {
                let mut s = 0.0;
                for (l, row) in channels.iter().enumerate() {
                    for (k, ch) in row.iter().enumerate() {
                        s += ch.probes[pidx].phi[j] * y[l][k];
                    }
                }
                s / r
            })
            .collect();
        out_points.push(PointProbe { r_star: rs, theta: th, phi: ph, u });
    }
    let p0 = &channels[0][0].probes[0];
    let y00 = (4.0 * std::f64::consts::PI).sqrt().recip();
    let constant_estimate = p0.phi.last().copied().unwrap_or(0.0) / p0.r * y00;
    Ok(Evolution3d { l_max, channels, times, points: out_points, constant_estimate })
}
