//! Frequency-domain solver for the radial operator `-d^2/dr_*^2 + V - sigma^2`.
//!
//! Conventions are fixed by [`FrequencyConvention`]: time dependence
//! `exp(i sigma t)`, physical half-plane `Im sigma < 0`, outgoing behavior
//! `exp(+i sigma r_*)` at the black-hole end and `exp(-i sigma r_*)` at the
//! cosmological end.
//!
//! Continuation into `Im sigma > 0` is done by shooting. At each horizon the
//! outgoing solution is `exp(+-i sigma r_*) F(r)` with `F` analytic in `r`;
//! `F` is summed as a Frobenius series in `r - r_h` and integrated in `r` to a
//! matching radius. The series coefficients have poles on the lattice
//! `sigma = i kappa k`; multiplying by `prod_{k <= K} (1 - k / k_*)` with
//! `k_* = -i sigma / kappa` removes them, so the renormalized Wronskian
//! `W~` is entire in the box searched and its zeros are exactly the poles of
//! the continued resolvent.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::Charts;
use crate::error::{Error, Result};
use crate::geometry::{Geometry, RadialGrid};
use crate::modes::{self, ModePotential};
use crate::ode::{dopri5, OdeTolerance};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Sign conventions of the frequency domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyConvention;

impl FrequencyConvention {
    pub const TIME_FACTOR: &'static str = "exp(i sigma t)";

    pub fn is_physical(sigma: Complex64) -> bool {
        sigma.im < 0.0
    }

    /// Outgoing factor at the black-hole end.
    pub fn outgoing_bh(sigma: Complex64, r_star: f64) -> Complex64 {
        (I * sigma * r_star).exp()
    }

    /// Outgoing factor at the cosmological end.
    pub fn outgoing_ds(sigma: Complex64, r_star: f64) -> Complex64 {
        (-I * sigma * r_star).exp()
    }

    /// Mellin kernel `T^{i sigma}` at `T = exp(-t)`.
    pub fn mellin_kernel(sigma: Complex64, t: f64) -> Complex64 {
        (-I * sigma * t).exp()
    }

    /// Outgoing solutions and the transform kernel must decay for a
    /// physical frequency.
    pub fn check() -> Result<()> {
        let s = Complex64::new(0.7, -0.3);
        assert!(Self::is_physical(s));
        let ok = Self::outgoing_bh(s, -20.0).norm() < Self::outgoing_bh(s, -10.0).norm()
            && Self::outgoing_ds(s, 20.0).norm() < Self::outgoing_ds(s, 10.0).norm()
            && Self::mellin_kernel(s, 20.0).norm() < Self::mellin_kernel(s, 10.0).norm();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("frequency convention is inconsistent".into()))
        }
    }
}

// ---------------------------------------------------------------------------
// Frobenius series

/// Coefficients of `p(x0 + x)` from those of `p(x)`.
fn taylor_shift(p: &[Complex64], x0: f64) -> Vec<Complex64> {
    let mut a = p.to_vec();
    let n = a.len();
    for i in 0..n.saturating_sub(1) {
        for j in (i..n - 1).rev() {
            let next = a[j + 1];
            a[j] += next * x0;
        }
    }
    a
}

/// Series solution `x^rho sum_n a_n x^n` of `x^2 p y'' + x q y' + r y = 0`
/// with `p, q, r` polynomials in `x` and `p(0) != 0`.
#[derive(Debug, Clone)]
struct Frobenius {
    p: Vec<Complex64>,
    q: Vec<Complex64>,
    r: Vec<Complex64>,
    rho: f64,
    /// Lattice points `1..=lattice` of the second exponent are renormalized.
    lattice: usize,
    /// Difference of the second and first indicial exponents.
    kstar: Complex64,
}

impl Frobenius {
    fn coef(p: &[Complex64], j: usize) -> Complex64 {
        p.get(j).copied().unwrap_or_default()
    }

    fn f(&self, j: usize, s: Complex64) -> Complex64 {
        Self::coef(&self.p, j) * s * (s - 1.0) + Self::coef(&self.q, j) * s + Self::coef(&self.r, j)
    }

    /// `prod_{k <= lattice} (k - k_*) / k`, the factor multiplying the
    /// unnormalized series.
    fn lattice_factor(&self) -> Complex64 {
        (1..=self.lattice).map(|k| (re(k as f64) - self.kstar) / k as f64).product()
    }

    /// Value and `x`-derivative of the renormalized series at `x`.
    fn eval(&self, x: f64, tol: f64, max_terms: usize) -> Result<(Complex64, Complex64)> {
        let deg = self.p.len().max(self.q.len()).max(self.r.len()) - 1;
        let k = self.lattice;
        let g: Vec<Complex64> =
            (0..=k).map(|i| if i == 0 { re(1.0) } else { (re(i as f64) - self.kstar) / i as f64 }).collect();
        // suffix[n] = prod_{i=n+1}^{k} g_i
        let mut suffix = vec![re(1.0); k + 1];
        for n in (0..k).rev() {
            suffix[n] = suffix[n + 1] * g[n + 1];
        }
        let p0 = self.p[0];
        let mut b = Vec::with_capacity(256);
        b.push(re(1.0));
        let mut sum = suffix[0];
        let mut dsum = Complex64::default();
        let mut xn = 1.0;
        let mut quiet = 0;
        for n in 1..max_terms {
            let mut acc = Complex64::default();
            for j in 1..=n.min(deg) {
                let mut w = b[n - j] * self.f(j, re((n - j) as f64 + self.rho));
                for gi in g.iter().take(n.min(k + 1)).skip(n - j + 1) {
                    w *= gi;
                }
                acc += w;
            }
            let nf = n as f64;
            let bn = if n <= k { -acc / (p0 * nf * nf) } else { -acc / self.f(0, re(nf + self.rho)) };
            b.push(bn);
            let c = if n < k { bn * suffix[n] } else { bn };
            let xprev = xn;
            xn *= x;
            let term = c * xn;
            sum += term;
            dsum += c * nf * xprev;
            if !sum.is_finite() {
                return Err(Error::SeriesDivergence(format!("non-finite partial sum at term {n}")));
            }
            if n > deg + k && term.norm() <= tol * sum.norm() {
                quiet += 1;
                if quiet > deg {
                    let xr = if self.rho == 0.0 { 1.0 } else { x.powf(self.rho) };
                    let val = sum * xr;
                    let der = if self.rho == 0.0 { dsum } else { (sum * self.rho / x + dsum) * xr };
                    return Ok((val, der));
                }
            } else {
                quiet = 0;
            }
        }
        Err(Error::SeriesDivergence(format!("no convergence after {max_terms} terms at x = {x}")))
    }
}

// ---------------------------------------------------------------------------
// Shooting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootingConfig {
    /// Seeds sit at this fraction of each series' radius of convergence.
    pub seed_fraction: f64,
    pub series_tol: f64,
    pub max_terms: usize,
    pub ode_rtol: f64,
    pub ode_max_steps: usize,
    /// Lattice points renormalized at the black-hole horizon.
    pub lattice_bh: usize,
    /// Lattice points renormalized at the cosmological horizon.
    pub lattice_ds: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            seed_fraction: 0.5,
            series_tol: 1e-17,
            max_terms: 5000,
            ode_rtol: 1e-12,
            ode_max_steps: 200_000,
            lattice_bh: 4,
            lattice_ds: 4,
        }
    }
}

impl ShootingConfig {
    /// Renormalizes every lattice point up to `im_max`.
    pub fn covering(geom: &Geometry, im_max: f64) -> Self {
        let h = geom.horizons;
        let count = |kappa: f64| if kappa > 0.0 { (im_max.max(0.0) / kappa).ceil() as usize + 1 } else { 0 };
        Self { lattice_bh: count(h.kappa_bh), lattice_ds: count(h.kappa_ds), ..Self::default() }
    }
}

/// Outgoing solutions of one channel and their Wronskian.
#[derive(Debug, Clone)]
pub struct Shooter {
    geom: Geometry,
    ell: u32,
    cfg: ShootingConfig,
    seed_left: f64,
    seed_right: f64,
    r_match: f64,
}

impl Shooter {
    pub fn new(geom: &Geometry, ell: u32, cfg: ShootingConfig) -> Result<Self> {
        FrequencyConvention::check()?;
        if !(cfg.seed_fraction > 0.0 && cfg.seed_fraction < 1.0) {
            return Err(Error::InvalidInput(format!("seed fraction {}", cfg.seed_fraction)));
        }
        let h = geom.horizons;
        let f = cfg.seed_fraction;
        let (seed_left, seed_right) = if geom.is_de_sitter() {
            (f * h.r_ds, h.r_ds * (1.0 - f))
        } else {
            let gap = h.r_ds - h.r_bh;
            (h.r_bh + f * h.r_bh.min(gap), h.r_ds - f * gap)
        };
        let r_match = 0.5 * (seed_left + seed_right);
        Ok(Self { geom: geom.clone(), ell, cfg, seed_left, seed_right, r_match })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn config(&self) -> &ShootingConfig {
        &self.cfg
    }

    pub fn matching_radius(&self) -> f64 {
        self.r_match
    }

    fn ell_factor(&self) -> f64 {
        (self.ell * (self.ell + 1)) as f64
    }

    /// Series for `F` at a horizon; `eps = +1` at the black-hole end.
    fn horizon_series(&self, sigma: Complex64, r_h: f64, eps: f64, lattice: usize) -> Frobenius {
        let m = self.geom.params.m;
        let l3 = self.geom.params.lambda / 3.0;
        let ll = self.ell_factor();
        // mu r^3 F'' + (mu' r^3 + 2 i eps sigma r^3) F' - (L r + 2m - 2 lambda r^3 / 3) F = 0
        let a = [re(0.0), re(0.0), re(-2.0 * m), re(1.0), re(0.0), re(-l3)];
        let b = [re(0.0), re(2.0 * m), re(0.0), 2.0 * I * eps * sigma, re(-2.0 * l3)];
        let c = [re(-2.0 * m), re(-ll), re(0.0), re(2.0 * l3)];
        let a = taylor_shift(&a, r_h);
        let b = taylor_shift(&b, r_h);
        let c = taylor_shift(&c, r_h);
        let p = a[1..].to_vec();
        let mut r = vec![re(0.0)];
        r.extend_from_slice(&c);
        let kstar = re(1.0) - b[0] / p[0];
        Frobenius { p, q: b, r, rho: 0.0, lattice, kstar }
    }

    /// Regular solution at the de Sitter origin, `phi ~ r^(l+1)`.
    fn origin_series(&self, sigma: Complex64) -> Frobenius {
        let a2 = 1.0 / (self.geom.horizons.r_ds * self.geom.horizons.r_ds);
        let ll = self.ell_factor();
        let p = vec![re(1.0), re(0.0), re(-2.0 * a2), re(0.0), re(a2 * a2)];
        let q = vec![re(0.0), re(0.0), re(-2.0 * a2), re(0.0), re(2.0 * a2 * a2)];
        let r = vec![re(-ll), re(0.0), sigma * sigma + (ll + 2.0) * a2, re(0.0), re(-2.0 * a2 * a2)];
        Frobenius { p, q, r, rho: (self.ell + 1) as f64, lattice: 0, kstar: re(0.0) }
    }

    fn outgoing_at_seed(&self, sigma: Complex64, r_h: f64, eps: f64, lattice: usize, seed: f64) -> Result<[Complex64; 2]> {
        let s = self.horizon_series(sigma, r_h, eps, lattice);
        let (f, df) = s.eval(seed - r_h, self.cfg.series_tol, self.cfg.max_terms)?;
        let mu = self.geom.mu(seed);
        let e = (I * eps * sigma * self.geom.tortoise(seed)?).exp();
        Ok([e * f, e * (I * eps * sigma * f / mu + df)])
    }

    fn propagate(&self, sigma: Complex64, from: f64, y: [Complex64; 2]) -> Result<[Complex64; 2]> {
        let geom = &self.geom;
        let ell = self.ell;
        let s2 = sigma * sigma;
        let rhs = |r: f64, y: &[Complex64; 2]| {
            let mu = geom.mu(r);
            let v = modes::potential_at(geom, ell, r);
            [y[1], -y[1] * (geom.mu_prime(r) / mu) - y[0] * (s2 - v) / (mu * mu)]
        };
        let tol = OdeTolerance { rtol: self.cfg.ode_rtol, atol: 1e-300, max_steps: self.cfg.ode_max_steps };
        dopri5(rhs, from, self.r_match, y, tol)
    }

    /// `(phi, d phi / dr)` of the left solution at the matching radius.
    pub fn left(&self, sigma: Complex64) -> Result<[Complex64; 2]> {
        let h = self.geom.horizons;
        let y = if self.geom.is_de_sitter() {
            let (f, df) =
                self.origin_series(sigma).eval(self.seed_left, self.cfg.series_tol, self.cfg.max_terms)?;
            [f, df]
        } else {
            self.outgoing_at_seed(sigma, h.r_bh, 1.0, self.cfg.lattice_bh, self.seed_left)?
        };
        self.propagate(sigma, self.seed_left, y)
    }

    /// `(phi, d phi / dr)` of the right solution at the matching radius.
    pub fn right(&self, sigma: Complex64) -> Result<[Complex64; 2]> {
        let h = self.geom.horizons;
        let y = self.outgoing_at_seed(sigma, h.r_ds, -1.0, self.cfg.lattice_ds, self.seed_right)?;
        self.propagate(sigma, self.seed_right, y)
    }

    /// Renormalized Wronskian `mu (phi_- phi_+' - phi_-' phi_+)`, entire in
    /// `sigma` below the highest renormalized lattice point.
    pub fn wronskian(&self, sigma: Complex64) -> Result<Complex64> {
        if !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma = {sigma}")));
        }
        let (l, r) = (self.left(sigma)?, self.right(sigma)?);
        Ok(self.geom.mu(self.r_match) * (l[0] * r[1] - l[1] * r[0]))
    }

    /// Product of the lattice factors at both horizons; the plain Wronskian
    /// is `wronskian / lattice_factor`.
    pub fn lattice_factor(&self, sigma: Complex64) -> Complex64 {
        let h = self.geom.horizons;
        let mut f = self.horizon_series(sigma, h.r_ds, -1.0, self.cfg.lattice_ds).lattice_factor();
        if !self.geom.is_de_sitter() {
            f *= self.horizon_series(sigma, h.r_bh, 1.0, self.cfg.lattice_bh).lattice_factor();
        }
        f
    }
}

/// Renormalized Wronskian of channel `ell` with default shooting settings.
pub fn wronskian(geom: &Geometry, ell: u32, sigma: Complex64) -> Result<Complex64> {
    Shooter::new(geom, ell, ShootingConfig::default())?.wronskian(sigma)
}

// ---------------------------------------------------------------------------
// Resonance search

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub re: [f64; 2],
    pub im: [f64; 2],
}

impl SearchBox {
    pub fn new(re: [f64; 2], im: [f64; 2]) -> Self {
        Self { re, im }
    }

    fn width(&self) -> f64 {
        self.re[1] - self.re[0]
    }

    fn height(&self) -> f64 {
        self.im[1] - self.im[0]
    }

    fn contains(&self, z: Complex64) -> bool {
        z.re >= self.re[0] && z.re <= self.re[1] && z.im >= self.im[0] && z.im <= self.im[1]
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re[0] + self.re[1]), 0.5 * (self.im[0] + self.im[1]))
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re[0], self.im[0]),
            Complex64::new(self.re[1], self.im[0]),
            Complex64::new(self.re[1], self.im[1]),
            Complex64::new(self.re[0], self.im[1]),
        ]
    }

    fn split(&self, fx: f64, fy: f64) -> [SearchBox; 4] {
        let x = self.re[0] + fx * self.width();
        let y = self.im[0] + fy * self.height();
        [
            SearchBox::new([self.re[0], x], [self.im[0], y]),
            SearchBox::new([x, self.re[1]], [self.im[0], y]),
            SearchBox::new([x, self.re[1]], [y, self.im[1]]),
            SearchBox::new([self.re[0], x], [y, self.im[1]]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Boundary samples per side for the winding number.
    pub samples_per_side: usize,
    /// Largest phase step accepted between neighbouring boundary samples.
    pub max_phase_step: f64,
    /// A boundary value below this fraction of the boundary maximum counts
    /// as passing through a zero.
    pub zero_tol: f64,
    pub max_depth: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Boxes smaller than this (relative to the root box) holding several
    /// zeros report one multiple zero.
    pub min_box: f64,
    pub shooting: Option<ShootingConfig>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            samples_per_side: 64,
            max_phase_step: PI / 3.0,
            zero_tol: 1e-9,
            max_depth: 24,
            newton_tol: 1e-12,
            newton_max_iter: 60,
            min_box: 1e-7,
            shooting: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub sigma: Complex64,
    pub ell: u32,
    /// `|W~(sigma)|` at the refined zero.
    pub newton_residual: f64,
    /// `|W~'(sigma)|` at the refined zero.
    pub derivative: f64,
    pub multiplicity: usize,
    pub simple: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub ell: u32,
    pub search_box: SearchBox,
    /// Zero count from the argument principle on the box boundary.
    pub winding_number: i64,
    pub resonances: Vec<Resonance>,
    /// Largest distance from `-conj(sigma)` to the nearest reported zero,
    /// for boxes symmetric about the imaginary axis.
    pub symmetry_defect: Option<f64>,
}

struct Counter<'a> {
    shooter: &'a Shooter,
    cfg: &'a SearchConfig,
}

impl Counter<'_> {
    fn w(&self, z: Complex64) -> Result<Complex64> {
        self.shooter.wronskian(z)
    }

    /// Winding number of `W~` around the boundary of `b`.
    fn winding(&self, b: &SearchBox) -> Result<i64> {
        let n = self.cfg.samples_per_side.max(4);
        let c = b.corners();
        let pts: Vec<Complex64> = (0..4)
            .flat_map(|s| {
                let (a, e) = (c[s], c[(s + 1) % 4]);
                (0..n).map(move |k| a + (e - a) * (k as f64 / n as f64))
            })
            .collect();
        let vals = pts.par_iter().map(|&z| self.w(z)).collect::<Result<Vec<_>>>()?;
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let floor = self.cfg.zero_tol * scale;
        if vals.iter().any(|v| !(v.norm() > floor)) {
            return Err(Error::ContourThroughZero);
        }
        let mut total = 0.0;
        for k in 0..pts.len() {
            let j = (k + 1) % pts.len();
            total += self.phase(pts[k], pts[j], vals[k], vals[j], floor, 0)?;
        }
        Ok((total / (2.0 * PI)).round() as i64)
    }

    fn phase(&self, a: Complex64, b: Complex64, wa: Complex64, wb: Complex64, floor: f64, depth: usize) -> Result<f64> {
        let d = (wb / wa).arg();
        if d.abs() <= self.cfg.max_phase_step {
            return Ok(d);
        }
        if depth >= 30 {
            return Err(Error::ContourThroughZero);
        }
        let m = 0.5 * (a + b);
        let wm = self.w(m)?;
        if !(wm.norm() > floor) {
            return Err(Error::ContourThroughZero);
        }
        Ok(self.phase(a, m, wa, wm, floor, depth + 1)? + self.phase(m, b, wm, wb, floor, depth + 1)?)
    }

    fn derivative(&self, z: Complex64, step: f64) -> Result<Complex64> {
        let d = re(step);
        Ok((self.w(z + d)? - self.w(z - d)?) / (2.0 * step))
    }

    fn newton(&self, z0: Complex64, b: &SearchBox, multiplicity: usize) -> Result<Option<Complex64>> {
        let mut z = z0;
        let scale = b.width().max(b.height());
        let step = 1e-6 * scale.max(1e-3);
        for _ in 0..self.cfg.newton_max_iter {
            let w = self.w(z)?;
            if w == Complex64::default() {
                return Ok(Some(z));
            }
            let dw = self.derivative(z, step)?;
            let dz = w / dw * multiplicity as f64;
            z -= dz;
            if !z.is_finite() || (z - z0).norm() > 2.0 * scale {
                return Ok(None);
            }
            if dz.norm() <= self.cfg.newton_tol * (1.0 + z.norm()) {
                return Ok(if b.contains(z) { Some(z) } else { None });
            }
        }
        Ok(None)
    }

    fn search(&self, b: SearchBox, count: i64, depth: usize, root_size: f64, out: &mut Vec<(Complex64, usize)>) -> Result<()> {
        if count <= 0 {
            return Ok(());
        }
        let size = b.width().max(b.height());
        if count == 1 || size < self.cfg.min_box * root_size || depth >= self.cfg.max_depth {
            let m = count as usize;
            if let Some(z) = self.newton(b.center(), &b, m)? {
                out.push((z, m));
                return Ok(());
            }
            if size < self.cfg.min_box * root_size || depth >= self.cfg.max_depth {
                return Err(Error::NoConvergence { what: "resonance refinement", iterations: depth });
            }
        }
        // asymmetric splits keep the cuts off the imaginary axis
        let mut last = Error::ContourThroughZero;
        for (fx, fy) in [(0.5731, 0.4613), (0.4387, 0.5519), (0.6173, 0.3911)] {
            let kids = b.split(fx, fy);
            match kids.iter().map(|k| self.winding(k)).collect::<Result<Vec<_>>>() {
                Ok(counts) if counts.iter().sum::<i64>() == count => {
                    for (k, c) in kids.iter().zip(counts) {
                        self.search(*k, c, depth + 1, root_size, out)?;
                    }
                    return Ok(());
                }
                Ok(_) => last = Error::ContourThroughZero,
                Err(e @ Error::ContourThroughZero) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

/// All zeros of the renormalized Wronskian inside `b`.
pub fn find_resonances(geom: &Geometry, ell: u32, b: SearchBox, cfg: &SearchConfig) -> Result<ResonanceSet> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::InvalidInput(format!("degenerate search box {b:?}")));
    }
    let shooting = cfg.shooting.unwrap_or_else(|| ShootingConfig::covering(geom, b.im[1]));
    let shooter = Shooter::new(geom, ell, shooting)?;
    let counter = Counter { shooter: &shooter, cfg };
    let winding = counter.winding(&b)?;
    let mut found = Vec::new();
    let root_size = b.width().max(b.height());
    counter.search(b, winding, 0, root_size, &mut found)?;
    let step = 1e-6 * root_size.max(1e-3);
    let mut resonances = found
        .into_iter()
        .map(|(z, m)| {
            let w = counter.w(z)?;
            let dw = counter.derivative(z, step)?;
            Ok(Resonance {
                sigma: z,
                ell,
                newton_residual: w.norm(),
                derivative: dw.norm(),
                multiplicity: m,
                simple: m == 1 && dw.norm() > 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    resonances.sort_by(|a, b| a.sigma.im.total_cmp(&b.sigma.im).then(a.sigma.re.total_cmp(&b.sigma.re)));
    let symmetric = (b.re[0] + b.re[1]).abs() <= 1e-12 * root_size;
    let symmetry_defect = symmetric.then(|| {
        resonances.iter().fold(0.0f64, |acc, r| {
            let mirror = -r.sigma.conj();
            let d = resonances.iter().map(|q| (q.sigma - mirror).norm()).fold(f64::INFINITY, f64::min);
            acc.max(d)
        })
    });
    Ok(ResonanceSet { ell, search_box: b, winding_number: winding, resonances, symmetry_defect })
}

// ---------------------------------------------------------------------------
// Linear solves on the tortoise grid

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Residual tolerance relative to `sup |g|`.
    pub residual_tol: f64,
    /// `NearResonance` is raised when `sup |g| / sup |w|` drops below this.
    pub near_resonance: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { residual_tol: 1e-8, near_resonance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventSolution {
    pub sigma: Complex64,
    pub ell: u32,
    pub w: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
    /// `sup |A w - g| / sup |g|` for the discrete operator `A`.
    pub residual: f64,
    /// `sup |g| / sup |w|`, which vanishes at a pole.
    pub conditioning: f64,
}

/// Tridiagonal matrix stored by diagonals; `sub[i]` sits in row `i + 1`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub sub: Vec<Complex64>,
    pub diag: Vec<Complex64>,
    pub sup: Vec<Complex64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.len();
        if rhs.len() != n || n == 0 {
            return Err(Error::InvalidInput(format!("rhs length {} for system of size {n}", rhs.len())));
        }
        let (mut dl, mut d, mut du) = (self.sub.clone(), self.diag.clone(), self.sup.clone());
        let mut du2 = vec![Complex64::default(); n.saturating_sub(2)];
        let mut b = rhs.to_vec();
        let singular = || Error::SingularSystem;
        for i in 0..n - 1 {
            if d[i].norm() >= dl[i].norm() {
                if d[i] == Complex64::default() {
                    return Err(singular());
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] = b[i + 1] - fact * b[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du2[i];
                }
                du[i] = temp;
                let bi = b[i];
                b[i] = b[i + 1];
                b[i + 1] = bi - fact * b[i];
            }
            dl[i] = Complex64::default();
        }
        if d[n - 1] == Complex64::default() {
            return Err(singular());
        }
        let mut x = vec![Complex64::default(); n];
        x[n - 1] = b[n - 1] / d[n - 1];
        if n > 1 {
            x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected { step: 0 });
        }
        Ok(x)
    }
}

/// Grid step phase `theta` with `exp(i theta)` the discrete outgoing ratio.
pub fn discrete_phase(sigma: Complex64, h: f64) -> Complex64 {
    (sigma * (0.5 * h)).asin() * 2.0
}

/// Discrete operator `-D^2 + V_scheme - sigma^2` with outgoing rows on
/// `psi = w / r` at both ends (Dirichlet at a de Sitter origin).
pub fn discrete_operator(sigma: Complex64, grid: &RadialGrid, potential: &ModePotential) -> Result<Tridiagonal> {
    let n = grid.len();
    if potential.len() != n || n < 4 {
        return Err(Error::InvalidInput(format!("potential length {} for grid of {n} nodes", potential.len())));
    }
    let h = grid.spacing;
    let ih2 = 1.0 / (h * h);
    let e = (I * discrete_phase(sigma, h)).exp();
    let s2 = sigma * sigma;
    let mut sub = vec![re(-ih2); n - 1];
    let mut sup = vec![re(-ih2); n - 1];
    let mut diag: Vec<Complex64> = potential.v_scheme.iter().map(|&v| re(2.0 * ih2 + v) - s2).collect();
    let r = |i: usize| grid.nodes[i].r;
    if r(0) == 0.0 {
        diag[0] = re(ih2);
        sup[0] = re(0.0);
    } else {
        diag[0] = -e * (r(1) / r(0)) * ih2;
        sup[0] = re(ih2);
    }
    sub[n - 2] = -(re(1.0) / e) * (r(n - 1) / r(n - 2)) * ih2;
    diag[n - 1] = re(ih2);
    Ok(Tridiagonal { sub, diag, sup })
}

fn sup_norm(v: &[Complex64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.norm()))
}

/// `w = (-D^2 + V - sigma^2)^{-1} g` with outgoing conditions. The end values
/// of `g` are ignored (the boundary rows are homogeneous).
pub fn solve(
    sigma: Complex64,
    g: &[Complex64],
    grid: &RadialGrid,
    potential: &ModePotential,
    cfg: &SolveConfig,
) -> Result<ResolventSolution> {
    if g.len() != grid.len() {
        return Err(Error::InvalidInput(format!("source length {} for grid of {} nodes", g.len(), grid.len())));
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma = {sigma}")));
    }
    let a = discrete_operator(sigma, grid, potential)?;
    let n = g.len();
    let mut rhs = g.to_vec();
    rhs[0] = Complex64::default();
    rhs[n - 1] = Complex64::default();
    let w = a.solve(&rhs)?;
    let gn = sup_norm(&rhs);
    let wn = sup_norm(&w);
    let conditioning = if wn > 0.0 { gn / wn } else { f64::INFINITY };
    if conditioning < cfg.near_resonance {
        return Err(Error::NearResonance { re: sigma.re, im: sigma.im, wronskian: conditioning });
    }
    let aw = a.apply(&w);
    let res = aw.iter().zip(&rhs).map(|(x, y)| (x - y).norm()).fold(0.0f64, f64::max);
    let residual = if gn > 0.0 { res / gn } else { res };
    if !(residual < cfg.residual_tol) {
        return Err(Error::NoConvergence { what: "resolvent residual", iterations: 1 });
    }
    Ok(ResolventSolution { sigma, ell: potential.ell, w, rhs, residual, conditioning })
}

// ---------------------------------------------------------------------------
// Residue at zero

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidueConfig {
    pub radius: f64,
    pub points: usize,
    /// Width in `r_*` of the reference Gaussian source centred at `r_* = 0`.
    pub source_width: f64,
    /// Solves on the circle; near the pole `sup |w|` is of order
    /// `1 / radius`, and the residual relative to `sup |g|` scales with it.
    pub solve: SolveConfig,
}

impl Default for ResidueConfig {
    fn default() -> Self {
        Self {
            radius: 1e-2,
            points: 64,
            source_width: 2.0,
            solve: SolveConfig { residual_tol: 1e-6, near_resonance: 0.0 },
        }
    }
}

/// Rank-one residue of the resolvent at `sigma = 0`:
/// `Res_0 R g = gamma_res <r, g> r`, with `<r, g> = sum h r_i g_i` over
/// interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueData {
    pub gamma_res: Complex64,
    /// `psi = (Res_0 R g) / r` for the reference source.
    pub profile: Vec<Complex64>,
    /// `max |psi - mean| / |mean|` for the reference source.
    pub constancy_defect: f64,
    pub config: ResidueConfig,
}

/// `(1 / 2 pi i) * contour integral of R(sigma) g` over `|sigma| = radius`.
pub fn contour_residue(
    g: &[Complex64],
    grid: &RadialGrid,
    potential: &ModePotential,
    cfg: &ResidueConfig,
) -> Result<Vec<Complex64>> {
    let (radius, points) = (cfg.radius, cfg.points);
    let sols = (0..points)
        .into_par_iter()
        .map(|k| {
            let z = Complex64::from_polar(radius, 2.0 * PI * (k as f64 + 0.5) / points as f64);
            solve(z, g, grid, potential, &cfg.solve).map(|s| (z, s.w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![Complex64::default(); g.len()];
    for (z, w) in sols {
        for (a, x) in acc.iter_mut().zip(w) {
            *a += z * x;
        }
    }
    let inv = 1.0 / points as f64;
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

/// `<r, g>` over interior nodes.
pub fn radial_pairing(grid: &RadialGrid, g: &[Complex64]) -> Complex64 {
    let n = grid.len();
    grid.nodes[1..n - 1].iter().zip(&g[1..n - 1]).map(|(nd, &x)| x * (nd.r * grid.spacing)).sum()
}

fn psi_profile(grid: &RadialGrid, w: &[Complex64]) -> Vec<Complex64> {
    grid.nodes.iter().zip(w).filter(|(nd, _)| nd.r > 0.0).map(|(nd, &x)| x / nd.r).collect()
}

fn constancy(psi: &[Complex64]) -> (Complex64, f64) {
    let mean = psi.iter().sum::<Complex64>() / psi.len() as f64;
    let dev = psi.iter().map(|p| (p - mean).norm()).fold(0.0f64, f64::max);
    (mean, dev / mean.norm())
}

impl ResidueData {
    /// Applies the residue operator to `g` by contour quadrature.
    pub fn residue_of(&self, g: &[Complex64], grid: &RadialGrid, potential: &ModePotential) -> Result<Vec<Complex64>> {
        contour_residue(g, grid, potential, &self.config)
    }

    /// Constant that the residue operator assigns to `g`.
    pub fn constant_for(&self, grid: &RadialGrid, g: &[Complex64]) -> Complex64 {
        self.gamma_res * radial_pairing(grid, g)
    }
}

pub fn residue_at_zero(grid: &RadialGrid, potential: &ModePotential, cfg: &ResidueConfig) -> Result<ResidueData> {
    if potential.ell != 0 {
        return Err(Error::InvalidInput(format!("residue at zero requires l = 0, got {}", potential.ell)));
    }
    if !(cfg.radius > 0.0) || cfg.points < 8 {
        return Err(Error::InvalidInput(format!("residue contour radius {} with {} points", cfg.radius, cfg.points)));
    }
    let g: Vec<Complex64> = grid
        .nodes
        .iter()
        .map(|nd| re((-(nd.r_star / cfg.source_width).powi(2)).exp()))
        .collect();
    let res = contour_residue(&g, grid, potential, cfg)?;
    let profile = psi_profile(grid, &res);
    let (mean, constancy_defect) = constancy(&profile);
    let gamma_res = mean / radial_pairing(grid, &g);
    Ok(ResidueData { gamma_res, profile, constancy_defect, config: *cfg })
}

/// `max |psi - mean| / |mean|` of `w / r`.
pub fn constancy_defect(grid: &RadialGrid, w: &[Complex64]) -> f64 {
    constancy(&psi_profile(grid, w)).1
}

// ---------------------------------------------------------------------------
// Strip bound scan

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripConfig {
    /// Tortoise interval of the scan grids.
    pub r_star: [f64; 2],
    /// Largest grid step; finer where `|sigma|` demands it.
    pub max_spacing: f64,
    /// Grid steps per unit of `1 / |sigma|`.
    pub phase_per_step: f64,
    /// Width of the Gaussian source centred at `r_* = 0`.
    pub source_width: f64,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self { r_star: [-40.0, 60.0], max_spacing: 0.1, phase_per_step: 0.3, source_width: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripSample {
    pub sigma: Complex64,
    /// `sup |a^delta a^{-i sigma} w| / sup |g|` with `a = 1 / f`.
    pub surrogate: f64,
    /// `sup |w| / sup |g|`.
    pub unweighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripScan {
    pub ell: u32,
    pub im: f64,
    pub delta: f64,
    pub samples: Vec<StripSample>,
    /// Least-squares slope of `ln surrogate` against `ln |sigma|` over
    /// samples with `|sigma| >= 1`; `None` with fewer than two such samples.
    pub growth_exponent: Option<f64>,
}

/// Weighted resolvent norms along `Im sigma = im` at `count` equally spaced
/// real parts in `re_range`.
pub fn strip_bound_scan(
    charts: &Charts,
    ell: u32,
    im: f64,
    re_range: [f64; 2],
    count: usize,
    delta: f64,
    cfg: &StripConfig,
) -> Result<StripScan> {
    if count == 0 || !(re_range[1] >= re_range[0]) {
        return Err(Error::InvalidInput(format!("strip scan over {re_range:?} with {count} samples")));
    }
    let geom = &charts.geom;
    let sigmas: Vec<Complex64> = (0..count)
        .map(|k| {
            let t = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
            Complex64::new(re_range[0] + t * (re_range[1] - re_range[0]), im)
        })
        .collect();
    let samples = sigmas
        .par_iter()
        .map(|&sigma| {
            let target = cfg.max_spacing.min(cfg.phase_per_step / sigma.norm().max(1e-12));
            let len = cfg.r_star[1] - cfg.r_star[0];
            let cells = (len / target).ceil().max(4.0);
            let h = len / cells;
            let lo = cfg.r_star[0];
            let grid = RadialGrid::uniform(geom, lo, lo + cells * h, h)?;
            let pot = modes::potential(geom, &grid, ell);
            let g: Vec<Complex64> =
                grid.nodes.iter().map(|nd| re((-(nd.r_star / cfg.source_width).powi(2)).exp())).collect();
            let sol = solve(sigma, &g, &grid, &pot, &SolveConfig::default())?;
            let gn = sup_norm(&sol.rhs);
            let mut weighted = 0.0f64;
            for (nd, w) in grid.nodes.iter().zip(&sol.w) {
                let lf = charts.log_f_at(nd.r, nd.mu);
                // |a^delta a^{-i sigma}| = exp(-(delta + Im sigma) ln f)
                let weight = (-(delta + sigma.im) * lf).exp();
                weighted = weighted.max(weight * w.norm());
            }
            Ok(StripSample { sigma, surrogate: weighted / gn, unweighted: sup_norm(&sol.w) / gn })
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.sigma.norm() >= 1.0)
        .map(|s| (s.sigma.norm().ln(), s.surrogate.ln()))
        .collect();
    let growth_exponent = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(StripScan { ell, im, delta, samples, growth_exponent })
}
