//! Static de Sitter-Schwarzschild geometry.
//!
//! The metric function is `mu(r) = 1 - 2m/r - lambda r^2 / 3`. Its zeros are
//! the roots of the depressed cubic `r^3 - (3/lambda) r + 6m/lambda`, solved in
//! closed form. Points close to a horizon are carried together with their
//! distance to that horizon so that `mu` and the tortoise coordinate keep full
//! relative precision when `r - r_bh` is far below the spacing of doubles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacetimeParams {
    pub m: f64,
    pub lambda: f64,
    /// Pure de Sitter static patch (`m = 0`), regular at the origin.
    #[serde(default)]
    pub de_sitter: bool,
}

impl SpacetimeParams {
    pub fn new(m: f64, lambda: f64) -> Self {
        Self { m, lambda, de_sitter: false }
    }

    pub fn de_sitter(lambda: f64) -> Self {
        Self { m: 0.0, lambda, de_sitter: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Parameters with `9 m^2 lambda > 1 - extremal_margin` are rejected.
    pub extremal_margin: f64,
    /// Maximum admissible `|mu|` at a computed root.
    pub root_tol: f64,
    pub max_iter: usize,
    /// Radius where the tortoise coordinate vanishes; `None` selects the
    /// maximizer of `mu` (the origin in pure de Sitter).
    pub anchor: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { extremal_margin: 1e-8, root_tol: 1e-12, max_iter: 200, anchor: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizons {
    pub r_bh: f64,
    pub r_ds: f64,
    pub r_neg: f64,
    pub kappa_bh: f64,
    pub kappa_ds: f64,
}

impl Horizons {
    pub fn kappa_min(&self) -> f64 {
        if self.kappa_bh > 0.0 {
            self.kappa_bh.min(self.kappa_ds)
        } else {
            self.kappa_ds
        }
    }
}

pub fn mu(params: &SpacetimeParams, r: f64) -> f64 {
    1.0 - 2.0 * params.m / r - params.lambda * r * r / 3.0
}

pub fn mu_prime(params: &SpacetimeParams, r: f64) -> f64 {
    2.0 * params.m / (r * r) - 2.0 * params.lambda * r / 3.0
}

pub fn mu_second(params: &SpacetimeParams, r: f64) -> f64 {
    -4.0 * params.m / (r * r * r) - 2.0 * params.lambda / 3.0
}

/// Horizon radii and surface gravities with the default configuration.
pub fn horizons(params: &SpacetimeParams) -> Result<Horizons> {
    horizons_with(params, &GeometryConfig::default())
}

pub fn horizons_with(params: &SpacetimeParams, cfg: &GeometryConfig) -> Result<Horizons> {
    let SpacetimeParams { m, lambda, de_sitter } = *params;
    let invalid = |reason| Error::ExtremalOrInvalidParams { m, lambda, reason };
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda must be positive"));
    }
    if de_sitter {
        if m != 0.0 {
            return Err(invalid("de Sitter flag requires m = 0"));
        }
        let a = (3.0 / lambda).sqrt();
        return Ok(Horizons { r_bh: 0.0, r_ds: a, r_neg: -a, kappa_bh: 0.0, kappa_ds: 1.0 / a });
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid("m must be positive"));
    }
    if 9.0 * m * m * lambda > 1.0 - cfg.extremal_margin {
        return Err(invalid("9 m^2 lambda must stay below 1"));
    }

    let scale = 2.0 / lambda.sqrt();
    let theta = (-3.0 * m * lambda.sqrt()).acos();
    let root = |k: f64| scale * (theta / 3.0 - 2.0 * std::f64::consts::PI * k / 3.0).cos();
    // One Newton step on p(r) = r mu(r) = r - 2m - lambda r^3 / 3.
    let polish = |r: f64| {
        let p = r - 2.0 * m - lambda * r * r * r / 3.0;
        let dp = 1.0 - lambda * r * r;
        r - p / dp
    };
    let r_ds = polish(root(0.0));
    let r_bh = polish(root(1.0));
    let r_neg = polish(root(2.0));

    for r in [r_bh, r_ds] {
        let res = mu(params, r).abs();
        if !(res < cfg.root_tol) {
            return Err(Error::NoConvergence { what: "horizon root polish", iterations: 1 });
        }
    }
    let kappa_bh = 0.5 * mu_prime(params, r_bh);
    let kappa_ds = -0.5 * mu_prime(params, r_ds);
    Ok(Horizons { r_bh, r_ds, r_neg, kappa_bh, kappa_ds })
}

/// A radius in the static region together with its distances to both
/// horizons. For pure de Sitter `dist_bh` is the distance to the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialPoint {
    pub r: f64,
    pub dist_bh: f64,
    pub dist_ds: f64,
}

/// Geometry of one parameter set with a fixed tortoise normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub params: SpacetimeParams,
    pub horizons: Horizons,
    pub r_anchor: f64,
    offset: f64,
    max_iter: usize,
    // derivatives of mu at the three roots, from the factorized form
    dmu: [f64; 3],
}

impl Geometry {
    pub fn new(params: SpacetimeParams) -> Result<Self> {
        Self::with_config(params, &GeometryConfig::default())
    }

    pub fn with_config(params: SpacetimeParams, cfg: &GeometryConfig) -> Result<Self> {
        let h = horizons_with(&params, cfg)?;
        let lam3 = params.lambda / 3.0;
        let dmu = if params.de_sitter {
            [0.0, -2.0 / h.r_ds, 2.0 / h.r_ds]
        } else {
            let roots = [h.r_bh, h.r_ds, h.r_neg];
            let mut d = [0.0; 3];
            for i in 0..3 {
                let mut prod = 1.0;
                for j in 0..3 {
                    if j != i {
                        prod *= roots[i] - roots[j];
                    }
                }
                d[i] = -lam3 / roots[i] * prod;
            }
            d
        };
        let default_anchor =
            if params.de_sitter { 0.0 } else { (3.0 * params.m / params.lambda).cbrt() };
        let r_anchor = cfg.anchor.unwrap_or(default_anchor);
        let mut g = Self { params, horizons: h, r_anchor, offset: 0.0, max_iter: cfg.max_iter, dmu };
        let lo = if params.de_sitter { 0.0 } else { h.r_bh };
        if !(r_anchor >= lo && r_anchor < h.r_ds) || (!params.de_sitter && r_anchor == lo) {
            return Err(Error::OutOfDomain {
                value: r_anchor,
                domain: format!("anchor in ({lo}, {})", h.r_ds),
            });
        }
        let p = g.point_from_r(r_anchor);
        g.offset = g.raw_tortoise(&p);
        Ok(g)
    }

    pub fn is_de_sitter(&self) -> bool {
        self.params.de_sitter
    }

    /// Lower end of the static region (`r_bh`, or the origin in de Sitter).
    pub fn r_inner(&self) -> f64 {
        if self.is_de_sitter() {
            0.0
        } else {
            self.horizons.r_bh
        }
    }

    pub fn mu(&self, r: f64) -> f64 {
        mu(&self.params, r)
    }

    pub fn mu_prime(&self, r: f64) -> f64 {
        mu_prime(&self.params, r)
    }

    /// `beta = mu' / 2`.
    pub fn beta(&self, r: f64) -> f64 {
        0.5 * self.mu_prime(r)
    }

    /// `mu` from the factorized cubic, accurate near either horizon.
    pub fn mu_at(&self, p: &RadialPoint) -> f64 {
        let h = &self.horizons;
        if self.is_de_sitter() {
            p.dist_ds * (2.0 * h.r_ds - p.dist_ds) / (h.r_ds * h.r_ds)
        } else {
            self.params.lambda / (3.0 * p.r) * p.dist_bh * p.dist_ds * (p.r - h.r_neg)
        }
    }

    pub fn point_from_r(&self, r: f64) -> RadialPoint {
        RadialPoint { r, dist_bh: r - self.r_inner(), dist_ds: self.horizons.r_ds - r }
    }

    fn raw_tortoise(&self, p: &RadialPoint) -> f64 {
        let h = &self.horizons;
        if self.is_de_sitter() {
            0.5 * h.r_ds * ((2.0 * h.r_ds - p.dist_ds) / p.dist_ds).ln()
        } else {
            p.dist_bh.ln() / self.dmu[0]
                + p.dist_ds.ln() / self.dmu[1]
                + (p.r - h.r_neg).ln() / self.dmu[2]
        }
    }

    /// Tortoise coordinate of a point given with horizon offsets.
    pub fn tortoise_point(&self, p: &RadialPoint) -> f64 {
        self.raw_tortoise(p) - self.offset
    }

    pub fn tortoise(&self, r: f64) -> Result<f64> {
        let lo = self.r_inner();
        let ok = r < self.horizons.r_ds && (r > lo || (self.is_de_sitter() && r == 0.0));
        if !ok {
            return Err(Error::OutOfDomain {
                value: r,
                domain: format!("({lo}, {})", self.horizons.r_ds),
            });
        }
        Ok(self.tortoise_point(&self.point_from_r(r)))
    }

    pub fn tortoise_inverse(&self, r_star: f64) -> Result<f64> {
        Ok(self.radial_point(r_star)?.r)
    }

    /// Inverse tortoise map returning the radius with its horizon offsets.
    pub fn radial_point(&self, r_star: f64) -> Result<RadialPoint> {
        if !r_star.is_finite() {
            return Err(Error::OutOfDomain { value: r_star, domain: "finite r_*".into() });
        }
        let h = self.horizons;
        if self.is_de_sitter() {
            if r_star < 0.0 {
                return Err(Error::OutOfDomain { value: r_star, domain: "[0, inf)".into() });
            }
            let a = h.r_ds;
            let e = (-2.0 * r_star / a).exp();
            let d = 2.0 * a * e / (1.0 + e);
            return Ok(RadialPoint { r: a - d, dist_bh: a - d, dist_ds: d });
        }
        let width = h.r_ds - h.r_bh;
        let tol = 1e-13 * (1.0 + r_star.abs());
        if r_star <= 0.0 {
            // x = ln(r - r_bh)
            let point = |x: f64| {
                let d = x.exp();
                RadialPoint { r: h.r_bh + d, dist_bh: d, dist_ds: width - d }
            };
            let f = |x: f64| {
                let p = point(x);
                (self.tortoise_point(&p) - r_star, p.dist_bh / self.mu_at(&p))
            };
            let hi = (self.r_anchor - h.r_bh).ln();
            let rest = width.ln() / self.dmu[1] + (h.r_bh - h.r_neg).ln() / self.dmu[2];
            let guess = (2.0 * h.kappa_bh * (r_star + self.offset - rest)).min(hi);
            let x = solve_increasing(f, guess, hi, -1.0, tol, self.max_iter)?;
            Ok(point(x))
        } else {
            // x = -ln(r_dS - r)
            let point = |x: f64| {
                let d = (-x).exp();
                RadialPoint { r: h.r_ds - d, dist_bh: width - d, dist_ds: d }
            };
            let f = |x: f64| {
                let p = point(x);
                (self.tortoise_point(&p) - r_star, p.dist_ds / self.mu_at(&p))
            };
            let lo = -(h.r_ds - self.r_anchor).ln();
            let rest = width.ln() / self.dmu[0] + (h.r_ds - h.r_neg).ln() / self.dmu[2];
            let guess = (2.0 * h.kappa_ds * (r_star + self.offset - rest)).max(lo);
            let x = solve_increasing(f, guess, lo, 1.0, tol, self.max_iter)?;
            Ok(point(x))
        }
    }
}

/// Root of an increasing function with one known bracket end `fixed` and
/// the other found by stepping from `guess` in direction `dir`.
/// Safeguarded Newton: steps leaving the bracket are replaced by bisection.
fn solve_increasing<F>(f: F, guess: f64, fixed: f64, dir: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let no_conv = Error::NoConvergence { what: "tortoise inverse", iterations: max_iter };
    let (fv, _) = f(fixed);
    if fv.abs() <= tol {
        return Ok(fixed);
    }
    // open bracket end
    let mut step = 1.0;
    let mut other = guess + dir * 0.5;
    let mut it = 0;
    loop {
        let (v, _) = f(other);
        if v.is_finite() && v.signum() != fv.signum() {
            break;
        }
        other += dir * step;
        step *= 2.0;
        it += 1;
        if it > max_iter {
            return Err(no_conv);
        }
    }
    let (mut lo, mut hi) = if dir < 0.0 { (other, fixed) } else { (fixed, other) };
    let mut x = guess.clamp(lo, hi);
    for _ in 0..max_iter {
        let (v, dv) = f(x);
        if v.abs() <= tol {
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / dv;
        x = if newton > lo && newton < hi && dv > 0.0 { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(no_conv)
}

/// Node of a radial grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialNode {
    pub r_star: f64,
    pub r: f64,
    pub mu: f64,
    pub dist_bh: f64,
    pub dist_ds: f64,
}

impl RadialNode {
    pub fn point(&self) -> RadialPoint {
        RadialPoint { r: self.r, dist_bh: self.dist_bh, dist_ds: self.dist_ds }
    }
}

/// Uniform grid in the tortoise coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub nodes: Vec<RadialNode>,
    pub r_star_min: f64,
    pub r_star_max: f64,
    pub spacing: f64,
}

impl RadialGrid {
    /// Grid with `kappa_bh r_* >= -extent` and `kappa_ds r_* <= extent`,
    /// ends rounded outward to multiples of `spacing`. De Sitter grids start
    /// at the origin.
    pub fn surface_gravity_normalized(geom: &Geometry, extent: f64, spacing: f64) -> Result<Self> {
        let h = geom.horizons;
        let lo = if geom.is_de_sitter() { 0.0 } else { (-extent / h.kappa_bh / spacing).floor() * spacing };
        let hi = (extent / h.kappa_ds / spacing).ceil() * spacing;
        Self::uniform(geom, lo, hi, spacing)
    }

    pub fn uniform(geom: &Geometry, r_star_min: f64, r_star_max: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(r_star_max > r_star_min) {
            return Err(Error::InvalidInput(format!(
                "grid [{r_star_min}, {r_star_max}] with spacing {spacing}"
            )));
        }
        let cells = (r_star_max - r_star_min) / spacing;
        let n = cells.round();
        if (cells - n).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "grid length {} is not a multiple of spacing {spacing}",
                r_star_max - r_star_min
            )));
        }
        let n = n as usize;
        let mut nodes = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let r_star = r_star_min + i as f64 * spacing;
            let p = geom.radial_point(r_star)?;
            nodes.push(RadialNode {
                r_star,
                r: p.r,
                mu: geom.mu_at(&p),
                dist_bh: p.dist_bh,
                dist_ds: p.dist_ds,
            });
        }
        Ok(Self { nodes, r_star_min, r_star_max, spacing })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn r_star(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.r_star).collect()
    }

    pub fn r(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.r).collect()
    }

    /// Index of the node closest to `r_star`.
    pub fn index_of(&self, r_star: f64) -> usize {
        let i = ((r_star - self.r_star_min) / self.spacing).round();
        (i.max(0.0) as usize).min(self.nodes.len() - 1)
    }

    /// Second difference of `r` in `r_*` at interior node `i`, formed from
    /// horizon offsets so that it stays accurate where `r` itself saturates.
    pub fn second_difference_r(&self, i: usize) -> f64 {
        let (a, b, c) = (&self.nodes[i - 1], &self.nodes[i], &self.nodes[i + 1]);
        let h2 = self.spacing * self.spacing;
        if b.dist_bh <= b.dist_ds {
            (a.dist_bh - 2.0 * b.dist_bh + c.dist_bh) / h2
        } else {
            -(a.dist_ds - 2.0 * b.dist_ds + c.dist_ds) / h2
        }
    }
}
