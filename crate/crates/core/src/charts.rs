//! Compactification charts near the temporal face and the dual metric in
//! each of them.
//!
//! Every chart is a pair of coordinates on the `(t, r)` quotient of the
//! spacetime (angles suppressed). The blown-up charts use `(rho, mu)` with
//! `rho = exp(-2 lambda t) / mu`; the blow-down charts use
//! `s_+ = sqrt(mu) exp(lambda t)`, `s_- = sqrt(mu) exp(-lambda t)`; the
//! defining-function chart uses `(x, r)` with `x = f(r) exp(-t)`.
//!
//! Dual metric coefficients are reported against a frame: `(dt, dr)` for the
//! product chart, the b-frame `(d rho / rho, d mu)` for blown-up charts,
//! `(ds_+, ds_-)` for blow-down charts and `(dx / x, dr)` for the
//! defining-function chart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartId {
    Product,
    BlowupBh,
    BlowupDs,
    BlowdownBh,
    BlowdownDs,
    TfDefining,
}

impl ChartId {
    pub const ALL: [ChartId; 6] = [
        ChartId::Product,
        ChartId::BlowupBh,
        ChartId::BlowupDs,
        ChartId::BlowdownBh,
        ChartId::BlowdownDs,
        ChartId::TfDefining,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartId::Product => "product",
            ChartId::BlowupBh => "blowup_bh",
            ChartId::BlowupDs => "blowup_ds",
            ChartId::BlowdownBh => "blowdown_bh",
            ChartId::BlowdownDs => "blowdown_ds",
            ChartId::TfDefining => "tf_defining",
        }
    }
}

/// Which root of `mu(r) = mu_0` a `mu`-based chart refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `r` below the maximizer of `mu`.
    Bh,
    /// `r` above the maximizer of `mu`.
    Ds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub coords: [f64; 2],
    pub side: Side,
}

impl ChartPoint {
    pub fn new(chart: ChartId, a: f64, b: f64, side: Side) -> Self {
        Self { chart, coords: [a, b], side }
    }

    pub fn product(t: f64, r: f64, side: Side) -> Self {
        Self::new(ChartId::Product, t, r, side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartConfig {
    /// Exponent in `T = exp(-2 lambda t)` at the black-hole end; `None` uses `kappa_bh`.
    pub lambda_bh: Option<f64>,
    /// Same at the de Sitter end; `None` uses `kappa_dS`.
    pub lambda_ds: Option<f64>,
    /// Charts near the temporal face require `t > c`.
    pub c: f64,
    /// Transition interval of the interpolating factor `f`, as fractions of `(r_bh, r_dS)`.
    pub r1_frac: f64,
    pub r2_frac: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { lambda_bh: None, lambda_ds: None, c: 1.0, r1_frac: 0.4, r2_frac: 0.6 }
    }
}

/// Non-angular block of the dual metric plus the angular coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualMetricBlock {
    pub chart: ChartId,
    pub matrix: [[f64; 2]; 2],
    pub angular: f64,
}

impl DualMetricBlock {
    /// Coefficients of the quadratic form `a x^2 + b x y + c y^2 + angular |eta|^2`.
    pub fn quadratic_coeffs(&self) -> [f64; 4] {
        let m = self.matrix;
        [m[0][0], 2.0 * m[0][1], m[1][1], self.angular]
    }

    pub fn eval(&self, p: [f64; 2], eta: f64) -> f64 {
        let m = self.matrix;
        m[0][0] * p[0] * p[0] + 2.0 * m[0][1] * p[0] * p[1] + m[1][1] * p[1] * p[1] + self.angular * eta * eta
    }

    /// Signature `(+, -, -, -)`: negative block determinant and angular term.
    pub fn is_lorentzian(&self) -> bool {
        let m = self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0] < 0.0 && self.angular < 0.0
    }
}

/// Covector `xi d rho / rho + zeta d mu + eta d omega` over a blown-up chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotangentPointB {
    pub rho: f64,
    pub mu: f64,
    pub xi: f64,
    pub zeta: f64,
    pub eta: f64,
}

/// Components of the Hamilton vector field of the dual metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonField {
    pub rho_dot_over_rho: f64,
    pub mu_dot: f64,
    pub xi_dot: f64,
    pub zeta_dot: f64,
    pub eta_dot: f64,
    pub angular_speed: f64,
}

/// Discrepancy report of a dual-metric pushforward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub source: ChartId,
    pub target: ChartId,
    pub samples: usize,
    pub max_abs_discrepancy: f64,
    pub discrepancies: Vec<f64>,
}

/// Chart atlas for one geometry.
#[derive(Debug, Clone)]
pub struct Charts {
    pub geom: Geometry,
    pub lambda_bh: f64,
    pub lambda_ds: f64,
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
    r_max: f64,
    mu_max: f64,
}

impl Charts {
    pub fn new(geom: Geometry, cfg: &ChartConfig) -> Result<Self> {
        if geom.is_de_sitter() {
            return Err(Error::InvalidInput("charts require a black-hole horizon".into()));
        }
        let h = geom.horizons;
        let lambda_bh = cfg.lambda_bh.unwrap_or(h.kappa_bh);
        let lambda_ds = cfg.lambda_ds.unwrap_or(h.kappa_ds);
        if !(lambda_bh > 0.0 && lambda_ds > 0.0) {
            return Err(Error::InvalidInput("chart exponents must be positive".into()));
        }
        if !(0.0 < cfg.r1_frac && cfg.r1_frac < cfg.r2_frac && cfg.r2_frac < 1.0) {
            return Err(Error::InvalidInput("need 0 < r1_frac < r2_frac < 1".into()));
        }
        let w = h.r_ds - h.r_bh;
        let r_max = (3.0 * geom.params.m / geom.params.lambda).cbrt();
        let mu_max = geom.mu(r_max);
        Ok(Self {
            lambda_bh,
            lambda_ds,
            c: cfg.c,
            r1: h.r_bh + cfg.r1_frac * w,
            r2: h.r_bh + cfg.r2_frac * w,
            r_max,
            mu_max,
            geom,
        })
    }

    /// Same atlas with different exponents, e.g. for negative controls.
    pub fn with_lambdas(&self, lambda_bh: f64, lambda_ds: f64) -> Self {
        Self { lambda_bh, lambda_ds, ..self.clone() }
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_max
    }

    fn lambda_of(&self, chart: ChartId) -> f64 {
        match chart {
            ChartId::BlowupDs | ChartId::BlowdownDs => self.lambda_ds,
            _ => self.lambda_bh,
        }
    }

    fn horizon_of(&self, side: Side) -> f64 {
        match side {
            Side::Bh => self.geom.horizons.r_bh,
            Side::Ds => self.geom.horizons.r_ds,
        }
    }

    pub fn side_of(&self, r: f64) -> Side {
        if r < self.r_max {
            Side::Bh
        } else {
            Side::Ds
        }
    }

    /// Root of `mu(r) = mu0` on the requested branch; `mu0` may be negative.
    pub fn radius_from_mu(&self, mu0: f64, side: Side) -> Result<f64> {
        if !(mu0 < self.mu_max) {
            return Err(Error::OutOfDomain { value: mu0, domain: format!("mu < {}", self.mu_max) });
        }
        let h = self.geom.horizons;
        let lam3 = self.geom.params.lambda / 3.0;
        // offset d from the horizon on this side, increasing mu
        let (sign, rh) = match side {
            Side::Bh => (1.0, h.r_bh),
            Side::Ds => (-1.0, h.r_ds),
        };
        let mu_of = |d: f64| {
            let r = rh + sign * d;
            let (dbh, dds) = match side {
                Side::Bh => (d, h.r_ds - r),
                Side::Ds => (r - h.r_bh, d),
            };
            lam3 / r * dbh * dds * (r - h.r_neg)
        };
        let hi = (self.r_max - rh).abs();
        // lower bracket: for Bh, r -> 0; for Ds, expand outward
        let mut lo = match side {
            Side::Bh => -rh * (1.0 - 1e-15),
            Side::Ds => -1.0,
        };
        if let Side::Ds = side {
            while mu_of(lo) > mu0 {
                lo *= 2.0;
                if lo < -1e12 {
                    return Err(Error::NoConvergence { what: "radius from mu", iterations: 40 });
                }
            }
        }
        let (mut a, mut b) = (lo, hi);
        // initial guess from the linearization at the horizon
        let slope = 2.0 * if sign > 0.0 { h.kappa_bh } else { h.kappa_ds };
        let mut d = (mu0 / slope).clamp(a, b);
        for _ in 0..200 {
            let f = mu_of(d) - mu0;
            if f == 0.0 {
                break;
            }
            if f < 0.0 {
                a = d;
            } else {
                b = d;
            }
            let r = rh + sign * d;
            let dmu = sign * self.geom.mu_prime(r);
            let nd = d - f / dmu;
            d = if nd > a && nd < b && dmu > 0.0 { nd } else { 0.5 * (a + b) };
            if (b - a) <= 4.0 * f64::EPSILON * (a.abs() + b.abs()) || (f / dmu).abs() <= 1e-17 * (1.0 + d.abs()) {
                break;
            }
        }
        Ok(rh + sign * d)
    }

    fn smooth_step(&self, r: f64) -> (f64, f64) {
        let s = (r - self.r1) / (self.r2 - self.r1);
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        if s >= 1.0 {
            return (1.0, 0.0);
        }
        let psi = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
        let dpsi = |u: f64| if u > 0.0 { (-1.0 / u).exp() / (u * u) } else { 0.0 };
        let (a, b) = (psi(s), psi(1.0 - s));
        let (da, db) = (dpsi(s), -dpsi(1.0 - s));
        let chi = a / (a + b);
        let dchi = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
        (chi, dchi / (self.r2 - self.r1))
    }

    /// `ln f(r)` and its `r`-derivative for the interpolating factor of `x`.
    pub fn log_f(&self, r: f64) -> (f64, f64) {
        let mu = self.geom.mu(r);
        let dmu = self.geom.mu_prime(r);
        let (chi, dchi) = self.smooth_step(r);
        let (kb, kd) = (-0.5 / self.lambda_bh, -0.5 / self.lambda_ds);
        let k = (1.0 - chi) * kb + chi * kd;
        let dk = dchi * (kd - kb);
        (k * mu.ln(), dk * mu.ln() + k * dmu / mu)
    }

    /// `ln f` from a separately supplied `mu`, for radii where `mu(r)`
    /// itself loses precision.
    pub fn log_f_at(&self, r: f64, mu: f64) -> f64 {
        let (chi, _) = self.smooth_step(r);
        let k = -0.5 * ((1.0 - chi) / self.lambda_bh + chi / self.lambda_ds);
        k * mu.ln()
    }

    /// Total defining function `x = f(r) exp(-t)` of the temporal face.
    pub fn defining_function_x(&self, t: f64, r: f64) -> Result<f64> {
        let h = self.geom.horizons;
        if !(r > h.r_bh && r < h.r_ds) || !(t > self.c) {
            return Err(Error::OutOfDomain {
                value: r,
                domain: format!("t > {} and r in ({}, {})", self.c, h.r_bh, h.r_ds),
            });
        }
        Ok((self.log_f(r).0 - t).exp())
    }

    fn static_r(&self, r: f64) -> bool {
        let h = self.geom.horizons;
        r > h.r_bh && r < h.r_ds
    }

    /// Checks the validity-domain inequalities of a chart point.
    pub fn validate(&self, p: &ChartPoint) -> Result<()> {
        let [a, b] = p.coords;
        let outside = Err(Error::OutsideOverlap { chart: p.chart.name() });
        if !(a.is_finite() && b.is_finite()) {
            return outside;
        }
        let ok = match p.chart {
            ChartId::Product => self.static_r(b),
            ChartId::BlowupBh | ChartId::BlowupDs => {
                let lam = self.lambda_of(p.chart);
                a > 0.0 && b < self.mu_max && (b <= 0.0 || a * b < (-2.0 * lam * self.c).exp())
            }
            ChartId::BlowdownBh | ChartId::BlowdownDs => a >= 0.0 && b >= 0.0 && a * b < self.mu_max,
            ChartId::TfDefining => {
                self.static_r(b) && a > 0.0 && a < (self.log_f(b).0 - self.c).exp()
            }
        };
        if ok {
            Ok(())
        } else {
            outside
        }
    }

    fn to_product(&self, p: &ChartPoint) -> Result<(f64, f64)> {
        self.validate(p)?;
        let [a, b] = p.coords;
        let lost = Err(Error::OutsideOverlap { chart: ChartId::Product.name() });
        match p.chart {
            ChartId::Product => Ok((a, b)),
            ChartId::BlowupBh | ChartId::BlowupDs => {
                if !(b > 0.0) {
                    return lost;
                }
                let lam = self.lambda_of(p.chart);
                let t = -(a * b).ln() / (2.0 * lam);
                Ok((t, self.radius_from_mu(b, p.side)?))
            }
            ChartId::BlowdownBh | ChartId::BlowdownDs => {
                if !(a > 0.0 && b > 0.0) {
                    return lost;
                }
                let lam = self.lambda_of(p.chart);
                let t = (a / b).ln() / (2.0 * lam);
                Ok((t, self.radius_from_mu(a * b, p.side)?))
            }
            ChartId::TfDefining => Ok((self.log_f(b).0 - a.ln(), b)),
        }
    }

    fn point_from_product(&self, t: f64, r: f64, target: ChartId) -> Result<ChartPoint> {
        let side = self.side_of(r);
        let mu = self.geom.mu(r);
        let coords = match target {
            ChartId::Product => [t, r],
            ChartId::BlowupBh | ChartId::BlowupDs => {
                let lam = self.lambda_of(target);
                [(-2.0 * lam * t).exp() / mu, mu]
            }
            ChartId::BlowdownBh | ChartId::BlowdownDs => {
                let lam = self.lambda_of(target);
                let alpha = mu.sqrt();
                [alpha * (lam * t).exp(), alpha * (-lam * t).exp()]
            }
            ChartId::TfDefining => [(self.log_f(r).0 - t).exp(), r],
        };
        let q = ChartPoint { chart: target, coords, side };
        self.validate(&q)?;
        Ok(q)
    }

    /// Coordinates of the same event in another chart.
    pub fn to_chart(&self, p: &ChartPoint, target: ChartId) -> Result<ChartPoint> {
        self.validate(p)?;
        let both_blowup = |c: ChartId| matches!(c, ChartId::BlowupBh | ChartId::BlowupDs);
        if p.chart == target {
            return Ok(*p);
        }
        if both_blowup(p.chart) && both_blowup(target) {
            // direct transition keeps mu, valid up to the face mu = 0
            let [rho, mu] = p.coords;
            let k = self.lambda_of(target) / self.lambda_of(p.chart);
            let q = ChartPoint { chart: target, coords: [mu.powf(k - 1.0) * rho.powf(k), mu], side: p.side };
            self.validate(&q)?;
            return Ok(q);
        }
        let (t, r) = self.to_product(p)?;
        self.point_from_product(t, r, target)
    }

    /// `gamma = (lambda^2 - beta^2) / mu` and its `mu`-derivative, without
    /// cancellation near the horizon on `side`.
    pub fn gamma(&self, r: f64, lambda: f64, side: Side) -> Result<(f64, f64)> {
        let g = &self.geom;
        let h = g.horizons;
        let (m, lam3) = (g.params.m, g.params.lambda / 3.0);
        let rh = self.horizon_of(side);
        let (o1, o2) = match side {
            Side::Bh => (h.r_ds, h.r_neg),
            Side::Ds => (h.r_bh, h.r_neg),
        };
        let beta = g.beta(r);
        let beta_h = g.beta(rh);
        let dbeta = -2.0 * m / (r * r * r) - lam3;
        // beta_h - beta = (r - r_h) n(r), mu = (r - r_h) q(r)
        let n = m * (r + rh) / (r * r * rh * rh) + lam3;
        let dn = -m * (r + 2.0 * rh) / (r * r * r * rh * rh);
        let q = -lam3 / r * (r - o1) * (r - o2);
        let dq = -lam3 * (1.0 - o1 * o2 / (r * r));
        let num = n * (beta_h + beta);
        let dnum = dn * (beta_h + beta) + n * dbeta;
        let gam_h = num / q;
        let dgam_h_dr = (dnum * q - num * dq) / (q * q);
        let dmu_dr = 2.0 * beta;
        let mut gam = gam_h;
        let mut dgam = dgam_h_dr / dmu_dr;
        let excess = lambda * lambda - beta_h * beta_h;
        if excess != 0.0 {
            let mu = g.mu(r);
            if mu == 0.0 {
                return Err(Error::ChartDegenerate { chart: "blowup" });
            }
            gam += excess / mu;
            dgam -= excess / (mu * mu);
        }
        Ok((gam, dgam))
    }

    /// Dual metric coefficients at a chart point.
    pub fn dual_metric(&self, p: &ChartPoint) -> Result<DualMetricBlock> {
        self.validate(p)?;
        let [a, b] = p.coords;
        let chart = p.chart;
        let g = &self.geom;
        let (matrix, r) = match chart {
            ChartId::Product => {
                let mu = g.mu(b);
                if !(mu > 0.0) {
                    return Err(Error::ChartDegenerate { chart: chart.name() });
                }
                ([[1.0 / mu, 0.0], [0.0, -mu]], b)
            }
            ChartId::BlowupBh | ChartId::BlowupDs => {
                let r = self.radius_from_mu(b, p.side)?;
                let beta = g.beta(r);
                let (gam, _) = self.gamma(r, self.lambda_of(chart), p.side)?;
                let b2 = beta * beta;
                ([[4.0 * gam, 4.0 * b2], [4.0 * b2, -4.0 * b2 * b]], r)
            }
            ChartId::BlowdownBh | ChartId::BlowdownDs => {
                let lam = self.lambda_of(chart);
                let r = self.radius_from_mu(a * b, p.side)?;
                let beta = g.beta(r);
                let (gam, _) = self.gamma(r, lam, p.side)?;
                let off = -(lam * lam + beta * beta);
                ([[gam * a * a, off], [off, gam * b * b]], r)
            }
            ChartId::TfDefining => {
                let mu = g.mu(b);
                let (_, dlf) = self.log_f(b);
                ([[1.0 / mu - mu * dlf * dlf, -mu * dlf], [-mu * dlf, -mu]], b)
            }
        };
        Ok(DualMetricBlock { chart, matrix, angular: -1.0 / (r * r) })
    }

    /// Coordinates in which the chart's frame is a coordinate frame
    /// (logarithm of the first coordinate for b-frames).
    fn frame_coords(&self, p: &ChartPoint) -> [f64; 2] {
        let [a, b] = p.coords;
        match p.chart {
            ChartId::BlowupBh | ChartId::BlowupDs | ChartId::TfDefining => [a.ln(), b],
            _ => [a, b],
        }
    }

    fn point_from_frame(&self, chart: ChartId, f: [f64; 2], side: Side) -> ChartPoint {
        let coords = match chart {
            ChartId::BlowupBh | ChartId::BlowupDs | ChartId::TfDefining => [f[0].exp(), f[1]],
            _ => f,
        };
        ChartPoint { chart, coords, side }
    }

    fn frame_steps(&self, p: &ChartPoint) -> [f64; 2] {
        let [a, b] = p.coords;
        let h = self.geom.horizons;
        let dist = |r: f64| (r - h.r_bh).abs().min((h.r_ds - r).abs()).min(1.0);
        match p.chart {
            ChartId::Product => [1e-2, 1e-2 * dist(b)],
            ChartId::TfDefining => [1e-2, 1e-2 * dist(b)],
            ChartId::BlowupBh | ChartId::BlowupDs => [1e-2, 1e-2 * b.abs().clamp(1e-6, 1.0)],
            ChartId::BlowdownBh | ChartId::BlowdownDs => [1e-2 * a.max(1e-6), 1e-2 * b.max(1e-6)],
        }
    }

    /// Jacobian `d(target frame coords) / d(source frame coords)` by central
    /// differences with two levels of Richardson extrapolation.
    fn frame_jacobian(&self, p: &ChartPoint, target: ChartId) -> Result<[[f64; 2]; 2]> {
        let x0 = self.frame_coords(p);
        let steps = self.frame_steps(p);
        let map = |x: [f64; 2]| -> Result<[f64; 2]> {
            let q = self.point_from_frame(p.chart, x, p.side);
            let t = self.to_chart(&q, target)?;
            Ok(self.frame_coords(&t))
        };
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let central = |h: f64| -> Result<[f64; 2]> {
                let mut xp = x0;
                let mut xm = x0;
                xp[j] += h;
                xm[j] -= h;
                let hh = xp[j] - xm[j];
                let (fp, fm) = (map(xp)?, map(xm)?);
                Ok([(fp[0] - fm[0]) / hh, (fp[1] - fm[1]) / hh])
            };
            let h = steps[j];
            let d1 = central(h)?;
            let d2 = central(h / 2.0)?;
            let d4 = central(h / 4.0)?;
            for i in 0..2 {
                let r1 = (4.0 * d2[i] - d1[i]) / 3.0;
                let r2 = (4.0 * d4[i] - d2[i]) / 3.0;
                jac[i][j] = (16.0 * r2 - r1) / 15.0;
            }
        }
        Ok(jac)
    }

    /// Dual metric of `p`'s chart transported into `target` by the numerical
    /// Jacobian of the transition map.
    pub fn transported_metric(&self, p: &ChartPoint, target: ChartId) -> Result<DualMetricBlock> {
        let src = self.dual_metric(p)?;
        let q = self.to_chart(p, target)?;
        let j = self.frame_jacobian(p, target)?;
        let g = src.matrix;
        let mut out = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for i in 0..2 {
                    for k in 0..2 {
                        s += j[a][i] * g[i][k] * j[b][k];
                    }
                }
                out[a][b] = s;
            }
        }
        Ok(DualMetricBlock { chart: q.chart, matrix: out, angular: src.angular })
    }

    /// Maximum entrywise discrepancy between transported and direct metrics.
    pub fn pushforward_check(&self, source: ChartId, target: ChartId, samples: &[ChartPoint]) -> Result<PushforwardReport> {
        let mut discrepancies = Vec::with_capacity(samples.len());
        for p in samples {
            if p.chart != source {
                return Err(Error::InvalidInput(format!(
                    "sample in chart {} but source is {}",
                    p.chart.name(),
                    source.name()
                )));
            }
            let moved = self.transported_metric(p, target)?;
            let q = self.to_chart(p, target)?;
            let direct = self.dual_metric(&q)?;
            let mut d: f64 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    d = d.max((moved.matrix[a][b] - direct.matrix[a][b]).abs());
                }
            }
            discrepancies.push(d);
        }
        let max_abs_discrepancy = discrepancies.iter().cloned().fold(0.0, f64::max);
        Ok(PushforwardReport { source, target, samples: samples.len(), max_abs_discrepancy, discrepancies })
    }

    /// Hamilton vector field of the dual metric in the black-hole blown-up chart.
    pub fn hamilton_field(&self, q: &CotangentPointB) -> Result<HamiltonField> {
        self.hamilton_field_in(ChartId::BlowupBh, Side::Bh, q)
    }

    pub fn hamilton_field_in(&self, chart: ChartId, side: Side, q: &CotangentPointB) -> Result<HamiltonField> {
        if !matches!(chart, ChartId::BlowupBh | ChartId::BlowupDs) {
            return Err(Error::InvalidInput("Hamilton field is defined on blown-up charts".into()));
        }
        let g = &self.geom;
        let r = self.radius_from_mu(q.mu, side)?;
        let beta = g.beta(r);
        let (gam, dgam) = self.gamma(r, self.lambda_of(chart), side)?;
        let dbeta_dr = -2.0 * g.params.m / (r * r * r) - g.params.lambda / 3.0;
        let dr_dmu = 1.0 / (2.0 * beta);
        let dbeta = dbeta_dr * dr_dmu;
        let dinv_r2 = -2.0 / (r * r * r) * dr_dmu;
        let b2 = beta * beta;
        let CotangentPointB { mu, xi, zeta, eta, .. } = *q;
        Ok(HamiltonField {
            rho_dot_over_rho: 8.0 * (gam * xi + b2 * zeta),
            mu_dot: 8.0 * b2 * xi - 8.0 * b2 * mu * zeta,
            xi_dot: 0.0,
            zeta_dot: -(4.0 * dgam * xi * xi + 16.0 * beta * dbeta * xi * zeta
                - 8.0 * beta * dbeta * mu * zeta * zeta
                - 4.0 * b2 * zeta * zeta
                - dinv_r2 * eta * eta),
            eta_dot: 0.0,
            angular_speed: -2.0 * eta / (r * r),
        })
    }

    /// Value of the dual metric at a b-covector.
    pub fn dual_metric_value(&self, chart: ChartId, side: Side, q: &CotangentPointB) -> Result<f64> {
        let r = self.radius_from_mu(q.mu, side)?;
        let beta = self.geom.beta(r);
        let (gam, _) = self.gamma(r, self.lambda_of(chart), side)?;
        let b2 = beta * beta;
        Ok(4.0 * gam * q.xi * q.xi + 8.0 * b2 * q.xi * q.zeta - 4.0 * b2 * q.mu * q.zeta * q.zeta
            - q.eta * q.eta / (r * r))
    }

    /// One classical Runge-Kutta step of the Hamilton flow.
    pub fn hamilton_rk4_step(&self, chart: ChartId, side: Side, q: &CotangentPointB, h: f64) -> Result<CotangentPointB> {
        let rhs = |s: &[f64; 4], eta: f64| -> Result<[f64; 4]> {
            let p = CotangentPointB { rho: s[0].exp(), mu: s[1], xi: s[2], zeta: s[3], eta };
            let f = self.hamilton_field_in(chart, side, &p)?;
            Ok([f.rho_dot_over_rho, f.mu_dot, f.xi_dot, f.zeta_dot])
        };
        let s0 = [q.rho.ln(), q.mu, q.xi, q.zeta];
        let add = |a: &[f64; 4], k: &[f64; 4], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
        let k1 = rhs(&s0, q.eta)?;
        let k2 = rhs(&add(&s0, &k1, 0.5 * h), q.eta)?;
        let k3 = rhs(&add(&s0, &k2, 0.5 * h), q.eta)?;
        let k4 = rhs(&add(&s0, &k3, h), q.eta)?;
        let mut s = s0;
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(CotangentPointB { rho: s[0].exp(), mu: s[1], xi: s[2], zeta: s[3], eta: q.eta })
    }
}
