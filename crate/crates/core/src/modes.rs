//! Spherical-harmonic reduction.
//!
//! Writing `u = r^{-1} phi(t, r_*) Y_lm` turns the wave equation into
//! `phi_tt - phi_{r_* r_*} + V phi = 0` with
//! `V = mu (l(l+1)/r^2 + mu'/r)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, RadialGrid};

/// Effective potential of one angular channel on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePotential {
    pub ell: u32,
    /// `mu (l(l+1)/r^2 + mu'/r)` at every node.
    pub v: Vec<f64>,
    /// Potential used by the discrete schemes: the `mu mu'/r` term is
    /// replaced by `(D^2 r)/r` with `D^2` the three-point second difference,
    /// so that `phi = r` is an exact discrete null vector for `l = 0`.
    /// Differs from `v` by `O(h^2)`.
    pub v_scheme: Vec<f64>,
}

impl ModePotential {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Potential identically zero, for free-propagation checks.
    pub fn zero(ell: u32, n: usize) -> Self {
        Self { ell, v: vec![0.0; n], v_scheme: vec![0.0; n] }
    }
}

/// Continuous potential at radius `r`.
pub fn potential_at(geom: &Geometry, ell: u32, r: f64) -> f64 {
    let l = (ell * (ell + 1)) as f64;
    geom.mu(r) * (l / (r * r) + geom.mu_prime(r) / r)
}

pub fn potential(geom: &Geometry, grid: &RadialGrid, ell: u32) -> ModePotential {
    let l = (ell * (ell + 1)) as f64;
    let n = grid.len();
    let mut v = Vec::with_capacity(n);
    let mut v_scheme = Vec::with_capacity(n);
    for (i, node) in grid.nodes.iter().enumerate() {
        let r = node.r;
        if r == 0.0 {
            // origin of the de Sitter grid: Dirichlet node
            v.push(0.0);
            v_scheme.push(0.0);
            continue;
        }
        let centrifugal = node.mu * l / (r * r);
        v.push(centrifugal + node.mu * geom.mu_prime(r) / r);
        let curv = if i > 0 && i + 1 < n { grid.second_difference_r(i) / r } else { node.mu * geom.mu_prime(r) / r };
        v_scheme.push(centrifugal + curv);
    }
    ModePotential { ell, v, v_scheme }
}

/// Potentials for several channels, built in parallel.
pub fn potentials(geom: &Geometry, grid: &RadialGrid, ells: &[u32]) -> Vec<ModePotential> {
    ells.par_iter().map(|&l| potential(geom, grid, l)).collect()
}

/// Richardson-extrapolated central first derivative.
pub fn derivative(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (d1, d2, d4) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d4 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// The mode-reduced spatial Laplacian applied to a radial profile:
/// `-mu r^{-2} d_r(mu r^2 d_r psi) + mu l(l+1) r^{-2} psi`, by nested
/// numerical differentiation in `r` with step `h`.
pub fn mode_laplacian(geom: &Geometry, ell: u32, psi: &dyn Fn(f64) -> f64, r: f64, h: f64) -> f64 {
    let l = (ell * (ell + 1)) as f64;
    let flux = |s: f64| geom.mu(s) * s * s * derivative(psi, s, h);
    let div = derivative(&flux, r, h);
    let mu = geom.mu(r);
    -mu / (r * r) * div + mu * l / (r * r) * psi(r)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Orthonormal associated Legendre functions `N_lm P_l^m(x)` for
/// `0 <= m <= l <= l_max`, indexed `[l][m]`.
fn normalized_legendre(l_max: usize, x: f64) -> Vec<Vec<f64>> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut p = vec![vec![0.0; l_max + 1]; l_max + 1];
    p[0][0] = (1.0 / four_pi).sqrt();
    for m in 1..=l_max {
        p[m][m] = -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..l_max {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * x * p[m][m];
    }
    for m in 0..=l_max {
        for l in m + 2..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

/// Real spherical harmonics `Y_lm(theta, phi)` for `l <= l_max`, indexed
/// `[l][m + l]` with `m in -l..=l`.
pub fn real_harmonics(l_max: usize, theta: f64, phi: f64) -> Vec<Vec<f64>> {
    let p = normalized_legendre(l_max, theta.cos());
    let sqrt2 = std::f64::consts::SQRT_2;
    (0..=l_max)
        .map(|l| {
            (0..=2 * l)
                .map(|k| {
                    let m = k as i64 - l as i64;
                    let am = m.unsigned_abs() as usize;
                    match m.cmp(&0) {
                        std::cmp::Ordering::Equal => p[l][0],
                        std::cmp::Ordering::Greater => sqrt2 * p[l][am] * (am as f64 * phi).cos(),
                        std::cmp::Ordering::Less => sqrt2 * p[l][am] * (am as f64 * phi).sin(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Gauss-Legendre in `cos theta` times uniform `phi` quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereQuadrature {
    pub l_max: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub weights: Vec<f64>,
    /// `[node][l][m + l]`
    harmonics: Vec<Vec<Vec<f64>>>,
}

impl SphereQuadrature {
    /// Resolution with `2 l_max + 2` colatitudes and `4 l_max + 4` longitudes.
    pub fn new(l_max: usize) -> Self {
        Self::with_resolution(l_max, 2 * l_max + 2, 4 * l_max + 4)
    }

    pub fn with_resolution(l_max: usize, n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut theta = Vec::new();
        let mut phi = Vec::new();
        let mut weights = Vec::new();
        let mut harmonics = Vec::new();
        for (xi, wi) in x.iter().zip(&w) {
            for j in 0..n_phi {
                let th = xi.acos();
                let ph = j as f64 * dphi;
                theta.push(th);
                phi.push(ph);
                weights.push(wi * dphi);
                harmonics.push(real_harmonics(l_max, th, ph));
            }
        }
        Self { l_max, theta, phi, weights, harmonics }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Real spherical-harmonic coefficients of data on `radial nodes x sphere`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficients {
    pub l_max: usize,
    /// `[l][m + l][radial node]`
    pub coeffs: Vec<Vec<Vec<f64>>>,
    /// Relative Parseval defect, maximized over radial nodes.
    pub parseval_defect: f64,
}

impl ModeCoefficients {
    pub fn channel(&self, l: usize, m: i64) -> &[f64] {
        &self.coeffs[l][(m + l as i64) as usize]
    }

    /// Band-limited resummation at one radial node.
    pub fn resum(&self, node: usize, theta: f64, phi: f64) -> f64 {
        let y = real_harmonics(self.l_max, theta, phi);
        let mut s = 0.0;
        for (l, row) in self.coeffs.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                s += c[node] * y[l][k];
            }
        }
        s
    }
}

/// Projects `data(r, theta, phi)` onto real harmonics with `l <= l_max`.
///
/// Fails with `QuadratureUnderResolved` when the relative Parseval defect
/// at some radial node exceeds `threshold`.
pub fn project(
    data: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    radii: &[f64],
    quad: &SphereQuadrature,
    threshold: f64,
) -> Result<ModeCoefficients> {
    let l_max = quad.l_max;
    let per_node: Vec<(Vec<Vec<f64>>, f64)> = radii
        .par_iter()
        .map(|&r| {
            let mut c: Vec<Vec<f64>> = (0..=l_max).map(|l| vec![0.0; 2 * l + 1]).collect();
            let samples: Vec<f64> = (0..quad.len()).map(|q| data(r, quad.theta[q], quad.phi[q])).collect();
            // Parseval sums on rescaled data, so tiny amplitudes do not underflow
            let scale = samples.iter().fold(0.0f64, |a, f| a.max(f.abs()));
            let mut norm2 = 0.0;
            for (q, &f) in samples.iter().enumerate() {
                let w = quad.weights[q];
                let fs = if scale > 0.0 { f / scale } else { 0.0 };
                norm2 += w * fs * fs;
                for (l, row) in c.iter_mut().enumerate() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v += w * f * quad.harmonics[q][l][k];
                    }
                }
            }
            let sum2: f64 = if scale > 0.0 { c.iter().flatten().map(|v| (v / scale).powi(2)).sum() } else { 0.0 };
            let defect = if norm2 > 0.0 { (norm2 - sum2).abs() / norm2 } else { 0.0 };
            (c, defect)
        })
        .collect();
    let parseval_defect = per_node.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    if parseval_defect > threshold {
        return Err(Error::QuadratureUnderResolved { defect: parseval_defect, threshold });
    }
    let mut coeffs: Vec<Vec<Vec<f64>>> =
        (0..=l_max).map(|l| vec![Vec::with_capacity(radii.len()); 2 * l + 1]).collect();
    for (c, _) in &per_node {
        for (l, row) in c.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                coeffs[l][k].push(*v);
            }
        }
    }
    Ok(ModeCoefficients { l_max, coeffs, parseval_defect })
}
