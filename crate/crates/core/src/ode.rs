//! Adaptive Dormand-Prince 5(4) for complex first-order systems.

use num_complex::Complex64;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerance {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-300, max_steps: 200_000 }
    }
}

/// Integrates `y' = f(x, y)` from `x0` to `x1` (either direction).
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[Complex64; N]) -> [Complex64; N],
    x0: f64,
    x1: f64,
    y0: [Complex64; N],
    tol: OdeTolerance,
) -> Result<[Complex64; N]> {
    let span = x1 - x0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let mut x = x0;
    let mut y = y0;
    let mut h = span.abs() * 1e-3;
    let mut k = [[Complex64::new(0.0, 0.0); N]; 7];
    k[0] = f(x, &y);
    for _ in 0..tol.max_steps {
        let remaining = (x1 - x).abs();
        if remaining <= 1e-14 * span.abs() {
            return Ok(y);
        }
        h = h.min(remaining);
        let hs = dir * h;
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..N {
                        ys[i] += kj[i] * (hs * a);
                    }
                }
            }
            k[s] = f(x + C[s] * hs, &ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..N {
            let mut d5 = Complex64::new(0.0, 0.0);
            let mut d4 = Complex64::new(0.0, 0.0);
            for s in 0..7 {
                d5 += k[s][i] * B5[s];
                d4 += k[s][i] * B4[s];
            }
            y5[i] = y[i] + d5 * hs;
            let scale = tol.atol + tol.rtol * y[i].norm().max(y5[i].norm());
            err = err.max(((d5 - d4) * hs).norm() / scale);
        }
        if !err.is_finite() {
            return Err(Error::NonFiniteDetected { step: 0 });
        }
        if err <= 1.0 {
            x += hs;
            y = y5;
            k[0] = k[6];
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Err(Error::NoConvergence { what: "dopri5 step budget", iterations: tol.max_steps })
}
