//! Shared fixtures for the kernel benchmarks.

use dsswave_core::{modes, Geometry, ModePotential, RadialGrid, SpacetimeParams, WaveState};
use num_complex::Complex64;

/// Desk-scale `m = 1`, `Lambda = 0.02` set-up on a normalized grid.
pub struct Fixture {
    pub geom: Geometry,
    pub grid: RadialGrid,
    pub potential: ModePotential,
    pub state: WaveState,
}

impl Fixture {
    pub fn new(ell: u32, extent: f64, spacing: f64) -> Self {
        let geom = Geometry::new(SpacetimeParams::new(1.0, 0.02)).expect("subextremal parameters");
        let grid = RadialGrid::surface_gravity_normalized(&geom, extent, spacing).expect("grid");
        let potential = modes::potential(&geom, &grid, ell);
        let mut state = WaveState::gaussian(&grid, ell, 0.0, 3.0, 1.0);
        state.pi = state.phi.clone();
        Self { geom, grid, potential, state }
    }

    /// Gaussian source for resolvent solves.
    pub fn source(&self) -> Vec<Complex64> {
        self.grid.nodes.iter().map(|n| Complex64::new((-(n.r_star / 2.0).powi(2)).exp(), 0.0)).collect()
    }
}

/// Damped oscillation `c + a e^{-nu t} cos(omega t)` sampled on `[0, t_end]`.
pub fn ringdown(samples: usize, t_end: f64) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..samples).map(|k| t_end * k as f64 / (samples - 1) as f64).collect();
    let v = t.iter().map(|&t| 0.2 + (-0.1 * t).exp() * (0.1 * t).cos()).collect();
    (t, v)
}
