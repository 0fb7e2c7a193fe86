//! Synthetic training corpora: stochastic opinion dynamics and a stochastic
//! FitzHugh–Nagumo neuron network, both simulated as interacting particle
//! systems under the Euler scheme.

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::path::{PathBatch, TimeGrid};
use rayon::prelude::*;

const TAG_INIT: u64 = 0x494e4954;
const TAG_DRIVE: u64 = 0x44525656;

/// Parameters of the mean-field opinion model
/// `dY = -( ∫ φ(|Y - y|) (Y - y) μ_t(dy) ) dt + σ dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionParams {
    pub theta1: f64,
    pub theta2: f64,
    pub sigma: f64,
    pub n_particles: usize,
    pub horizon: f64,
    pub dt: f64,
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
}

impl Default for OpinionParams {
    fn default() -> Self {
        OpinionParams {
            theta1: 6.0,
            theta2: 0.2,
            sigma: 0.1,
            n_particles: 8192,
            horizon: 1.0,
            dt: 0.01,
            init_low: -2.0,
            init_high: 2.0,
            seed: 0,
        }
    }
}

impl OpinionParams {
    fn validate(&self) -> Result<()> {
        if !(self.theta1 >= 0.0) || !(self.theta2 > 0.0) {
            return Err(Error::input("opinion: theta1 must be >= 0 and theta2 > 0"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::input("opinion: sigma must be nonnegative"));
        }
        if self.n_particles < 2 {
            return Err(Error::input("opinion: need at least two particles"));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::input("opinion: horizon and dt must be positive"));
        }
        if self.init_high < self.init_low {
            return Err(Error::input("opinion: empty initial interval"));
        }
        Ok(())
    }
}

/// Interaction kernel: a compactly supported mollifier bump,
/// `θ1 * exp(-0.01 / (1 - (r - θ2)^2))` for distances inside the unit
/// interaction radius, zero for `r <= 0`, outside the radius, and wherever
/// the mollifier exponent blows up (`(r - θ2)^2 >= 1`).
pub fn opinion_kernel(r: f64, theta1: f64, theta2: f64) -> f64 {
    if r <= 0.0 || r >= 1.0 {
        return 0.0;
    }
    let s = (r - theta2) * (r - theta2);
    if s >= 1.0 {
        return 0.0;
    }
    theta1 * (-0.01 / (1.0 - s)).exp()
}

/// Mean-field drift of the particle system: component `i` is
/// `-(1/n) Σ_j φ(|Y_i - Y_j|) (Y_i - Y_j)`.
pub fn opinion_drift(y: &[f64], theta1: f64, theta2: f64) -> Vec<f64> {
    let n = y.len();
    let inv = 1.0 / n as f64;
    y.par_iter()
        .map(|&yi| {
            let mut acc = 0.0;
            for &yj in y {
                let d = yi - yj;
                acc += opinion_kernel(d.abs(), theta1, theta2) * d;
            }
            -acc * inv
        })
        .collect()
}

/// Simulate the interacting particle system; every particle trajectory
/// becomes one path of the returned single-channel batch.
pub fn simulate_opinion(params: &OpinionParams) -> Result<PathBatch> {
    params.validate()?;
    let steps = (params.horizon / params.dt).round() as usize;
    if steps == 0 || (params.horizon / params.dt - steps as f64).abs() > 1e-9 {
        return Err(Error::input("opinion: horizon must be an integer multiple of dt"));
    }
    let grid = TimeGrid::uniform(params.horizon, steps)?;
    let n = params.n_particles;
    let stream = NoiseStream::new(params.seed);
    let init = stream.substream(TAG_INIT);
    let drive = stream.substream(TAG_DRIVE);

    let mut y: Vec<f64> = (0..n)
        .map(|i| {
            params.init_low
                + init.uniform(i as u64, 0, 0) * (params.init_high - params.init_low)
        })
        .collect();
    // values[(i, j)] for path i, grid index j
    let mut values = vec![0.0; n * (steps + 1)];
    for (i, &yi) in y.iter().enumerate() {
        values[i * (steps + 1)] = yi;
    }
    for j in 0..steps {
        let dt = grid.dt(j);
        let sd = params.sigma * dt.sqrt();
        let drift = opinion_drift(&y, params.theta1, params.theta2);
        for i in 0..n {
            y[i] += drift[i] * dt + sd * drive.gaussian(i as u64, j as u64, 0);
            if !y[i].is_finite() {
                return Err(Error::numeric(format!(
                    "opinion: particle {i} diverged at step {j}"
                )));
            }
            values[i * (steps + 1) + j + 1] = y[i];
        }
    }
    PathBatch::new(grid, 1, n, values)
}

/// Parameters of the stochastic FitzHugh–Nagumo network (single population).
#[derive(Debug, Clone, PartialEq)]
pub struct FhnParams {
    pub v0_mean: f64,
    pub v0_std: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub current: f64,
    pub sigma_ext: f64,
    pub w0_mean: f64,
    pub w0_std: f64,
    pub v_rev: f64,
    pub a_r: f64,
    pub a_d: f64,
    pub t_max: f64,
    pub lambda: f64,
    pub y0_mean: f64,
    pub y0_std: f64,
    pub j_bar: f64,
    pub sigma_j: f64,
    pub v_t: f64,
    pub gamma_chi: f64,
    pub lambda_chi: f64,
    pub n_particles: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for FhnParams {
    fn default() -> Self {
        FhnParams {
            v0_mean: 0.0,
            v0_std: 0.4,
            a: 0.7,
            b: 0.8,
            c: 0.08,
            current: 0.5,
            sigma_ext: 0.5,
            w0_mean: 0.5,
            w0_std: 0.4,
            v_rev: 1.0,
            a_r: 1.0,
            a_d: 1.0,
            t_max: 1.0,
            lambda: 0.2,
            y0_mean: 0.3,
            y0_std: 0.05,
            j_bar: 1.0,
            sigma_j: 0.2,
            v_t: 2.0,
            gamma_chi: 0.1,
            lambda_chi: 0.5,
            n_particles: 4096,
            horizon: 1.0,
            dt: 0.01,
            seed: 0,
        }
    }
}

impl FhnParams {
    fn validate(&self) -> Result<()> {
        if self.v0_std < 0.0 || self.w0_std < 0.0 || self.y0_std < 0.0 {
            return Err(Error::input("fhn: initial standard deviations must be nonnegative"));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::input("fhn: horizon and dt must be positive"));
        }
        if self.n_particles == 0 {
            return Err(Error::input("fhn: need at least one particle"));
        }
        Ok(())
    }

    /// Sigmoidal synaptic activation `S(V) = T_max / (1 + exp(-λ (V - V_T)))`.
    pub fn activation(&self, v: f64) -> f64 {
        self.t_max / (1.0 + (-self.lambda * (v - self.v_t)).exp())
    }
}

/// Boundary-vanishing diffusion shape
/// `χ(y) = Γ exp(-Λ / (1 - (2y - 1)^2))` on `y ∈ (0, 1)`, zero elsewhere.
pub fn fhn_chi(y: f64, gamma: f64, lambda: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        return 0.0;
    }
    let s = 2.0 * y - 1.0;
    gamma * (-lambda / (1.0 - s * s)).exp()
}

/// Simulate the three-channel (V, w, y) neuron network.
///
/// Each particle carries an independent three-dimensional driving noise
/// `(W, W^y, W^γ)`.  The synaptic coupling enters the V-equation through the
/// population average of `-J(V_i - V_rev) y_i`-type terms, whose summand
/// depends only on the particle itself, so the average collapses to the own
/// term.
pub fn simulate_fhn(params: &FhnParams) -> Result<PathBatch> {
    params.validate()?;
    let steps = (params.horizon / params.dt).round() as usize;
    if steps == 0 || (params.horizon / params.dt - steps as f64).abs() > 1e-9 {
        return Err(Error::input("fhn: horizon must be an integer multiple of dt"));
    }
    let grid = TimeGrid::uniform(params.horizon, steps)?;
    let n = params.n_particles;
    let stream = NoiseStream::new(params.seed);
    let init = stream.substream(TAG_INIT);
    let drive = stream.substream(TAG_DRIVE);

    let mut state: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                params.v0_mean + params.v0_std * init.gaussian(i as u64, 0, 0),
                params.w0_mean + params.w0_std * init.gaussian(i as u64, 0, 1),
                params.y0_mean + params.y0_std * init.gaussian(i as u64, 0, 2),
            ]
        })
        .collect();
    let mut values = vec![0.0; n * (steps + 1) * 3];
    for (i, s) in state.iter().enumerate() {
        values[i * (steps + 1) * 3..i * (steps + 1) * 3 + 3].copy_from_slice(s);
    }
    for j in 0..steps {
        let dt = grid.dt(j);
        let sq = dt.sqrt();
        let next: Vec<[f64; 3]> = state
            .par_iter()
            .enumerate()
            .map(|(i, &[v, w, y])| {
                let dw0 = sq * drive.gaussian(i as u64, j as u64, 0);
                let dw1 = sq * drive.gaussian(i as u64, j as u64, 1);
                let dw2 = sq * drive.gaussian(i as u64, j as u64, 2);
                let coupling = -params.j_bar * (v - params.v_rev) * y;
                let coupling_noise = -params.sigma_j * (v - params.v_rev) * y;
                let s_v = params.activation(v);
                let y_rate = params.a_r * s_v * (1.0 - y) - params.a_d * y;
                let y_var = params.a_r * s_v * (1.0 - y) + params.a_d * y;
                let sigma_y = y_var.max(0.0).sqrt() * fhn_chi(y, params.gamma_chi, params.lambda_chi);
                [
                    v + (v - v * v * v / 3.0 - w + params.current + coupling) * dt
                        + params.sigma_ext * dw0
                        + coupling_noise * dw2,
                    w + params.c * (v + params.a - params.b * w) * dt,
                    y + y_rate * dt + sigma_y * dw1,
                ]
            })
            .collect();
        state = next;
        for (i, s) in state.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("fhn: particle {i} diverged at step {j}")));
            }
            let off = (i * (steps + 1) + j + 1) * 3;
            values[off..off + 3].copy_from_slice(s);
        }
    }
    PathBatch::new(grid, 3, n, values)
}
