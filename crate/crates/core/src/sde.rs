//! Brownian paths, Euler–Maruyama, and the directed-chain Euler step.

use crate::dcgan::DcGenerator;
use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::path::{PathSample, TimeGrid};

/// Sample a standard `dim`-dimensional Brownian path on `grid`.
///
/// `B_0 = 0`; increments over `[t_j, t_{j+1}]` are `N(0, dt * I)`, addressed
/// by `(path_id, j, channel)` so any path can be regenerated independently.
pub fn brownian_path(
    dim: usize,
    grid: &TimeGrid,
    stream: &NoiseStream,
    path_id: u64,
) -> Result<PathSample> {
    if dim == 0 {
        return Err(Error::input("brownian_path: dim must be positive"));
    }
    let mut values = vec![0.0; grid.len() * dim];
    for j in 0..grid.steps() {
        let sd = grid.dt(j).sqrt();
        for ch in 0..dim {
            let inc = sd * stream.gaussian(path_id, j as u64, ch as u64);
            values[(j + 1) * dim + ch] = values[j * dim + ch] + inc;
        }
    }
    PathSample::new(grid.clone(), dim, values)
}

/// Euler–Maruyama for `dx = drift(t, x) dt + diffusion(t, x) dB`.
///
/// `drift` returns the state-dimension vector, `diffusion` the `N x d` matrix
/// row-major where `d` is the noise channel count.  The returned trajectory
/// includes the initial state.
pub fn euler_maruyama<D, S>(
    drift: D,
    diffusion: S,
    x0: &[f64],
    grid: &TimeGrid,
    noise: &PathSample,
) -> Result<PathSample>
where
    D: Fn(f64, &[f64]) -> Vec<f64>,
    S: Fn(f64, &[f64]) -> Vec<f64>,
{
    if noise.times() != grid.times() {
        return Err(Error::input("euler_maruyama: noise grid differs from state grid"));
    }
    let n = x0.len();
    let d = noise.channels();
    let mut values = Vec::with_capacity(grid.len() * n);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for j in 0..grid.steps() {
        let t = grid.times()[j];
        let dt = grid.dt(j);
        let mu = drift(t, &x);
        let sigma = diffusion(t, &x);
        if mu.len() != n || sigma.len() != n * d {
            return Err(Error::input(format!(
                "euler_maruyama: coefficient shape mismatch at step {j}"
            )));
        }
        let db = noise.increment(j);
        for i in 0..n {
            let mut s = x[i] + mu[i] * dt;
            for (k, &dbk) in db.iter().enumerate() {
                s += sigma[i * d + k] * dbk;
            }
            x[i] = s;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "euler_maruyama: non-finite state after step {j}"
            )));
        }
        values.extend_from_slice(&x);
    }
    PathSample::new(grid.clone(), n, values)
}

/// Directed-chain Euler step: generate one path of
/// `X_{j+1} = X_j + V0(t_j, X_j, X~_j) dt + V1(t_j, X_j, X~_j) dB_j`
/// with `X_0 = xi`, reading the neighborhood path `X~` alongside the state.
pub fn dc_generate(
    gen: &DcGenerator,
    xi: &[f64],
    noise: &PathSample,
    neighbor: &PathSample,
) -> Result<PathSample> {
    let n = gen.state_dim();
    let d = gen.noise_dim();
    if xi.len() != n {
        return Err(Error::input(format!(
            "dc_generate: xi has {} entries, generator state dim is {n}",
            xi.len()
        )));
    }
    if noise.times() != neighbor.times() {
        return Err(Error::input("dc_generate: noise and neighbor grids differ"));
    }
    if noise.channels() != d {
        return Err(Error::input(format!(
            "dc_generate: noise has {} channels, generator expects {d}",
            noise.channels()
        )));
    }
    if neighbor.channels() != n {
        return Err(Error::input(format!(
            "dc_generate: neighbor has {} channels, generator state dim is {n}",
            neighbor.channels()
        )));
    }
    let grid = noise.grid();
    let ts = gen.time_scale();
    let mut values = Vec::with_capacity(grid.len() * n);
    values.extend_from_slice(xi);
    let mut x = xi.to_vec();
    let mut inp = vec![0.0; 1 + 2 * n];
    for j in 0..grid.steps() {
        let dt = grid.dt(j);
        inp[0] = grid.times()[j] * ts;
        inp[1..1 + n].copy_from_slice(&x);
        if gen.neighbor_masked() {
            inp[1 + n..].iter_mut().for_each(|v| *v = 0.0);
        } else {
            inp[1 + n..].copy_from_slice(neighbor.row(j));
        }
        let v0 = gen.v0().eval(&inp);
        let v1 = gen.v1().eval(&inp);
        let db = noise.increment(j);
        for i in 0..n {
            let mut s = x[i] + v0[i] * dt;
            for (k, &dbk) in db.iter().enumerate() {
                s += v1[i * d + k] * dbk;
            }
            x[i] = s;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "dc_generate: non-finite state after step {j}"
            )));
        }
        values.extend_from_slice(&x);
    }
    PathSample::new(grid.clone(), n, values)
}
