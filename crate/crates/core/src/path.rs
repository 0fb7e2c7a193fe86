//! Time grids and multichannel sample paths.

use crate::error::{Error, Result};
use std::sync::Arc;

/// A strictly increasing time grid `t_0 < t_1 < ... < t_J`.
///
/// Grids are shared (`Arc`) between the many paths of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Arc<Vec<f64>>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::input("time grid needs at least two points"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::input("time grid must be finite and strictly increasing"));
        }
        Ok(TimeGrid { times: Arc::new(times) })
    }

    /// Uniform grid `t_j = j * horizon / steps`, `j = 0..=steps`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::input("uniform grid needs horizon > 0 and steps >= 1"));
        }
        let dt = horizon / steps as f64;
        Self::new((0..=steps).map(|j| j as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points (J + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of integration steps J.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    fn shared(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.times)
    }
}

/// One multichannel path: values on a [`TimeGrid`], row-major
/// `(J+1) x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    grid: TimeGrid,
    channels: usize,
    values: Vec<f64>,
}

impl PathSample {
    pub fn new(grid: TimeGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::input("path needs at least one channel"));
        }
        if values.len() != grid.len() * channels {
            return Err(Error::input(format!(
                "path values length {} does not match {} grid points x {} channels",
                values.len(),
                grid.len(),
                channels
            )));
        }
        Ok(PathSample { grid, channels, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// State row at grid index `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.channels..(j + 1) * self.channels]
    }

    pub fn value(&self, j: usize, channel: usize) -> f64 {
        self.values[j * self.channels + channel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Channel-wise increment between grid points `j` and `j+1`.
    pub fn increment(&self, j: usize) -> Vec<f64> {
        let a = self.row(j);
        let b = self.row(j + 1);
        b.iter().zip(a).map(|(x, y)| x - y).collect()
    }
}

/// A batch of paths sharing one grid and channel count, stored flat
/// (`M x (J+1) x channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    channels: usize,
    n_paths: usize,
    values: Vec<f64>,
}

impl PathBatch {
    pub fn new(grid: TimeGrid, channels: usize, n_paths: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || n_paths == 0 {
            return Err(Error::input("batch needs at least one path and one channel"));
        }
        if values.len() != n_paths * grid.len() * channels {
            return Err(Error::input("batch value buffer has wrong length"));
        }
        Ok(PathBatch { grid, channels, n_paths, values })
    }

    pub fn from_paths(paths: Vec<PathSample>) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::input("empty path list"))?;
        let grid = first.grid.clone();
        let channels = first.channels;
        let mut values = Vec::with_capacity(paths.len() * grid.len() * channels);
        for (i, p) in paths.iter().enumerate() {
            if p.grid.times() != grid.times() {
                return Err(Error::input(format!("path {i} is on a different time grid")));
            }
            if p.channels != channels {
                return Err(Error::input(format!("path {i} has a different channel count")));
            }
            values.extend_from_slice(&p.values);
        }
        let n_paths = paths.len();
        Ok(PathBatch { grid, channels, n_paths, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.n_paths
    }

    pub fn is_empty(&self) -> bool {
        self.n_paths == 0
    }

    pub fn value(&self, path: usize, j: usize, channel: usize) -> f64 {
        self.values[(path * self.grid.len() + j) * self.channels + channel]
    }

    /// State row of path `path` at grid index `j`.
    pub fn row(&self, path: usize, j: usize) -> &[f64] {
        let off = (path * self.grid.len() + j) * self.channels;
        &self.values[off..off + self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy of one member path.
    pub fn path(&self, i: usize) -> PathSample {
        let stride = self.grid.len() * self.channels;
        PathSample {
            grid: TimeGrid { times: self.grid.shared() },
            channels: self.channels,
            values: self.values[i * stride..(i + 1) * stride].to_vec(),
        }
    }

    /// Sub-batch by path indices (copies).
    pub fn select(&self, indices: &[usize]) -> Result<PathBatch> {
        let stride = self.grid.len() * self.channels;
        let mut values = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= self.n_paths {
                return Err(Error::input(format!("path index {i} out of range")));
            }
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        PathBatch::new(self.grid.clone(), self.channels, indices.len(), values)
    }

    /// Values of one channel at one grid index across all paths.
    pub fn cross_section(&self, j: usize, channel: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.value(i, j, channel)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_increasing() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn uniform_grid_endpoints() {
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g.times()[0], 0.0);
        assert!((g.times()[100] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_rejects_mixed_grids() {
        let g1 = TimeGrid::uniform(1.0, 2).unwrap();
        let g2 = TimeGrid::uniform(2.0, 2).unwrap();
        let p1 = PathSample::new(g1, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let p2 = PathSample::new(g2, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(PathBatch::from_paths(vec![p1, p2]).is_err());
    }

    #[test]
    fn batch_indexing_round_trips() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        let p1 = PathSample::new(g.clone(), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p2 = PathSample::new(g, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let b = PathBatch::from_paths(vec![p1.clone(), p2]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.value(1, 0, 1), 6.0);
        assert_eq!(b.path(0), p1);
        assert_eq!(b.cross_section(1, 0), vec![3.0, 7.0]);
    }
}
