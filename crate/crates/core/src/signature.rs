//! Truncated tensor algebra and path signatures.
//!
//! A depth-`m` signature of a `d`-channel piecewise-linear path is stored as
//! `m + 1` coefficient blocks; block `k` holds the `d^k` iterated-integral
//! coefficients in row-major multi-index order, i.e. multi-index
//! `(i_1, ..., i_k)` (1-based channels) lives at flat offset
//! `sum_j (i_j - 1) * d^(k-j)`.  Signatures of straight segments have the
//! closed form `increment^{⊗k} / k!`, and concatenation is the Chen product,
//! so the signature of a whole path is a fold of per-segment exponentials.

use crate::error::{Error, Result};
use crate::path::{PathBatch, PathSample, TimeGrid};

/// A graded element of the truncated tensor algebra over R^dim.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    dim: usize,
    depth: usize,
    /// `depth + 1` blocks; block k has `dim^k` entries.
    levels: Vec<Vec<f64>>,
}

impl TruncatedTensor {
    /// The unit element (1, 0, 0, ...).
    pub fn unit(dim: usize, depth: usize) -> Result<Self> {
        if dim == 0 || depth == 0 {
            return Err(Error::input("tensor needs dim >= 1 and depth >= 1"));
        }
        let levels = (0..=depth).map(|k| {
            let mut block = vec![0.0; dim.pow(k as u32)];
            if k == 0 {
                block[0] = 1.0;
            }
            block
        });
        Ok(TruncatedTensor { dim, depth, levels: levels.collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Coefficient block of level `k` (`0 <= k <= depth`).
    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    /// All coefficients of levels `1..=depth`, concatenated in level order.
    pub fn flatten_graded(&self) -> Vec<f64> {
        self.levels[1..].iter().flatten().copied().collect()
    }

    /// Euclidean norm of one level block.
    pub fn level_norm(&self, k: usize) -> f64 {
        self.levels[k].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(Error::input(format!(
                "tensor mismatch: ({}, {}) vs ({}, {})",
                self.dim, self.depth, other.dim, other.depth
            )));
        }
        Ok(())
    }
}

/// Signature of a single straight-line segment: level k is
/// `increment^{⊗k} / k!`.
pub fn segment_exponential(increment: &[f64], dim: usize, depth: usize) -> Result<TruncatedTensor> {
    if increment.len() != dim {
        return Err(Error::input(format!(
            "increment length {} does not match dim {}",
            increment.len(),
            dim
        )));
    }
    let mut t = TruncatedTensor::unit(dim, depth)?;
    for k in 1..=depth {
        let (prev_blocks, rest) = t.levels.split_at_mut(k);
        let prev = &prev_blocks[k - 1];
        let block = &mut rest[0];
        let scale = 1.0 / k as f64;
        for (i, &p) in prev.iter().enumerate() {
            for (j, &x) in increment.iter().enumerate() {
                block[i * dim + j] = p * x * scale;
            }
        }
    }
    Ok(t)
}

/// Truncated tensor product: level k of the result is
/// `sum_{i+j=k} level_i(a) ⊗ level_j(b)`.
pub fn chen_product(a: &TruncatedTensor, b: &TruncatedTensor) -> Result<TruncatedTensor> {
    a.check_compatible(b)?;
    let dim = a.dim;
    let mut out = TruncatedTensor::unit(dim, a.depth)?;
    out.levels[0][0] = a.levels[0][0] * b.levels[0][0];
    for k in 1..=a.depth {
        let block = &mut out.levels[k];
        block.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..=k {
            let left = &a.levels[i];
            let right = &b.levels[k - i];
            let rlen = right.len();
            for (li, &lv) in left.iter().enumerate() {
                if lv == 0.0 {
                    continue;
                }
                let dst = &mut block[li * rlen..(li + 1) * rlen];
                for (d, &rv) in dst.iter_mut().zip(right) {
                    *d += lv * rv;
                }
            }
        }
    }
    Ok(out)
}

/// Depth-`m` signature of a piecewise-linear path.
pub fn signature(path: &PathSample, depth: usize) -> Result<TruncatedTensor> {
    if path.len() < 2 {
        return Err(Error::input("signature needs at least two path points"));
    }
    let dim = path.channels();
    let mut sig = segment_exponential(&path.increment(0), dim, depth)?;
    for j in 1..path.len() - 1 {
        let seg = segment_exponential(&path.increment(j), dim, depth)?;
        sig = chen_product(&sig, &seg)?;
    }
    Ok(sig)
}

/// Coefficient-wise mean of the member signatures.
pub fn expected_signature(batch: &PathBatch, depth: usize) -> Result<TruncatedTensor> {
    if batch.is_empty() {
        return Err(Error::input("expected signature of an empty batch"));
    }
    let mut acc = signature(&batch.path(0), depth)?;
    for i in 1..batch.len() {
        let s = signature(&batch.path(i), depth)?;
        for (a, b) in acc.levels.iter_mut().zip(&s.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for block in &mut acc.levels {
        for x in block.iter_mut() {
            *x *= inv;
        }
    }
    Ok(acc)
}

/// Signature-Wasserstein-1 distance: the l2 norm of the expected-signature
/// difference over levels `1..=depth` (level 0 cancels identically).
pub fn sig_w1(batch_a: &PathBatch, batch_b: &PathBatch, depth: usize) -> Result<f64> {
    if batch_a.channels() != batch_b.channels() {
        return Err(Error::input(format!(
            "channel mismatch: {} vs {}",
            batch_a.channels(),
            batch_b.channels()
        )));
    }
    let ea = expected_signature(batch_a, depth)?;
    let eb = expected_signature(batch_b, depth)?;
    let mut sq = 0.0;
    for k in 1..=depth {
        for (x, y) in ea.levels[k].iter().zip(&eb.levels[k]) {
            let d = x - y;
            sq += d * d;
        }
    }
    Ok(sq.sqrt())
}

/// Prepend the grid time as channel 0 of every path.
///
/// A strictly increasing coordinate removes tree-like equivalence, so
/// 1-channel data is augmented this way before signature comparisons.
pub fn time_augment(batch: &PathBatch) -> PathBatch {
    let times = batch.times();
    let n = batch.channels();
    let mut values = Vec::with_capacity(batch.len() * times.len() * (n + 1));
    for i in 0..batch.len() {
        for (j, &t) in times.iter().enumerate() {
            values.push(t);
            values.extend_from_slice(batch.row(i, j));
        }
    }
    PathBatch::new(batch.grid().clone(), n + 1, batch.len(), values)
        .expect("augmented batch is well-formed by construction")
}

/// Prepend a zero basepoint one grid step before the path starts.
///
/// The extra leading segment makes level 1 of the signature carry absolute
/// values rather than only increments.
pub fn basepoint_augment(path: &PathSample) -> Result<PathSample> {
    let times = path.times();
    let lead = times[1] - times[0];
    let mut new_times = Vec::with_capacity(times.len() + 1);
    new_times.push(times[0] - lead);
    new_times.extend_from_slice(times);
    let mut values = vec![0.0; path.channels()];
    values.extend_from_slice(path.values());
    PathSample::new(TimeGrid::new(new_times)?, path.channels(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_path(values: &[f64]) -> PathSample {
        let grid = TimeGrid::uniform(1.0, values.len() - 1).unwrap();
        PathSample::new(grid, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn segment_exponential_1d_closed_form() {
        let t = segment_exponential(&[1.0], 1, 3).unwrap();
        assert_eq!(t.level(0), &[1.0]);
        assert_eq!(t.level(1), &[1.0]);
        assert_eq!(t.level(2), &[0.5]);
        assert_abs_diff_eq!(t.level(3)[0], 1.0 / 6.0, epsilon = 1e-16);
    }

    #[test]
    fn segment_exponential_zero_increment_is_unit() {
        let t = segment_exponential(&[0.0, 0.0, 0.0], 3, 4).unwrap();
        assert_eq!(t, TruncatedTensor::unit(3, 4).unwrap());
    }

    #[test]
    fn segment_exponential_axis_increment() {
        let t = segment_exponential(&[1.0, 0.0], 2, 2).unwrap();
        // level 2 layout: (1,1), (1,2), (2,1), (2,2)
        assert_eq!(t.level(2), &[0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn segment_exponential_rejects_bad_dim() {
        assert!(segment_exponential(&[1.0], 2, 2).is_err());
    }

    #[test]
    fn chen_unit_is_identity() {
        let b = segment_exponential(&[0.3, -1.2], 2, 4).unwrap();
        let unit = TruncatedTensor::unit(2, 4).unwrap();
        assert_eq!(chen_product(&unit, &b).unwrap(), b);
        assert_eq!(chen_product(&b, &unit).unwrap(), b);
    }

    #[test]
    fn chen_reversal_inverts() {
        let u = [0.7, -0.4, 1.1];
        let f = segment_exponential(&u, 3, 4).unwrap();
        let r = segment_exponential(&[-u[0], -u[1], -u[2]], 3, 4).unwrap();
        let prod = chen_product(&f, &r).unwrap();
        let unit = TruncatedTensor::unit(3, 4).unwrap();
        for k in 0..=4 {
            for (a, b) in prod.level(k).iter().zip(unit.level(k)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn chen_1d_segments_commute_to_sum() {
        let a = segment_exponential(&[0.8], 1, 5).unwrap();
        let b = segment_exponential(&[-0.3], 1, 5).unwrap();
        let prod = chen_product(&a, &b).unwrap();
        let direct = segment_exponential(&[0.5], 1, 5).unwrap();
        for k in 0..=5 {
            assert_abs_diff_eq!(prod.level(k)[0], direct.level(k)[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn signature_monotone_line_reparameterization_invariant() {
        // 0 -> 1 in one segment or in three uneven segments of a line.
        let one = line_path(&[0.0, 1.0]);
        let grid = TimeGrid::new(vec![0.0, 0.2, 0.3, 1.0]).unwrap();
        let three = PathSample::new(grid, 1, vec![0.0, 0.4, 0.55, 1.0]).unwrap();
        let s1 = signature(&one, 3).unwrap();
        // Same image path but different breakpoints: 1-dim signatures depend
        // on the total increment only.
        let s3 = signature(&three, 3).unwrap();
        assert_eq!(s1.level(1), &[1.0]);
        for k in 0..=3 {
            assert_abs_diff_eq!(s1.level(k)[0], s3.level(k)[0], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(s1.level(3)[0], 1.0 / 6.0, epsilon = 1e-16);
    }

    #[test]
    fn signature_constant_path_is_unit() {
        let p = line_path(&[2.0, 2.0, 2.0]);
        assert_eq!(signature(&p, 4).unwrap(), TruncatedTensor::unit(1, 4).unwrap());
    }

    #[test]
    fn signature_l_shaped_level2() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let p = PathSample::new(grid, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let s = signature(&p, 2).unwrap();
        assert_eq!(s.level(1), &[1.0, 1.0]);
        // area terms: ∫dx1 dx2 = 1 (all of x2 comes after x1), ∫dx2 dx1 = 0
        assert_eq!(s.level(2), &[0.5, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn signature_rejects_single_point() {
        let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let p = PathSample::new(grid, 1, vec![0.0, 1.0]).unwrap();
        assert!(signature(&p, 2).is_ok());
        // a PathSample cannot even be built on a 1-point grid, so exercise the
        // depth-0 guard instead
        assert!(TruncatedTensor::unit(1, 0).is_err());
    }

    #[test]
    fn expected_signature_singleton_and_copies() {
        let p = line_path(&[0.0, 0.7, 1.3]);
        let single = PathBatch::from_paths(vec![p.clone()]).unwrap();
        let triple = PathBatch::from_paths(vec![p.clone(), p.clone(), p.clone()]).unwrap();
        let s = signature(&p, 4).unwrap();
        assert_eq!(expected_signature(&single, 4).unwrap(), s);
        let e3 = expected_signature(&triple, 4).unwrap();
        for k in 0..=4 {
            for (a, b) in e3.level(k).iter().zip(s.level(k)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn expected_signature_symmetric_pair_level1_vanishes() {
        let up = line_path(&[0.0, 1.0]);
        let down = line_path(&[0.0, -1.0]);
        let b = PathBatch::from_paths(vec![up, down]).unwrap();
        let e = expected_signature(&b, 3).unwrap();
        assert_eq!(e.level(1), &[0.0]);
    }

    #[test]
    fn sig_w1_basic_values() {
        let line = PathBatch::from_paths(vec![line_path(&[0.0, 1.0])]).unwrap();
        let flat = PathBatch::from_paths(vec![line_path(&[0.0, 0.0])]).unwrap();
        assert_eq!(sig_w1(&line, &line, 3).unwrap(), 0.0);
        assert_abs_diff_eq!(sig_w1(&line, &flat, 1).unwrap(), 1.0, epsilon = 1e-16);
        assert!(sig_w1(&line, &time_augment(&flat), 2).is_err());
    }

    #[test]
    fn time_augment_prepends_clock() {
        let b = PathBatch::from_paths(vec![line_path(&[5.0, 6.0])]).unwrap();
        let a = time_augment(&b);
        assert_eq!(a.channels(), 2);
        assert_eq!(a.row(0, 0), &[0.0, 5.0]);
        assert_eq!(a.row(0, 1), &[1.0, 6.0]);
    }

    #[test]
    fn basepoint_augment_exposes_level() {
        let p = line_path(&[5.0, 6.0]);
        let a = basepoint_augment(&p).unwrap();
        let s = signature(&a, 2).unwrap();
        assert_eq!(s.level(1), &[6.0]);
    }
}
