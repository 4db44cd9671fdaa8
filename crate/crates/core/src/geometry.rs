//! Brute-force spatial kernels: farthest point sampling, k-nearest
//! neighbours, neighbourhood gathering and inverse-distance interpolation.
//!
//! Distances are compared as squared Euclidean distances. Every tie is
//! broken by the smaller point index, so each kernel is a deterministic
//! function of its inputs.

use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

pub type Point = [f64; 3];

/// Added to distances before inversion in [`interpolation_weights`].
pub const INTERPOLATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cannot sample {m} of {n} points")]
    SampleCount { m: usize, n: usize },
    #[error("start index {start} out of range for {n} points")]
    StartIndex { start: usize, n: usize },
    #[error("neighbourhood size {k} outside 1..={available}")]
    NeighborCount { k: usize, available: usize },
    #[error("neighbour index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min subset selection.
///
/// The first pick is `start`; each later pick is the unselected point whose
/// distance to the selected set is largest. Indices come back in selection
/// order.
pub fn farthest_point_sample(positions: &[Point], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if m < 1 || m > n {
        return Err(GeometryError::SampleCount { m, n });
    }
    if start >= n {
        return Err(GeometryError::StartIndex { start, n });
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let c = positions[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(&positions[i], &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// For each query, the `k` nearest source indices in ascending distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborhoodIndex {
    /// Builds an index from raw rows, validating them against `source_count`.
    pub fn from_rows(k: usize, indices: Vec<usize>, source_count: usize) -> Result<Self> {
        if k == 0 || !indices.len().is_multiple_of(k) {
            return Err(GeometryError::NeighborCount { k, available: source_count });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_count) {
            return Err(GeometryError::IndexOutOfRange {
                index: bad,
                len: source_count,
            });
        }
        Ok(Self { k, indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query_count(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    /// Row-major `query_count x k` indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

pub fn knn_query(source: &[Point], queries: &[Point], k: usize) -> Result<NeighborhoodIndex> {
    let s = source.len();
    if k < 1 || k > s {
        return Err(GeometryError::NeighborCount { k, available: s });
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(s);
    for q in queries {
        scratch.clear();
        scratch.extend(source.iter().enumerate().map(|(i, p)| (dist2(p, q), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < s {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let nearest = &mut scratch[..k];
        nearest.sort_unstable_by(cmp);
        indices.extend(nearest.iter().map(|&(_, i)| i));
    }
    Ok(NeighborhoodIndex { k, indices })
}

/// Gathers `features[index[q][j]]` into a `(Q, k, C)` tensor. The backward
/// pass scatter-adds into `features`.
pub fn group_features(tape: &mut Tape, features: Var, index: &NeighborhoodIndex) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::RankTooLow("group_features", 2).into());
    }
    if let Some(&bad) = index.indices().iter().find(|&&i| i >= shape[0]) {
        return Err(GeometryError::IndexOutOfRange {
            index: bad,
            len: shape[0],
        });
    }
    let flat = tape.gather_rows(features, index.indices())?;
    Ok(tape.reshape(flat, [index.query_count(), index.k(), shape[1]])?)
}

/// `p_query - p_neighbour` for every (query, neighbour) pair, as `(Q, k, 3)`.
pub fn relative_positions(source: &[Point], queries: &[Point], index: &NeighborhoodIndex) -> Tensor {
    let k = index.k();
    let mut data = Vec::with_capacity(index.indices().len() * 3);
    for (q, p) in queries.iter().enumerate() {
        for &j in index.row(q) {
            let s = source[j];
            data.extend([p[0] - s[0], p[1] - s[1], p[2] - s[2]]);
        }
    }
    Tensor::new([queries.len(), k, 3], data).expect("pair count matches")
}

/// Neighbours and normalised inverse-distance weights for feature propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub index: NeighborhoodIndex,
    /// Row-major `fine_count x k`, each row summing to one.
    pub weights: Vec<f64>,
}

pub fn interpolation_weights(coarse_pos: &[Point], fine_pos: &[Point], k: usize) -> Result<Interpolation> {
    let index = knn_query(coarse_pos, fine_pos, k)?;
    let mut weights = Vec::with_capacity(index.indices().len());
    let mut row_w = vec![0.0; k];
    for (q, p) in fine_pos.iter().enumerate() {
        let mut total = 0.0;
        for (w, &j) in row_w.iter_mut().zip(index.row(q)) {
            *w = 1.0 / (dist2(p, &coarse_pos[j]).sqrt() + INTERPOLATION_EPS);
            total += *w;
        }
        weights.extend(row_w.iter().map(|w| w / total));
    }
    Ok(Interpolation { index, weights })
}

/// Propagates coarse features `(M, C)` onto `fine_pos`, giving `(N, C)`.
pub fn interpolate_features(
    tape: &mut Tape,
    coarse_pos: &[Point],
    coarse_feat: Var,
    fine_pos: &[Point],
    k: usize,
) -> Result<Var> {
    let interp = interpolation_weights(coarse_pos, fine_pos, k)?;
    apply_interpolation(tape, &interp, coarse_feat)
}

pub fn apply_interpolation(tape: &mut Tape, interp: &Interpolation, coarse_feat: Var) -> Result<Var> {
    let grouped = group_features(tape, coarse_feat, &interp.index)?;
    let n = interp.index.query_count();
    let k = interp.index.k();
    let w = tape.constant(Tensor::new([n, k, 1], interp.weights.clone())?);
    let weighted = tape.mul(grouped, w)?;
    Ok(tape.sum_axis(weighted, 1)?)
}

/// Tensor-in, tensor-out convenience form of [`interpolate_features`].
pub fn interpolate_tensor(coarse_pos: &[Point], coarse_feat: &Tensor, fine_pos: &[Point], k: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = tape.constant(coarse_feat.clone());
    let out = interpolate_features(&mut tape, coarse_pos, f, fine_pos, k)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_picks_the_far_point() {
        let pts = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_exhaustion_is_a_permutation_even_with_duplicates() {
        let pts = [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let mut got = farthest_point_sample(&pts, 4, 0).unwrap();
        assert_eq!(got, vec![0, 2, 1, 3]);
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_errors() {
        let pts = [[0.0; 3]; 3];
        assert_eq!(
            farthest_point_sample(&pts, 4, 0),
            Err(GeometryError::SampleCount { m: 4, n: 3 })
        );
        assert!(farthest_point_sample(&pts, 0, 0).is_err());
        assert!(farthest_point_sample(&pts, 1, 3).is_err());
    }

    #[test]
    fn knn_self_and_line() {
        let src = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let idx = knn_query(&src, &[[2.0, 0.0, 0.0]], 1).unwrap();
        assert_eq!(idx.row(0), &[2]);
        let idx = knn_query(&src, &[[0.9, 0.0, 0.0]], 2).unwrap();
        assert_eq!(idx.row(0), &[1, 0]);
    }

    #[test]
    fn knn_ties_by_index_and_errors() {
        let src = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let idx = knn_query(&src, &[[0.0; 3]], 3).unwrap();
        assert_eq!(idx.row(0), &[0, 1, 2]);
        assert!(knn_query(&src, &[[0.0; 3]], 4).is_err());
        assert!(knn_query(&src, &[[0.0; 3]], 0).is_err());
    }

    #[test]
    fn group_identity_index() {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new([3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let idx = NeighborhoodIndex::from_rows(1, vec![0, 1, 2], 3).unwrap();
        let g = group_features(&mut tape, f, &idx).unwrap();
        assert_eq!(tape.shape(g), &[3, 1, 2]);
        assert_eq!(tape.value(g).data(), tape.value(f).data());
        assert!(NeighborhoodIndex::from_rows(1, vec![3], 3).is_err());
    }

    #[test]
    fn interpolation_degenerate_cases() {
        let coarse = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let feat = Tensor::new([3, 1], vec![5.0, -1.0, 3.0]).unwrap();
        let out = interpolate_tensor(&coarse, &feat, &[[0.0; 3]], 3).unwrap();
        assert!((out.data()[0] - 5.0).abs() < 5e-3);

        let two = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let f2 = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let out = interpolate_tensor(&two, &f2, &[[0.0, 0.5, 0.0]], 2).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0]);
        assert!(interpolate_tensor(&two, &f2, &[[0.0; 3]], 3).is_err());
    }

    #[test]
    fn coincident_point_dominates_weights() {
        let coarse = [[0.0, 0.0, 0.0], [1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0]];
        let w = interpolation_weights(&coarse, &[[0.0; 3]], 3).unwrap();
        assert!(w.weights[0] >= 0.9999);
        let s: f64 = w.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
    }
}
