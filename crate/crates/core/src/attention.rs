//! Adjacency attention: a learned encoding of neighbour offsets and a
//! per-channel (vector) attention over each point's k-neighbourhood,
//! aggregated with a parallel pointwise branch.
//!
//! For a query `i` with neighbours `j`:
//!
//! ```text
//! delta_ij = theta(p_i - p_j)
//! logit_ij = gamma(phi(x_i) - psi(x_j) + delta_ij)
//! w_ij     = softmax_j(logit_ij)           (each channel separately)
//! y_i      = sum_j w_ij * (alpha(x_j) + delta_ij)
//! ```
//!
//! The same `delta_ij` feeds the logits and the values.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, group_features, knn_query, relative_positions, NeighborhoodIndex, Point};
use crate::layers::{Bound, Linear, Mlp2, ParamSet};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    pub reduction_ratio: f64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.k == 0 {
            return Err(Error::Config("stage channels and k must be >= 1".into()));
        }
        if !(self.reduction_ratio > 0.0 && self.reduction_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "reduction ratio {} outside (0, 1]",
                self.reduction_ratio
            )));
        }
        Ok(())
    }

    /// Number of centroids kept from `n` points.
    pub fn sampled_count(&self, n: usize) -> usize {
        ((n as f64 * self.reduction_ratio).ceil() as usize).clamp(1, n.max(1))
    }
}

/// Learned map from a neighbour offset `p_i - p_j` to a feature-width code.
#[derive(Debug, Clone)]
pub struct PositionEncoder {
    pub mlp: Mlp2,
}

impl PositionEncoder {
    pub fn new(params: &mut ParamSet, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp2::new(params, name, [3, width, width], rng),
        }
    }

    /// `(Q, k, 3)` offsets to `(Q, k, C')` codes.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, rel_pos: Var) -> Result<Var> {
        Ok(self.mlp.forward(tape, bound, rel_pos)?)
    }
}

/// Tape handles produced by [`AdjacencyAttention::attend`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `(Q, C')` aggregated features.
    pub features: Var,
    /// `(Q, k, C')` attention weights; each `(q, :, c)` column sums to one.
    pub weights: Var,
    /// `(Q, k, C')` position codes.
    pub delta: Var,
}

/// Result of one density-reducing stage.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub positions: Vec<Point>,
    /// `(M, C')`
    pub features: Var,
    /// Centroid indices into the stage input, in sampling order.
    pub sampled: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AdjacencyAttention {
    pub config: StageConfig,
    pub phi: Linear,
    pub psi: Linear,
    pub alpha: Linear,
    pub gamma: Mlp2,
    pub parallel_mlp: Linear,
    pub position: PositionEncoder,
}

impl AdjacencyAttention {
    pub fn new(params: &mut ParamSet, name: &str, config: StageConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c, co) = (config.in_channels, config.out_channels);
        let position = PositionEncoder::new(params, &format!("{name}.ape"), co, rng);
        let phi = Linear::new(params, &format!("{name}.phi"), c, co, true, rng);
        let psi = Linear::new(params, &format!("{name}.psi"), c, co, true, rng);
        let alpha = Linear::new(params, &format!("{name}.alpha"), c, co, true, rng);
        let gamma = Mlp2::new(params, &format!("{name}.gamma"), [co, co, co], rng);
        let parallel_mlp = Linear::new(params, &format!("{name}.mlp"), c, co, true, rng);
        Ok(Self {
            config,
            phi,
            psi,
            alpha,
            gamma,
            parallel_mlp,
            position,
        })
    }

    pub fn param_count(&self) -> usize {
        self.phi.param_count()
            + self.psi.param_count()
            + self.alpha.param_count()
            + self.gamma.param_count()
            + self.parallel_mlp.param_count()
            + self.position.mlp.param_count()
    }

    /// Vector attention of each query over its neighbourhood.
    ///
    /// `x` is `(N, C)` over the source points `pos`; `queries` are source
    /// indices, one per row of `index`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        pos: &[Point],
        queries: &[usize],
        index: &NeighborhoodIndex,
    ) -> Result<AttentionOutput> {
        let q = queries.len();
        if index.query_count() != q {
            return Err(Error::Data(format!(
                "{} neighbourhood rows for {q} queries",
                index.query_count()
            )));
        }
        let co = self.config.out_channels;
        let query_pos: Vec<Point> = queries.iter().map(|&i| pos[i]).collect();
        let rel = tape.constant(relative_positions(pos, &query_pos, index));
        let delta = self.position.encode(tape, bound, rel)?;

        let x_q = tape.gather_rows(x, queries)?;
        let phi_q = self.phi.forward(tape, bound, x_q)?;
        let phi_q = tape.reshape(phi_q, [q, 1, co])?;
        let psi_all = self.psi.forward(tape, bound, x)?;
        let psi_n = group_features(tape, psi_all, index)?;
        let alpha_all = self.alpha.forward(tape, bound, x)?;
        let alpha_n = group_features(tape, alpha_all, index)?;

        let diff = tape.sub(phi_q, psi_n)?;
        let pre = tape.add(diff, delta)?;
        let logits = self.gamma.forward(tape, bound, pre)?;
        let weights = tape.softmax(logits, 1)?;
        let values = tape.add(alpha_n, delta)?;
        let weighted = tape.mul(weights, values)?;
        let features = tape.sum_axis(weighted, 1)?;
        debug_assert_eq!(tape.shape(features), &[q, co]);
        Ok(AttentionOutput {
            features,
            weights,
            delta,
        })
    }

    /// Samples centroids, attends over their neighbourhoods in the
    /// pre-sampling set, and sums with the parallel branch:
    /// `relu(attention + mlp(x_centroid))`.
    pub fn stage(&self, tape: &mut Tape, bound: &Bound, x: Var, pos: &[Point]) -> Result<StageOutput> {
        let n = pos.len();
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[0] != n {
            return Err(Error::Data(format!("features {shape:?} for {n} positions")));
        }
        if shape[1] != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: shape[1],
            });
        }
        let m = self.config.sampled_count(n);
        let sampled = farthest_point_sample(pos, m, 0)?;
        let positions: Vec<Point> = sampled.iter().map(|&i| pos[i]).collect();
        let index = knn_query(pos, &positions, self.config.k.min(n))?;
        let attn = self.attend(tape, bound, x, pos, &sampled, &index)?;
        let x_c = tape.gather_rows(x, &sampled)?;
        let parallel = self.parallel_mlp.forward(tape, bound, x_c)?;
        let sum = tape.add(attn.features, parallel)?;
        let features = tape.relu(sum)?;
        Ok(StageOutput {
            positions,
            features,
            sampled,
        })
    }
}

/// Plain set-abstraction stage used by the attention-free baseline:
/// `relu(max_j mlp([p_i - p_j, x_j]))`.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub config: StageConfig,
    pub mlp: Mlp2,
}

impl SetAbstraction {
    pub fn new(params: &mut ParamSet, name: &str, config: StageConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp2::new(
            params,
            &format!("{name}.mlp"),
            [config.in_channels + 3, config.out_channels, config.out_channels],
            rng,
        );
        Ok(Self { config, mlp })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn stage(&self, tape: &mut Tape, bound: &Bound, x: Var, pos: &[Point]) -> Result<StageOutput> {
        let n = pos.len();
        let c = self.config.in_channels;
        if tape.shape(x) != [n, c] {
            return Err(Error::ChannelMismatch {
                expected: c,
                got: tape.shape(x).get(1).copied().unwrap_or(0),
            });
        }
        let m = self.config.sampled_count(n);
        let sampled = farthest_point_sample(pos, m, 0)?;
        let positions: Vec<Point> = sampled.iter().map(|&i| pos[i]).collect();
        let index = knn_query(pos, &positions, self.config.k.min(n))?;
        let rel = tape.constant(relative_positions(pos, &positions, &index));
        let grouped = group_features(tape, x, &index)?;
        let input = tape.concat_lastdim(rel, grouped)?;
        let h = self.mlp.forward(tape, bound, input)?;
        let pooled = tape.max_axis(h, 1)?;
        let features = tape.relu(pooled)?;
        Ok(StageOutput {
            positions,
            features,
            sampled,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(c: usize, co: usize, k: usize, ratio: f64) -> (ParamSet, AdjacencyAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut ps = ParamSet::new();
        let cfg = StageConfig {
            in_channels: c,
            out_channels: co,
            k,
            reduction_ratio: ratio,
        };
        let b = AdjacencyAttention::new(&mut ps, "aaa", cfg, &mut rng).unwrap();
        (ps, b)
    }

    fn zero_position_encoder(ps: &mut ParamSet, b: &AdjacencyAttention) {
        for lin in [&b.position.mlp.first, &b.position.mlp.second] {
            for id in [Some(lin.weight()), lin.bias()].into_iter().flatten() {
                let idx = ps.iter().position(|(n, _)| n == ps.name(id)).unwrap();
                ps.tensors_mut()[idx].data_mut().fill(0.0);
            }
        }
    }

    #[test]
    fn zero_encoder_gives_zero_delta() {
        let (mut ps, b) = block(2, 4, 2, 1.0);
        zero_position_encoder(&mut ps, &b);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let rel = tape.constant(Tensor::new([1, 2, 3], vec![0.3, -1.0, 2.0, 5.0, 0.1, 0.0]).unwrap());
        let d = b.position.encode(&mut tape, &bound, rel).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_self_neighbour_collapses_to_alpha() {
        let (mut ps, b) = block(3, 4, 1, 1.0);
        zero_position_encoder(&mut ps, &b);
        let pos = [[0.0, 1.0, 2.0], [1.0, 1.0, 0.0]];
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let x = tape.constant(Tensor::new([2, 3], vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap());
        let idx = NeighborhoodIndex::from_rows(1, vec![0, 1], 2).unwrap();
        let out = b.attend(&mut tape, &bound, x, &pos, &[0, 1], &idx).unwrap();
        let alpha = b.alpha.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(out.features), tape.value(alpha));
        assert!(tape.value(out.weights).data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn identical_neighbours_split_evenly() {
        let (ps, b) = block(2, 3, 2, 1.0);
        // two coincident source points with equal features; query is a third point
        let pos = [[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [1.0, 0.5, 0.0]];
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let x = tape.constant(Tensor::new([3, 2], vec![0.7, -0.2, 0.4, 0.9, 0.4, 0.9]).unwrap());
        let pair = NeighborhoodIndex::from_rows(2, vec![1, 2], 3).unwrap();
        let two = b.attend(&mut tape, &bound, x, &pos, &[0], &pair).unwrap();
        let single = NeighborhoodIndex::from_rows(1, vec![1], 3).unwrap();
        let one = b.attend(&mut tape, &bound, x, &pos, &[0], &single).unwrap();
        assert!(tape.value(two.weights).data().iter().all(|&w| w == 0.5));
        assert!(tape.value(two.features).max_abs_diff(tape.value(one.features)) < 1e-15);
    }

    #[test]
    fn single_point_stage() {
        let (ps, b) = block(2, 4, 16, 0.5);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let x = tape.constant(Tensor::new([1, 2], vec![0.5, -0.5]).unwrap());
        let out = b.stage(&mut tape, &bound, x, &[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(out.sampled, vec![0]);
        assert_eq!(tape.shape(out.features), &[1, 4]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let (ps, b) = block(2, 4, 2, 0.5);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros([2, 3]));
        let r = b.stage(&mut tape, &bound, x, &[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(r, Err(Error::ChannelMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn ratio_validation() {
        let cfg = StageConfig {
            in_channels: 1,
            out_channels: 1,
            k: 1,
            reduction_ratio: 0.0,
        };
        assert!(cfg.validate().is_err());
        let ok = StageConfig {
            reduction_ratio: 0.5,
            ..cfg
        };
        assert_eq!(ok.sampled_count(7), 4);
        assert_eq!(ok.sampled_count(1), 1);
    }
}
