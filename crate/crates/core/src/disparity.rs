//! Feature disparity attention between decoder features and cached encoder
//! features of the same density level.
//!
//! With `d = y2 - y1` and a row-stochastic attention matrix `A` built from
//! `d`, the block computes `relu(W_o((I - A) d)) + y1`. Because each row of
//! `A` sums to one, `I - A` annihilates point-constant signals, and since
//! `W_o` has no bias, equal inputs pass `y1` through unchanged.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Bound, Linear, ParamSet};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone)]
pub struct DisparityAttention {
    pub query: Linear,
    pub key: Linear,
    /// Bias-free output projection.
    pub output: Linear,
    channels: usize,
    attention_dim: usize,
}

/// Intermediate handles of one [`DisparityAttention::forward_parts`] call.
#[derive(Debug, Clone, Copy)]
pub struct DisparityOutput {
    /// `y2 - y1`
    pub disparity: Var,
    /// `(N, N)` row-stochastic attention.
    pub attention: Var,
    /// `(I - A) d`
    pub core: Var,
    pub output: Var,
}

impl DisparityAttention {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize, attention_dim: usize, rng: &mut impl Rng) -> Self {
        let query = Linear::new(params, &format!("{name}.wq"), channels, attention_dim, true, rng);
        let key = Linear::new(params, &format!("{name}.wk"), channels, attention_dim, true, rng);
        let output = Linear::new(params, &format!("{name}.wo"), channels, channels, false, rng);
        Self {
            query,
            key,
            output,
            channels,
            attention_dim,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.output.param_count()
    }

    /// `softmax_rows((d Wq + bq)(d Wk + bk)^T / sqrt(C_a))`.
    pub fn attention_matrix(&self, tape: &mut Tape, bound: &Bound, d: Var) -> Result<Var> {
        let q = self.query.forward(tape, bound, d)?;
        let k = self.key.forward(tape, bound, d)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let scaled = tape.scale(logits, 1.0 / (self.attention_dim as f64).sqrt())?;
        Ok(tape.softmax_lastdim(scaled)?)
    }

    pub fn forward_parts(&self, tape: &mut Tape, bound: &Bound, y1: Var, y2: Var) -> Result<DisparityOutput> {
        let (s1, s2) = (tape.shape(y1), tape.shape(y2));
        if s1 != s2 || s1.len() != 2 || s1[1] != self.channels {
            return Err(Error::Data(format!(
                "disparity inputs {s1:?} and {s2:?} for {} channels",
                self.channels
            )));
        }
        let disparity = tape.sub(y2, y1)?;
        let attention = self.attention_matrix(tape, bound, disparity)?;
        let mixed = tape.matmul(attention, disparity)?;
        let core = tape.sub(disparity, mixed)?;
        let projected = self.output.forward(tape, bound, core)?;
        let activated = tape.relu(projected)?;
        let output = tape.add(activated, y1)?;
        Ok(DisparityOutput {
            disparity,
            attention,
            core,
            output,
        })
    }

    /// `relu(W_o((I - A)(y2 - y1))) + y1`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, y1: Var, y2: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, bound, y1, y2)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(c: usize, ca: usize) -> (ParamSet, DisparityAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let b = DisparityAttention::new(&mut ps, "fdc", c, ca, &mut rng);
        (ps, b)
    }

    #[test]
    fn output_projection_has_no_bias() {
        let (ps, b) = block(4, 2);
        assert!(b.output.bias().is_none());
        assert_eq!(ps.scalar_count(), 2 * (4 * 2 + 2) + 16);
    }

    #[test]
    fn singleton_attention_is_one_and_passes_y1() {
        let (ps, b) = block(3, 2);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let y1 = tape.constant(Tensor::new([1, 3], vec![0.5, -1.0, 2.0]).unwrap());
        let y2 = tape.constant(Tensor::new([1, 3], vec![9.0, 4.0, -3.0]).unwrap());
        let parts = b.forward_parts(&mut tape, &bound, y1, y2).unwrap();
        assert_eq!(tape.value(parts.attention).data(), &[1.0]);
        assert_eq!(tape.value(parts.output), tape.value(y1));
    }

    #[test]
    fn zero_disparity_with_zero_biases_is_uniform() {
        let (mut ps, b) = block(2, 2);
        for id in [b.query.bias().unwrap(), b.key.bias().unwrap()] {
            let name = ps.name(id).to_string();
            let idx = ps.iter().position(|(n, _)| n == name).unwrap();
            ps.tensors_mut()[idx].data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let d = tape.constant(Tensor::zeros([4, 2]));
        let a = b.attention_matrix(&mut tape, &bound, d).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn equal_inputs_pass_through_bit_exactly() {
        let (ps, b) = block(3, 2);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let y = tape.constant(Tensor::new([2, 3], vec![0.1, -0.2, 0.3, 1e-3, 7.0, -0.0]).unwrap());
        let out = b.forward(&mut tape, &bound, y, y).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        // -0.0 + 0.0 is +0.0, so compare numerically for that slot
        assert_eq!(tape.value(out).data(), tape.value(y).data());
        assert_eq!(bits(tape.value(out))[..5], bits(tape.value(y))[..5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (ps, b) = block(3, 2);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let y1 = tape.constant(Tensor::zeros([2, 3]));
        let y2 = tape.constant(Tensor::zeros([3, 3]));
        assert!(b.forward(&mut tape, &bound, y1, y2).is_err());
    }
}
