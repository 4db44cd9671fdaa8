//! Finite-difference gradient checks over every differentiable operation,
//! the building blocks, and small end-to-end models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AdjacencyAttention, SetAbstraction, StageConfig};
use crate::disparity::DisparityAttention;
use crate::error::Result;
use crate::geometry::{group_features, interpolation_weights, apply_interpolation, knn_query, Point};
use crate::layers::{Bound, Linear, Mlp2, ParamSet};
use crate::network::{Backbone, HeadKind, InitScheme, Model, ModelConfig};
use crate::scene::{ObjectRecord, PointCloud};
use crate::tensor::{grad_check_many, Tape, Tensor, Var};

use super::train::{scene_loss, TrainConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Entries bounded away from zero so ReLU kinks are never crossed.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn rand_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

/// Reduces any tensor to a scalar with fixed random weights, so every
/// output coordinate contributes a distinct gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p)?)
}

fn check<F>(name: &str, inputs: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: grad_check_many(f, inputs, GRADCHECK_EPS)?,
    })
}

fn params_check(name: &str, params: &ParamSet, f: impl Fn(&mut Tape, &Bound) -> Result<Var>) -> Result<GradCheck> {
    check(name, params.tensors(), |tape, vs| f(tape, &Bound::from_vars(vs.to_vec())))
}

/// Tensor operations.
pub fn operation_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let (a, b) = (rand_tensor(r, &[3, 4]), rand_tensor(r, &[4]));
    out.push(check("add (broadcast)", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 1)
    })?);
    out.push(check("sub (broadcast)", &[b.clone(), a.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 2)
    })?);
    let c = rand_tensor(r, &[2, 1, 4]);
    out.push(check("mul (broadcast)", &[a.clone(), c], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 3)
    })?);
    out.push(check("relu", &[off_zero(r, &[5, 3])], |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 4)
    })?);
    out.push(check("scale", std::slice::from_ref(&a), |t, v| {
        let y = t.scale(v[0], -1.7)?;
        project(t, y, 5)
    })?);
    out.push(check("matmul", &[rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 6)
    })?);
    out.push(check("matmul (batched)", &[rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[4, 5])], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 7)
    })?);
    let s = rand_tensor(r, &[3, 4, 2]);
    for axis in 0..3 {
        out.push(check(&format!("softmax axis {axis}"), std::slice::from_ref(&s), move |t, v| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, 8 + axis as u64)
        })?);
        out.push(check(&format!("sum_axis {axis}"), std::slice::from_ref(&s), move |t, v| {
            let y = t.sum_axis(v[0], axis)?;
            project(t, y, 11 + axis as u64)
        })?);
        out.push(check(&format!("max_axis {axis}"), std::slice::from_ref(&s), move |t, v| {
            let y = t.max_axis(v[0], axis)?;
            project(t, y, 14 + axis as u64)
        })?);
    }
    out.push(check("sum", std::slice::from_ref(&s), |t, v| Ok(t.sum(v[0])?))?);
    out.push(check("mean", std::slice::from_ref(&s), |t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y)?)
    })?);
    out.push(check("reshape", std::slice::from_ref(&s), |t, v| {
        let y = t.reshape(v[0], [4, 6])?;
        project(t, y, 17)
    })?);
    out.push(check("gather_rows", &[rand_tensor(r, &[4, 3])], |t, v| {
        let y = t.gather_rows(v[0], &[2, 0, 2, 3, 2])?;
        project(t, y, 18)
    })?);
    out.push(check("transpose", std::slice::from_ref(&s), |t, v| {
        let y = t.transpose(v[0])?;
        project(t, y, 19)
    })?);
    out.push(check("concat_lastdim", &[rand_tensor(r, &[3, 2]), rand_tensor(r, &[3, 4])], |t, v| {
        let y = t.concat_lastdim(v[0], v[1])?;
        project(t, y, 20)
    })?);
    out.push(check("slice_lastdim", &[rand_tensor(r, &[3, 5])], |t, v| {
        let y = t.slice_lastdim(v[0], 1, 4)?;
        project(t, y, 21)
    })?);
    out.push(check("cross_entropy", &[rand_tensor(r, &[4, 3])], |t, v| {
        Ok(t.cross_entropy(v[0], &[0, 2, 1, 2])?)
    })?);
    let targets: Vec<f64> = (0..6).map(|_| r.random_range(0.0..1.0)).collect();
    out.push(check("bce_with_logits", &[rand_tensor(r, &[6])], move |t, v| {
        Ok(t.bce_with_logits(v[0], &targets)?)
    })?);
    // differences well inside and well outside the quadratic zone
    let pred = Tensor::vector(vec![0.1, -0.05, 1.3, -2.0, 0.6, 0.0]).expect("vector");
    let target = vec![0.0, 0.02, 0.1, -0.5, 0.61, -0.9];
    out.push(check("smooth_l1", &[pred], move |t, v| Ok(t.smooth_l1(v[0], &target, 0.5)?))?);
    Ok(out)
}

/// Layers and attention blocks, with respect to parameters and inputs.
pub fn block_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let pos = rand_points(&mut rng, 12);
    let feats = rand_tensor(&mut rng, &[12, 3]);
    let index = knn_query(&pos, &pos[..5], 4)?;
    out.push(check("group_features", std::slice::from_ref(&feats), |t, v| {
        let y = group_features(t, v[0], &index)?;
        project(t, y, 30)
    })?);
    let interp = interpolation_weights(&pos[..5], &pos, 3)?;
    let coarse = rand_tensor(&mut rng, &[5, 3]);
    out.push(check("interpolate_features", &[coarse], |t, v| {
        let y = apply_interpolation(t, &interp, v[0])?;
        project(t, y, 31)
    })?);

    let mut ps = ParamSet::new();
    let lin = Linear::new(&mut ps, "lin", 3, 4, true, &mut rng);
    let mlp = Mlp2::new(&mut ps, "mlp", [4, 5, 2], &mut rng);
    let x = feats.clone();
    out.push(params_check("linear + mlp2 (params)", &ps, |t, b| {
        let xv = t.constant(x.clone());
        let h = lin.forward(t, b, xv)?;
        let y = mlp.forward(t, b, h)?;
        project(t, y, 32)
    })?);

    let mut ps = ParamSet::new();
    let cfg = StageConfig {
        in_channels: 3,
        out_channels: 4,
        k: 4,
        reduction_ratio: 0.5,
    };
    let aaa = AdjacencyAttention::new(&mut ps, "aaa", cfg, &mut rng)?;
    out.push(params_check("adjacency attention stage (params)", &ps, |t, b| {
        let xv = t.constant(feats.clone());
        let y = aaa.stage(t, b, xv, &pos)?.features;
        project(t, y, 33)
    })?);
    let bound_params = ps.clone();
    out.push(check("adjacency attention (features)", std::slice::from_ref(&feats), |t, v| {
        let b = bound_params.bind(t, false);
        let queries: Vec<usize> = (0..5).collect();
        let y = aaa.attend(t, &b, v[0], &pos, &queries, &index)?.features;
        project(t, y, 34)
    })?);

    let mut ps = ParamSet::new();
    let sa = SetAbstraction::new(&mut ps, "sa", cfg, &mut rng)?;
    out.push(params_check("set abstraction stage (params)", &ps, |t, b| {
        let xv = t.constant(feats.clone());
        let y = sa.stage(t, b, xv, &pos)?.features;
        project(t, y, 35)
    })?);

    let mut ps = ParamSet::new();
    let fdc = DisparityAttention::new(&mut ps, "fdc", 4, 3, &mut rng);
    let y1 = rand_tensor(&mut rng, &[6, 4]);
    let y2 = rand_tensor(&mut rng, &[6, 4]);
    out.push(params_check("disparity attention (params)", &ps, |t, b| {
        let (a, c) = (t.constant(y1.clone()), t.constant(y2.clone()));
        let y = fdc.forward(t, b, a, c)?;
        project(t, y, 36)
    })?);
    let fdc_params = ps.clone();
    out.push(check("disparity attention (inputs)", &[y1, y2], |t, v| {
        let b = fdc_params.bind(t, false);
        let y = fdc.forward(t, &b, v[0], v[1])?;
        project(t, y, 37)
    })?);
    Ok(out)
}

/// A random 32-point cloud with 8 feature channels, point labels and one
/// object.
pub fn tiny_cloud(seed: u64, classes: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 32;
    let positions = rand_points(&mut rng, n);
    let features = rand_tensor(&mut rng, &[n, 8]);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut object = ObjectRecord::new(1, [0.1, -0.2, 0.3], [1.0, 0.8, 1.2]);
    object.weak_label = [0.2, -0.1, 0.25];
    PointCloud {
        positions,
        features,
        point_labels: Some(labels),
        num_classes: classes,
        objects: vec![object],
    }
}

/// Config of the end-to-end check: 3 encoder and 2 decoder stages over
/// 8-channel input.
pub fn tiny_config(head: HeadKind, backbone: Backbone, seed: u64) -> ModelConfig {
    ModelConfig {
        backbone,
        num_aaa_stages: 3,
        num_fdc_stages: 2,
        widths: vec![6, 8, 10],
        neighbors: vec![4; 3],
        reduction_ratio: 0.5,
        in_channels: 8,
        attention_dim: 4,
        interpolation_k: 3,
        head,
        head_hidden: 6,
        num_classes: 3,
        init: InitScheme::Uniform,
        seed,
    }
}

/// End-to-end checks of the training loss with respect to every parameter.
pub fn network_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let cloud = tiny_cloud(seed, 3);
    let tc = TrainConfig::default();
    let mut out = Vec::new();
    for (backbone, head) in [
        (Backbone::Mma, HeadKind::Classification),
        (Backbone::Mma, HeadKind::Segmentation),
        (Backbone::Mma, HeadKind::WeakCenter),
        (Backbone::Mlp, HeadKind::WeakCenter),
    ] {
        let model = Model::build(&tiny_config(head, backbone, seed))?;
        out.push(params_check(&format!("network {backbone} {head}"), model.params(), |t, b| {
            scene_loss(&model, t, b, &cloud, &tc)
        })?);
    }
    Ok(out)
}

/// Every check, in order: operations, blocks, networks.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut all = operation_checks(seed)?;
    all.extend(block_checks(seed)?);
    all.extend(network_checks(seed)?);
    Ok(all)
}
