//! Independent loop implementations used as oracles, plus fixtures.
#![allow(dead_code)]

use mma_core::geometry::Point;
use mma_core::layers::ParamSet;
use mma_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn d2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Greedy max-min selection, recomputing every distance from scratch.
pub fn fps_oracle(points: &[Point], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| d2(&points[i], &points[c])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Full sort by (distance, index), first `k`.
pub fn knn_oracle(source: &[Point], queries: &[Point], k: usize) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = source.iter().enumerate().map(|(i, p)| (d2(p, q), i)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, i)| i).collect()
        })
        .collect()
}

/// Inverse-distance weighted average over the `k` nearest coarse points.
pub fn interpolation_oracle(coarse: &[Point], feats: &Tensor, fine: &[Point], k: usize) -> Vec<Vec<f64>> {
    let c = feats.shape()[1];
    knn_oracle(coarse, fine, k)
        .iter()
        .zip(fine)
        .map(|(nbrs, p)| {
            let w: Vec<f64> = nbrs.iter().map(|&j| 1.0 / (d2(p, &coarse[j]).sqrt() + 1e-8)).collect();
            let total: f64 = w.iter().sum();
            (0..c).map(|ch| nbrs.iter().zip(&w).map(|(&j, wj)| wj / total * feats.get(&[j, ch])).sum()).collect()
        })
        .collect()
}

pub fn param<'a>(params: &'a ParamSet, name: &str) -> &'a Tensor {
    &params[params.find(name).unwrap_or_else(|| panic!("no parameter {name}"))]
}

/// `x W + b` with `W` stored `(in, out)`.
pub fn affine(params: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
    let w = param(params, &format!("{name}.weight"));
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), n_in);
    let bias = params.find(&format!("{name}.bias")).map(|id| &params[id]);
    (0..n_out)
        .map(|o| {
            let mut s = bias.map_or(0.0, |b| b.data()[o]);
            for i in 0..n_in {
                s += x[i] * w.get(&[i, o]);
            }
            s
        })
        .collect()
}

pub fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn mlp2(params: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
    let h = relu(affine(params, &format!("{name}.0"), x));
    affine(params, &format!("{name}.1"), &h)
}

/// Per-channel vector attention of each query over its neighbour list:
/// `sum_j softmax_j(gamma(phi(x_i) - psi(x_j) + delta_ij)) * (alpha(x_j) + delta_ij)`
/// with `delta_ij = ape(p_i - p_j)`.
pub fn aaa_oracle(
    params: &ParamSet,
    name: &str,
    x: &Tensor,
    pos: &[Point],
    queries: &[usize],
    neighbors: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    queries
        .iter()
        .zip(neighbors)
        .map(|(&i, nbrs)| {
            let phi = affine(params, &format!("{name}.phi"), x.row(i));
            let mut logits = Vec::new();
            let mut values = Vec::new();
            for &j in nbrs {
                let rel = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1], pos[i][2] - pos[j][2]];
                let delta = mlp2(params, &format!("{name}.ape"), &rel);
                let psi = affine(params, &format!("{name}.psi"), x.row(j));
                let alpha = affine(params, &format!("{name}.alpha"), x.row(j));
                let pre: Vec<f64> = (0..phi.len()).map(|c| phi[c] - psi[c] + delta[c]).collect();
                logits.push(mlp2(params, &format!("{name}.gamma"), &pre));
                values.push((0..phi.len()).map(|c| alpha[c] + delta[c]).collect::<Vec<f64>>());
            }
            (0..phi.len())
                .map(|c| {
                    let mx = logits.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l[c] - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.iter().zip(&values).map(|(ej, v)| ej / z * v[c]).sum()
                })
                .collect()
        })
        .collect()
}

/// Row-softmax of `(d Wq + bq)(d Wk + bk)^T / sqrt(C_a)`.
pub fn fdc_attention_oracle(params: &ParamSet, name: &str, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let q: Vec<Vec<f64>> = d.iter().map(|r| affine(params, &format!("{name}.wq"), r)).collect();
    let k: Vec<Vec<f64>> = d.iter().map(|r| affine(params, &format!("{name}.wk"), r)).collect();
    let scale = (q[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let s: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale).collect();
            let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// `relu(((I - A) d) Wo) + y1` with `d = y2 - y1`.
pub fn fdc_oracle(params: &ParamSet, name: &str, y1: &Tensor, y2: &Tensor) -> Vec<Vec<f64>> {
    let n = y1.shape()[0];
    let c = y1.shape()[1];
    let d: Vec<Vec<f64>> = (0..n).map(|i| (0..c).map(|ch| y2.get(&[i, ch]) - y1.get(&[i, ch])).collect()).collect();
    let a = fdc_attention_oracle(params, name, &d);
    (0..n)
        .map(|i| {
            let core: Vec<f64> = (0..c).map(|ch| d[i][ch] - (0..n).map(|j| a[i][j] * d[j][ch]).sum::<f64>()).collect();
            let o = relu(affine(params, &format!("{name}.wo"), &core));
            o.iter().enumerate().map(|(ch, v)| v + y1.get(&[i, ch])).collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], t: &Tensor) -> f64 {
    let flat: Vec<f64> = a.iter().flatten().copied().collect();
    assert_eq!(flat.len(), t.numel());
    flat.iter().zip(t.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
