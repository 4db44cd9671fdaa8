//! Every building block against an independent loop implementation on
//! randomized instances.

mod common;

use common::*;
use mma_core::attention::{AdjacencyAttention, StageConfig};
use mma_core::disparity::DisparityAttention;
use mma_core::geometry::{farthest_point_sample, interpolate_tensor, knn_query, Point};
use mma_core::layers::ParamSet;
use mma_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 100;
const TOL: f64 = 1e-10;

fn rng(case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x0a11_0000 + case)
}

/// Points on a coarse grid so that exact distance ties occur.
fn grid_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random_range(0..3) as f64, rng.random_range(0..3) as f64, rng.random_range(0..3) as f64])
        .collect()
}

#[test]
fn fps_matches_greedy_oracle() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let n = r.random_range(1..48);
        let pts = if case % 4 == 0 { grid_points(&mut r, n) } else { random_points(&mut r, n) };
        let m = r.random_range(1..=n);
        let start = r.random_range(0..n);
        let got = farthest_point_sample(&pts, m, start).unwrap();
        assert_eq!(got, fps_oracle(&pts, m, start), "case {case}");
    }
}

#[test]
fn knn_matches_full_sort() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let s = r.random_range(1..40);
        let q = r.random_range(1..20);
        let (src, qs) = if case % 3 == 0 {
            (grid_points(&mut r, s), grid_points(&mut r, q))
        } else {
            (random_points(&mut r, s), random_points(&mut r, q))
        };
        let k = r.random_range(1..=s);
        let idx = knn_query(&src, &qs, k).unwrap();
        let want = knn_oracle(&src, &qs, k);
        for (qi, row) in want.iter().enumerate() {
            assert_eq!(idx.row(qi), row.as_slice(), "case {case} query {qi}");
        }
    }
}

#[test]
fn interpolation_matches_formula() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let m = r.random_range(1..24);
        let n = r.random_range(1..40);
        let c = r.random_range(1..5);
        let coarse = random_points(&mut r, m);
        let fine = random_points(&mut r, n);
        let feats = random_tensor(&mut r, &[m, c]);
        let k = r.random_range(1..=m.min(4));
        let got = interpolate_tensor(&coarse, &feats, &fine, k).unwrap();
        let want = interpolation_oracle(&coarse, &feats, &fine, k);
        assert!(max_abs_diff(&want, &got) < TOL, "case {case}");
    }
}

#[test]
fn adjacency_attention_matches_loop_oracle() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let n = r.random_range(2..14);
        let cfg = StageConfig {
            in_channels: r.random_range(1..5),
            out_channels: r.random_range(1..6),
            k: r.random_range(1..=n),
            reduction_ratio: [0.25, 0.5, 1.0][r.random_range(0..3)],
        };
        let mut params = ParamSet::new();
        let block = AdjacencyAttention::new(&mut params, "enc", cfg, &mut r).unwrap();
        let pos = random_points(&mut r, n);
        let x = random_tensor(&mut r, &[n, cfg.in_channels]);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let queries: Vec<usize> = (0..r.random_range(1..=n)).map(|_| r.random_range(0..n)).collect();
        let qpos: Vec<Point> = queries.iter().map(|&i| pos[i]).collect();
        let index = knn_query(&pos, &qpos, cfg.k).unwrap();
        let rows: Vec<Vec<usize>> = (0..queries.len()).map(|q| index.row(q).to_vec()).collect();
        let out = block.attend(&mut tape, &bound, xv, &pos, &queries, &index).unwrap();
        let want = aaa_oracle(&params, "enc", &x, &pos, &queries, &rows);
        assert!(max_abs_diff(&want, tape.value(out.features)) < TOL, "attend case {case}");

        // Full stage: FPS centroids, kNN in the input set, relu(attention + mlp).
        let stage = block.stage(&mut tape, &bound, xv, &pos).unwrap();
        let m = cfg.sampled_count(n);
        let cent = fps_oracle(&pos, m, 0);
        assert_eq!(stage.sampled, cent);
        let cpos: Vec<Point> = cent.iter().map(|&i| pos[i]).collect();
        let nbrs = knn_oracle(&pos, &cpos, cfg.k);
        let attn = aaa_oracle(&params, "enc", &x, &pos, &cent, &nbrs);
        let want: Vec<Vec<f64>> = cent
            .iter()
            .zip(attn)
            .map(|(&i, a)| {
                let p = affine(&params, "enc.mlp", x.row(i));
                relu(a.iter().zip(p).map(|(u, v)| u + v).collect())
            })
            .collect();
        assert!(max_abs_diff(&want, tape.value(stage.features)) < TOL, "stage case {case}");
    }
}

#[test]
fn disparity_attention_matches_loop_oracle() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let n = r.random_range(1..12);
        let c = r.random_range(1..6);
        let ca = r.random_range(1..5);
        let mut params = ParamSet::new();
        let block = DisparityAttention::new(&mut params, "fdc", c, ca, &mut r);
        let y1 = random_tensor(&mut r, &[n, c]);
        let y2 = random_tensor(&mut r, &[n, c]);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let (a, b) = (tape.constant(y1.clone()), tape.constant(y2.clone()));
        let out = block.forward_parts(&mut tape, &bound, a, b).unwrap();
        let want = fdc_oracle(&params, "fdc", &y1, &y2);
        assert!(max_abs_diff(&want, tape.value(out.output)) < TOL, "case {case}");
        let d: Vec<Vec<f64>> = (0..n).map(|i| (0..c).map(|ch| y2.get(&[i, ch]) - y1.get(&[i, ch])).collect()).collect();
        let att = fdc_attention_oracle(&params, "fdc", &d);
        assert!(max_abs_diff(&att, tape.value(out.attention)) < TOL, "attention case {case}");
    }
}

#[test]
fn matmul_matches_triple_loop() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let (b, m, k, n) = (r.random_range(1..4), r.random_range(1..7), r.random_range(1..7), r.random_range(1..7));
        let x = random_tensor(&mut r, &[b, m, k]);
        let y = random_tensor(&mut r, &[b, k, n]);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let z = tape.matmul(xv, yv).unwrap();
        let mut want = Vec::new();
        for bi in 0..b {
            for i in 0..m {
                want.push((0..n).map(|j| (0..k).map(|t| x.get(&[bi, i, t]) * y.get(&[bi, t, j])).sum()).collect());
            }
        }
        assert!(max_abs_diff(&want, tape.value(z)) < TOL, "case {case}");
    }
}

#[test]
fn broadcast_binary_matches_index_loop() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let (a, b, c) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let x = random_tensor(&mut r, &[a, 1, c]);
        let y = random_tensor(&mut r, &[b, c]);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let sum = tape.add(xv, yv).unwrap();
        let diff = tape.sub(xv, yv).unwrap();
        let prod = tape.mul(xv, yv).unwrap();
        for (var, f) in [
            (sum, (|u: f64, v: f64| u + v) as fn(f64, f64) -> f64),
            (diff, |u, v| u - v),
            (prod, |u, v| u * v),
        ] {
            let t = tape.value(var);
            assert_eq!(t.shape(), &[a, b, c]);
            let mut want = Vec::new();
            for i in 0..a {
                for j in 0..b {
                    want.push((0..c).map(|ch| f(x.get(&[i, 0, ch]), y.get(&[j, ch]))).collect());
                }
            }
            assert!(max_abs_diff(&want, t) < TOL, "case {case}");
        }
    }
}

#[test]
fn softmax_matches_direct_formula() {
    for case in 0..INSTANCES {
        let mut r = rng(case);
        let (a, b, c) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));
        let mut x = random_tensor(&mut r, &[a, b, c]);
        x.data_mut().iter_mut().for_each(|v| *v *= 20.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = tape.softmax(xv, 1).unwrap();
        let mut want = Vec::new();
        for i in 0..a {
            for j in 0..b {
                want.push(
                    (0..c)
                        .map(|ch| {
                            let z: f64 = (0..b).map(|t| (x.get(&[i, t, ch]) - x.get(&[i, j, ch])).exp()).sum();
                            1.0 / z
                        })
                        .collect(),
                );
            }
        }
        assert!(max_abs_diff(&want, tape.value(s)) < TOL, "case {case}");
    }
}

#[test]
fn oracle_sanity_on_a_hand_case() {
    // Three collinear points: from 0 the farthest is 2, then 1.
    let pts: Vec<Point> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    assert_eq!(fps_oracle(&pts, 3, 0), vec![0, 2, 1]);
    assert_eq!(knn_oracle(&pts, &[[0.9, 0.0, 0.0]], 2), vec![vec![1, 0]]);
    let f = Tensor::new([2, 1], vec![2.0, 4.0]).unwrap();
    let v = interpolation_oracle(&pts[..2], &f, &[[0.25, 0.0, 0.0]], 2);
    // weights 1/0.25 and 1/0.75, normalized to 3/4 and 1/4.
    assert!((v[0][0] - 2.5).abs() < 1e-7);
}
