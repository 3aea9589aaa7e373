//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerseg::backends::AttentionTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-stochastic attention from softmax over uniform logits.
pub fn random_attention(r: &mut ChaCha8Rng, layers: usize, heads: usize, n: usize) -> AttentionTensor {
    let ls = (0..layers)
        .map(|_| {
            (0..heads)
                .map(|_| {
                    let mut a = Array2::from_shape_fn((n, n), |_| (r.random::<f64>() * 6.0 - 3.0).exp());
                    for mut row in a.rows_mut() {
                        let s = row.sum();
                        row.mapv_inplace(|v| v / s);
                    }
                    a
                })
                .collect()
        })
        .collect();
    AttentionTensor::new(ls).unwrap()
}

fn to_vecs(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `Ã_L · … · Ã_{L0}` with `Ã = ½(mean_h A_h + I)`, by explicit loops.
pub fn rollout_oracle(att: &AttentionTensor, range: (usize, usize)) -> Vec<Vec<f64>> {
    let n = att.seq_len();
    let mut r: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for l in range.0..=range.1 {
        let heads: Vec<Vec<Vec<f64>>> = att.layer(l).iter().map(to_vecs).collect();
        let mut t = vec![vec![0.0; n]; n];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let mean = heads.iter().map(|h| h[i][j]).sum::<f64>() / heads.len() as f64;
                *v = 0.5 * (mean + f64::from(u8::from(i == j)));
            }
        }
        r = matmul(&t, &r);
    }
    r
}

pub fn brute_iou(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b.iter()) {
        let (p, q) = (*x >= 0.5, *y >= 0.5);
        inter += usize::from(p && q);
        uni += usize::from(p || q);
    }
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}

fn brute_boundary(m: &Array2<f64>) -> Vec<(i64, i64)> {
    let (h, w) = m.dim();
    let at = |r: i64, c: i64| -> Option<bool> {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            None
        } else {
            Some(m[[r as usize, c as usize]] >= 0.5)
        }
    };
    let mut out = Vec::new();
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            if at(r, c) == Some(true)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dr, dc)| at(r + dr, c + dc) == Some(false))
            {
                out.push((r, c));
            }
        }
    }
    out
}

/// Boundary F by pairwise distance search instead of dilation.
pub fn brute_f(p: &Array2<f64>, g: &Array2<f64>, tol: usize) -> f64 {
    let (bp, bg) = (brute_boundary(p), brute_boundary(g));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let t2 = (tol * tol) as i64;
    let matched = |a: &[(i64, i64)], b: &[(i64, i64)]| {
        a.iter()
            .filter(|(r, c)| b.iter().any(|(r2, c2)| (r - r2).pow(2) + (c - c2).pow(2) <= t2))
            .count() as f64
    };
    let precision = matched(&bp, &bg) / bp.len() as f64;
    let recall = matched(&bg, &bp) / bg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Greedy suppression written as "keep unless a better-ranked kept mask
/// overlaps", ranking by (priority desc, order asc, index asc).
pub fn reference_nms(masks: &[Array2<f64>], priorities: &[f64], order: &[usize], thresh: f64) -> Vec<usize> {
    let n = masks.len();
    let better = |a: usize, b: usize| {
        priorities[a] > priorities[b]
            || (priorities[a] == priorities[b] && (order[a] < order[b] || (order[a] == order[b] && a < b)))
    };
    let mut rank: Vec<usize> = Vec::new();
    for i in 0..n {
        let pos = rank.iter().position(|&j| better(i, j)).unwrap_or(rank.len());
        rank.insert(pos, i);
    }
    let mut kept = Vec::new();
    for &i in &rank {
        if kept.iter().all(|&k| brute_iou(&masks[i], &masks[k]) <= thresh) {
            kept.push(i);
        }
    }
    kept
}
