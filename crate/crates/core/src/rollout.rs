//! Attention rollout and the dual-granularity grounding maps.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::backends::{
    AttentionGrad, AttentionTensor, BackendForwardResult, ForwardRequest, LanguageBackend, SoftPlacement,
    ROW_SUM_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::prompting::SoftPromptBank;
use crate::video::Video;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Inclusive layer range `[L0, L]`; `None` uses the range the backend declares.
    pub layers: Option<(usize, usize)>,
    pub frame_keyframes: usize,
    pub video_keyframes: usize,
    pub video_downsample: usize,
    pub soft_placement: SoftPlacement,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            layers: None,
            frame_keyframes: 16,
            video_keyframes: 8,
            video_downsample: 2,
            soft_placement: SoftPlacement::Prepend,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_keyframes == 0 || self.video_keyframes == 0 {
            return Err(Error::Config("keyframe counts must be at least 1".into()));
        }
        if self.video_keyframes > self.frame_keyframes {
            return Err(Error::Config(format!(
                "video_keyframes {} exceeds frame_keyframes {}",
                self.video_keyframes, self.frame_keyframes
            )));
        }
        if self.video_downsample == 0 {
            return Err(Error::Config("video_downsample must be at least 1".into()));
        }
        if let Some((a, b)) = self.layers {
            if a > b {
                return Err(Error::Config(format!("rollout layers {a}..={b} are reversed")));
            }
        }
        Ok(())
    }

    /// Layer range to use for `result`.
    pub fn range_for(&self, result: &BackendForwardResult) -> (usize, usize) {
        self.layers.unwrap_or(result.rollout_layers)
    }
}

/// `½(mean_h A_h + I)`.
pub fn layer_transition(heads: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = heads.first().ok_or_else(|| Error::contract("layer has no heads"))?;
    let n = first.nrows();
    if heads.iter().any(|a| a.dim() != (n, n)) {
        return Err(Error::contract("head matrices must be square and equally sized"));
    }
    let mut t = Array2::<f64>::eye(n);
    let w = 1.0 / heads.len() as f64;
    for a in heads {
        t.scaled_add(w, a);
    }
    t.mapv_inplace(|v| 0.5 * v);
    Ok(t)
}

fn check_range(att: &AttentionTensor, (l0, l1): (usize, usize)) -> Result<()> {
    if l0 > l1 || l1 >= att.num_layers() {
        return Err(Error::contract(format!(
            "rollout layers {l0}..={l1} outside 0..{}",
            att.num_layers()
        )));
    }
    Ok(())
}

/// `R = Ã^(L) ⋯ Ã^(L0)`, later layers on the left.
pub fn rollout(att: &AttentionTensor, range: (usize, usize)) -> Result<Array2<f64>> {
    check_range(att, range)?;
    let mut r = layer_transition(att.layer(range.0))?;
    for l in range.0 + 1..=range.1 {
        r = layer_transition(att.layer(l))?.dot(&r);
    }
    Ok(r)
}

/// Row `i_q` of [`rollout`], computed by vector-matrix products only.
pub fn rollout_row(att: &AttentionTensor, range: (usize, usize), i_q: usize) -> Result<Array1<f64>> {
    check_range(att, range)?;
    let n = att.seq_len();
    if i_q >= n {
        return Err(Error::contract(format!("query index {i_q} outside sequence of {n}")));
    }
    let mut r = Array1::zeros(n);
    r[i_q] = 1.0;
    for l in (range.0..=range.1).rev() {
        r = r.dot(&layer_transition(att.layer(l))?);
    }
    Ok(r)
}

/// Gradient with respect to every captured attention matrix of an objective
/// whose gradient with respect to [`rollout_row`] is `grad`.
pub fn rollout_row_vjp(
    att: &AttentionTensor,
    range: (usize, usize),
    i_q: usize,
    grad: ArrayView1<'_, f64>,
) -> Result<AttentionGrad> {
    check_range(att, range)?;
    let n = att.seq_len();
    if grad.len() != n || i_q >= n {
        return Err(Error::contract("rollout gradient does not match the sequence"));
    }
    let transitions = (range.0..=range.1)
        .map(|l| layer_transition(att.layer(l)))
        .collect::<Result<Vec<_>>>()?;
    // forward rows: rows[k] multiplies into transitions[k]
    let mut rows = vec![Array1::zeros(n); transitions.len()];
    let mut r = Array1::zeros(n);
    r[i_q] = 1.0;
    for k in (0..transitions.len()).rev() {
        rows[k] = r.clone();
        r = r.dot(&transitions[k]);
    }
    let mut out: AttentionGrad = vec![None; att.num_layers()];
    let heads = att.heads();
    let mut g = grad.to_owned();
    for (k, t) in transitions.iter().enumerate() {
        let scale = 0.5 / heads as f64;
        let outer = Array2::from_shape_fn((n, n), |(i, j)| rows[k][i] * g[j] * scale);
        out[range.0 + k] = Some(vec![outer; heads]);
        g = t.dot(&g);
    }
    Ok(out)
}

/// `R[i_q, visual]` in visual-token order.
pub fn extract_query_attention(r: &Array2<f64>, i_q: usize, visual: &[usize]) -> Result<Array1<f64>> {
    let n = r.ncols();
    if i_q >= r.nrows() || visual.iter().any(|&v| v >= n) {
        return Err(Error::contract("query or visual index outside the rollout matrix"));
    }
    Ok(visual.iter().map(|&v| r[[i_q, v]]).collect())
}

/// `round(linspace(0, T-1, k))` with duplicates removed and `k` clamped to `T`.
pub fn keyframes(total: usize, k: usize) -> Vec<usize> {
    let k = k.min(total);
    if k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![0];
    }
    let step = (total - 1) as f64 / (k - 1) as f64;
    let mut out: Vec<usize> = (0..k).map(|i| (i as f64 * step).round() as usize).collect();
    out.dedup();
    out
}

/// Reshapes the query's rollout row over visual tokens into `frames × h × w`.
pub fn query_maps(result: &BackendForwardResult, range: (usize, usize)) -> Result<Array3<f64>> {
    let row = rollout_row(&result.attention, range, result.query_index)?;
    let layout = result.tokens.visual_layout;
    let vis: Vec<f64> = result.tokens.visual_indices().iter().map(|&i| row[i]).collect();
    Array3::from_shape_vec((layout.frames, layout.height, layout.width), vis)
        .map_err(|e| Error::contract(e.to_string()))
}

/// Attention maps of one query at both granularities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingMaps {
    /// `T_f × H_v × W_v`.
    pub frame_maps: Array3<f64>,
    /// `T_v × H̃_v × W̃_v`.
    pub video_map: Array3<f64>,
    pub frame_keyframes: Vec<usize>,
    pub video_keyframes: Vec<usize>,
    /// Query token index of each frame-level forward.
    pub frame_query_indices: Vec<usize>,
}

impl GroundingMaps {
    pub fn validate(&self) -> Result<()> {
        check_stack(&self.frame_maps, &self.frame_keyframes, "frame")?;
        check_stack(&self.video_map, &self.video_keyframes, "video")
    }
}

fn check_stack(maps: &Array3<f64>, keys: &[usize], what: &str) -> Result<()> {
    if maps.len_of(Axis(0)) != keys.len() {
        return Err(Error::contract(format!("{what} maps and keyframes disagree in length")));
    }
    if keys.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract(format!("{what} keyframes are not strictly increasing")));
    }
    for (t, m) in maps.outer_iter().enumerate() {
        if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::contract(format!("{what} map {t} has negative or non-finite entries")));
        }
        if m.sum() > 1.0 + ROW_SUM_TOLERANCE {
            return Err(Error::contract(format!("{what} map {t} carries mass {} > 1", m.sum())));
        }
    }
    Ok(())
}

fn soft_view(bank: Option<&SoftPromptBank>) -> Option<ndarray::ArrayView2<'_, f64>> {
    bank.map(|b| b.embeddings.view())
}

/// Per-frame maps at the `T_f` keyframes, plus the keyframes and query indices.
pub fn compute_frame_maps(
    video: &Video,
    prompt: &str,
    bank: Option<&SoftPromptBank>,
    backend: &dyn LanguageBackend,
    cfg: &RolloutConfig,
) -> Result<(Array3<f64>, Vec<usize>, Vec<usize>)> {
    let keys = keyframes(video.len(), cfg.frame_keyframes);
    let mut maps = Vec::with_capacity(keys.len());
    let mut iqs = Vec::with_capacity(keys.len());
    for &t in &keys {
        let frames = std::slice::from_ref(video.frame(t));
        let one = || -> Result<(Array3<f64>, usize)> {
            let req = ForwardRequest::new(prompt, frames).with_soft_prompts(soft_view(bank), cfg.soft_placement);
            let res = backend.forward(&req)?;
            Ok((query_maps(&res, cfg.range_for(&res))?, res.query_index))
        };
        let (m, iq) = one().map_err(|e| Error::Frame {
            frame: t,
            source: Box::new(e),
        })?;
        maps.push(m.index_axis_move(Axis(0), 0));
        iqs.push(iq);
    }
    let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
    let stack = ndarray::stack(Axis(0), &views).map_err(|e| Error::contract(e.to_string()))?;
    Ok((stack, keys, iqs))
}

/// Joint map over the `T_v` keyframes with merged visual tokens.
pub fn compute_video_map(
    video: &Video,
    prompt: &str,
    bank: Option<&SoftPromptBank>,
    backend: &dyn LanguageBackend,
    cfg: &RolloutConfig,
) -> Result<(Array3<f64>, Vec<usize>)> {
    let keys = keyframes(video.len(), cfg.video_keyframes);
    let frames: Vec<_> = keys.iter().map(|&t| video.frame(t).clone()).collect();
    let req = ForwardRequest::new(prompt, &frames)
        .with_soft_prompts(soft_view(bank), cfg.soft_placement)
        .with_token_merge(cfg.video_downsample);
    let res = backend.forward(&req)?;
    Ok((query_maps(&res, cfg.range_for(&res))?, keys))
}

/// Both granularities for one query prompt.
pub fn compute_grounding_maps(
    video: &Video,
    prompt: &str,
    frame_bank: Option<&SoftPromptBank>,
    video_bank: Option<&SoftPromptBank>,
    backend: &dyn LanguageBackend,
    cfg: &RolloutConfig,
) -> Result<GroundingMaps> {
    let (frame_maps, frame_keyframes, frame_query_indices) =
        compute_frame_maps(video, prompt, frame_bank, backend, cfg)?;
    let (video_map, video_keyframes) = compute_video_map(video, prompt, video_bank, backend, cfg)?;
    let maps = GroundingMaps {
        frame_maps,
        video_map,
        frame_keyframes,
        video_keyframes,
        frame_query_indices,
    };
    maps.validate()?;
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn transition_examples() {
        let half = array![[0.5, 0.5], [0.5, 0.5]];
        let want = array![[0.75, 0.25], [0.25, 0.75]];
        assert_eq!(layer_transition(&[Array2::eye(2)]).unwrap(), Array2::<f64>::eye(2));
        assert_eq!(layer_transition(std::slice::from_ref(&half)).unwrap(), want);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(layer_transition(&[Array2::eye(2), swap]).unwrap(), want);
        assert!(layer_transition(&[Array2::zeros((2, 3))]).is_err());
    }

    #[test]
    fn two_layer_product() {
        let half = array![[0.5, 0.5], [0.5, 0.5]];
        let att = AttentionTensor::new(vec![vec![half.clone()], vec![half]]).unwrap();
        let r = rollout(&att, (0, 1)).unwrap();
        let want = array![[0.625, 0.375], [0.375, 0.625]];
        assert!((&r - &want).iter().all(|d| d.abs() < 1e-15));
        assert_eq!(rollout(&att, (1, 1)).unwrap(), array![[0.75, 0.25], [0.25, 0.75]]);
        assert!(rollout(&att, (0, 2)).is_err());
    }

    #[test]
    fn extraction_from_identity() {
        let r = Array2::<f64>::eye(5);
        assert_eq!(extract_query_attention(&r, 2, &[1, 2, 3]).unwrap(), array![0.0, 1.0, 0.0]);
        assert_eq!(extract_query_attention(&r, 4, &[1, 2, 3]).unwrap(), array![0.0, 0.0, 0.0]);
        assert!(extract_query_attention(&r, 5, &[1]).is_err());
    }

    #[test]
    fn keyframe_examples() {
        assert_eq!(keyframes(16, 16), (0..16).collect::<Vec<_>>());
        assert_eq!(keyframes(5, 16), vec![0, 1, 2, 3, 4]);
        assert_eq!(keyframes(10, 1), vec![0]);
        let k = keyframes(31, 16);
        assert_eq!(k, vec![0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30]);
    }

    fn random_attention(seed: u64, layers: usize, heads: usize, n: usize) -> AttentionTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mats = (0..layers)
            .map(|_| {
                (0..heads)
                    .map(|_| {
                        let mut a = Array2::from_shape_simple_fn((n, n), || rng.random::<f64>());
                        for mut row in a.rows_mut() {
                            let s = row.sum();
                            row.mapv_inplace(|v| v / s);
                        }
                        a
                    })
                    .collect()
            })
            .collect();
        AttentionTensor::new(mats).unwrap()
    }

    #[test]
    fn row_matches_full_product() {
        let att = random_attention(7, 4, 2, 9);
        let full = rollout(&att, (1, 3)).unwrap();
        let row = rollout_row(&att, (1, 3), 5).unwrap();
        assert!((&full.row(5) - &row).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let att = random_attention(3, 3, 2, 6);
        let w = Array1::from_shape_fn(6, |i| (i as f64 * 0.7).sin());
        let f = |att: &AttentionTensor| rollout_row(att, (0, 2), 4).unwrap().dot(&w);
        let grad = rollout_row_vjp(&att, (0, 2), 4, w.view()).unwrap();
        let h = 1e-6;
        for l in 0..3 {
            for hd in 0..2 {
                for (i, j) in [(0, 0), (4, 1), (2, 5), (5, 3)] {
                    let mut layers: Vec<Vec<Array2<f64>>> = att.layers().to_vec();
                    layers[l][hd][[i, j]] += h;
                    let up = AttentionTensor::new(layers.clone()).unwrap();
                    layers[l][hd][[i, j]] -= 2.0 * h;
                    let down = AttentionTensor::new(layers).unwrap();
                    let fd = (f(&up) - f(&down)) / (2.0 * h);
                    let an = grad[l].as_ref().unwrap()[hd][[i, j]];
                    assert!((fd - an).abs() < 1e-8, "l{l} h{hd} ({i},{j}): {fd} vs {an}");
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn rows_stay_stochastic_and_compose(seed in 0u64..1000, m in 0usize..3) {
            let att = random_attention(seed, 4, 2, 7);
            let whole = rollout(&att, (0, 3)).unwrap();
            for row in whole.rows() {
                proptest::prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                proptest::prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
            let lower = rollout(&att, (0, m)).unwrap();
            let upper = rollout(&att, (m + 1, 3)).unwrap();
            let composed = upper.dot(&lower);
            proptest::prop_assert!((&whole - &composed).iter().all(|d| d.abs() < 1e-9));
        }
    }
}
