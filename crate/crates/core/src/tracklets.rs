//! Point prompts, candidate tracklets, fusion scoring and final masks.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Direction, Segmenter};
use crate::error::{Error, Result};
use crate::numerics::{area_downsample, argmax_first, bilinear_resize, logit_transform, mask_iou, pearson_corr, DEFAULT_LOGIT_EPS};
use crate::rollout::GroundingMaps;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub nms_iou: f64,
    pub binarize_threshold: f64,
    pub logit_eps: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            alpha: 0.3,
            nms_iou: 0.7,
            binarize_threshold: 0.5,
            logit_eps: DEFAULT_LOGIT_EPS,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config(format!("nms_iou {} outside (0, 1]", self.nms_iou)));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::Config("binarize_threshold outside [0, 1]".into()));
        }
        if !(self.logit_eps > 0.0 && self.logit_eps < 0.5) {
            return Err(Error::Config("logit_eps outside (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub attention: f64,
    /// Row-major index of the argmax cell.
    pub cell: usize,
}

/// The argmax cell of each keyframe map, mapped to its pixel-space center.
pub fn select_points(frame_maps: &Array3<f64>, keyframes: &[usize], native: (usize, usize)) -> Result<Vec<PointPrompt>> {
    let (t, gh, gw) = frame_maps.dim();
    if t != keyframes.len() || gh == 0 || gw == 0 {
        return Err(Error::contract("frame maps and keyframes disagree"));
    }
    let (h, w) = native;
    Ok(frame_maps
        .outer_iter()
        .zip(keyframes)
        .map(|(m, &frame)| {
            let cell = argmax_first(&m).expect("nonempty map");
            let (r, c) = (cell / gw, cell % gw);
            PointPrompt {
                frame,
                x: (c as f64 + 0.5) * w as f64 / gw as f64,
                y: (r as f64 + 0.5) * h as f64 / gh as f64,
                attention: m[[r, c]],
                cell,
            }
        })
        .collect())
}

/// Greedy NMS: candidates ordered by priority (descending), ties by `order`
/// (ascending); a candidate is dropped iff its IoU with a kept one exceeds
/// `thresh`. Returns kept indices in visiting order.
pub fn dedupe_nms(masks: &[Array2<f64>], priorities: &[f64], order: &[usize], thresh: f64) -> Result<Vec<usize>> {
    if masks.len() != priorities.len() || masks.len() != order.len() {
        return Err(Error::contract("NMS inputs differ in length"));
    }
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    idx.sort_by(|&a, &b| {
        priorities[b]
            .total_cmp(&priorities[a])
            .then(order[a].cmp(&order[b]))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        let mut keep = true;
        for &k in &kept {
            if mask_iou(&masks[i], &masks[k])? > thresh {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Fusion scores of one tracklet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s: f64,
    pub s_frm: f64,
    pub s_vid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    /// Probability masks for every frame of the clip.
    pub masks: Vec<Array2<f64>>,
    pub logits: Vec<Array2<f64>>,
    pub seed: PointPrompt,
    /// Logit-space keyframe masks pooled onto the frame-map grid.
    pub keyframe_volume: Array3<f64>,
    pub scores: Option<Scores>,
}

impl Tracklet {
    /// Hash of everything except the scores.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for arr in self.masks.iter().chain(&self.logits) {
            for v in arr {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.keyframe_volume {
            h.update(v.to_le_bytes());
        }
        let p = &self.seed;
        h.update((p.frame as u64).to_le_bytes());
        h.update((p.cell as u64).to_le_bytes());
        for v in [p.x, p.y, p.attention] {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

fn binarize(m: &Array2<f64>, thresh: f64) -> Array2<f64> {
    m.mapv(|v| if v >= thresh { 1.0 } else { 0.0 })
}

/// Segments every point, deduplicates the seeds and propagates survivors
/// through the clip. Failed or empty candidates are dropped.
pub fn build_tracklets(
    points: &[PointPrompt],
    segmenter: &dyn Segmenter,
    frame_keyframes: &[usize],
    grid: (usize, usize),
    cfg: &SelectionConfig,
) -> Result<Vec<Tracklet>> {
    let total = segmenter.num_frames();
    let mut seeds = Vec::new();
    for p in points {
        match segmenter.segment_from_point(p.frame, p.x, p.y) {
            Ok(m) if m.iter().any(|&v| v >= cfg.binarize_threshold) => seeds.push((*p, m)),
            Ok(_) => log::debug!("candidate at frame {} dropped: empty seed mask", p.frame),
            Err(e) => log::warn!("candidate at frame {} dropped: {e}", p.frame),
        }
    }
    let binary: Vec<_> = seeds.iter().map(|(_, m)| binarize(m, cfg.binarize_threshold)).collect();
    let prio: Vec<f64> = seeds.iter().map(|(p, _)| p.attention).collect();
    let order: Vec<usize> = seeds.iter().map(|(p, _)| p.frame).collect();
    let kept = dedupe_nms(&binary, &prio, &order, cfg.nms_iou)?;

    let mut out = Vec::new();
    for i in kept {
        let (p, seed_mask) = &seeds[i];
        match propagate_both(segmenter, seed_mask, p.frame, total, cfg) {
            Ok((masks, logits)) => {
                if masks.iter().all(|m| m.iter().all(|&v| v < cfg.binarize_threshold)) {
                    log::debug!("candidate at frame {} dropped: empty after propagation", p.frame);
                    continue;
                }
                let keyframe_volume = keyframe_volume(&masks, frame_keyframes, grid, cfg.logit_eps)?;
                out.push(Tracklet {
                    masks,
                    logits,
                    seed: *p,
                    keyframe_volume,
                    scores: None,
                });
            }
            Err(e) => log::warn!("candidate at frame {} dropped: {e}", p.frame),
        }
    }
    Ok(out)
}

type MaskSeq = (Vec<Array2<f64>>, Vec<Array2<f64>>);

fn propagate_both(
    segmenter: &dyn Segmenter,
    seed: &Array2<f64>,
    frame: usize,
    total: usize,
    cfg: &SelectionConfig,
) -> Result<MaskSeq> {
    let mut masks: Vec<Option<Array2<f64>>> = vec![None; total];
    let mut logits: Vec<Option<Array2<f64>>> = vec![None; total];
    if frame >= total {
        return Err(Error::contract(format!("seed frame {frame} outside clip of {total}")));
    }
    masks[frame] = Some(seed.clone());
    logits[frame] = Some(logit_transform(seed, cfg.logit_eps)?);
    for dir in [Direction::Forward, Direction::Backward] {
        for pm in segmenter.propagate(seed, frame, dir)? {
            if pm.frame >= total || pm.probability.dim() != seed.dim() || pm.logits.dim() != seed.dim() {
                return Err(Error::contract(format!("segmenter returned an invalid mask for frame {}", pm.frame)));
            }
            if pm.probability.iter().any(|v| !(0.0..=1.0).contains(v)) || pm.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("segmenter mask for frame {} is out of range", pm.frame)));
            }
            masks[pm.frame] = Some(pm.probability);
            logits[pm.frame] = Some(pm.logits);
        }
    }
    let missing = masks.iter().position(Option::is_none);
    if let Some(t) = missing {
        return Err(Error::contract(format!("propagation left frame {t} without a mask")));
    }
    Ok((
        masks.into_iter().map(Option::unwrap).collect(),
        logits.into_iter().map(Option::unwrap).collect(),
    ))
}

/// Logit-transformed keyframe masks area-pooled to `grid`.
pub fn keyframe_volume(masks: &[Array2<f64>], keys: &[usize], grid: (usize, usize), eps: f64) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((keys.len(), grid.0, grid.1));
    for (i, &t) in keys.iter().enumerate() {
        let m = masks
            .get(t)
            .ok_or_else(|| Error::contract(format!("no mask for keyframe {t}")))?;
        let (h, w) = m.dim();
        if grid.0 == 0 || h % grid.0 != 0 || w % grid.1 != 0 || h / grid.0 != w / grid.1 {
            return Err(Error::contract(format!("mask {h}x{w} does not tile a {}x{} grid", grid.0, grid.1)));
        }
        let pooled = area_downsample(logit_transform(m, eps)?.view(), h / grid.0)?;
        out.index_axis_mut(Axis(0), i).assign(&pooled);
    }
    Ok(out)
}

/// Index of the frame keyframe nearest to `t`, ties to the earlier one.
fn nearest_key(t: usize, frame_keys: &[usize]) -> usize {
    let mut best = 0;
    for (i, &k) in frame_keys.iter().enumerate() {
        if k.abs_diff(t) < frame_keys[best].abs_diff(t) {
            best = i;
        }
    }
    best
}

/// Selects the slice of `m` nearest to each video keyframe and pools it by `factor`.
pub fn align_for_video(m: &Array3<f64>, video_keys: &[usize], frame_keys: &[usize], factor: usize) -> Result<Array3<f64>> {
    if frame_keys.is_empty() || m.len_of(Axis(0)) != frame_keys.len() {
        return Err(Error::contract("volume and frame keyframes disagree"));
    }
    let (_, h, w) = m.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::contract(format!("volume {h}x{w} cannot be pooled by {factor}")));
    }
    let mut out = Array3::zeros((video_keys.len(), h / factor, w / factor));
    for (i, &t) in video_keys.iter().enumerate() {
        let src = m.index_axis(Axis(0), nearest_key(t, frame_keys));
        out.index_axis_mut(Axis(0), i).assign(&area_downsample(src, factor)?);
    }
    Ok(out)
}

/// Correlations of the tracklet's volume with both grounding maps.
pub fn correlations(t: &Tracklet, maps: &GroundingMaps) -> Result<(f64, f64)> {
    let s_frm = pearson_corr(&t.keyframe_volume, &maps.frame_maps)?;
    let (_, fh, _) = maps.frame_maps.dim();
    let (_, vh, _) = maps.video_map.dim();
    if vh == 0 || fh % vh != 0 {
        return Err(Error::contract("video map grid does not divide the frame grid"));
    }
    let aligned = align_for_video(&t.keyframe_volume, &maps.video_keyframes, &maps.frame_keyframes, fh / vh)?;
    let s_vid = pearson_corr(&aligned, &maps.video_map)?;
    Ok((s_frm, s_vid))
}

pub fn fuse(alpha: f64, s_frm: f64, s_vid: f64) -> Scores {
    Scores {
        s: alpha * s_frm + (1.0 - alpha) * s_vid,
        s_frm,
        s_vid,
    }
}

pub fn score_tracklet(t: &mut Tracklet, maps: &GroundingMaps, alpha: f64) -> Result<Scores> {
    let (f, v) = correlations(t, maps)?;
    let sc = fuse(alpha, f, v);
    t.scores = Some(sc);
    Ok(sc)
}

/// Highest fused score; ties by earlier seed keyframe, then smaller seed cell.
pub fn select_best(tracklets: &[Tracklet]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in tracklets.iter().enumerate() {
        let s = t.scores?.s;
        best = match best {
            None => Some(i),
            Some(b) => {
                let bt = &tracklets[b];
                let bs = bt.scores?.s;
                let better = s > bs
                    || (s == bs && (t.seed.frame, t.seed.cell) < (bt.seed.frame, bt.seed.cell));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Probability masks bilinearly resized to `native`.
pub fn finalize(best: &Tracklet, native: (usize, usize)) -> Result<Vec<Array2<f64>>> {
    best.masks
        .iter()
        .map(|m| {
            if m.dim() == native {
                Ok(m.clone())
            } else {
                bilinear_resize(m.view(), native.0, native.1)
            }
        })
        .collect()
}

/// Binary export of a probability mask.
pub fn binarize_mask(m: &Array2<f64>, thresh: f64) -> Array2<u8> {
    m.mapv(|v| u8::from(v >= thresh))
}
