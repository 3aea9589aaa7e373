//! Region similarity J, boundary accuracy F and attention–mask correlation.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::numerics::{mask_iou, pearson_corr};
use crate::rollout::GroundingMaps;
use crate::steering::resized_targets;

/// Mask IoU; two empty masks score 1.
pub fn j_metric(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    mask_iou(pred, gt)
}

/// `max(1, round(0.008 · diagonal))`.
pub fn default_tolerance(h: usize, w: usize) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    ((0.008 * diag).round() as usize).max(1)
}

/// Foreground pixels with a 4-neighbour inside the frame that is background.
pub fn boundary(mask: &Array2<f64>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let fg = |r: usize, c: usize| mask[[r, c]] >= 0.5;
    Array2::from_shape_fn((h, w), |(r, c)| {
        fg(r, c)
            && ((r > 0 && !fg(r - 1, c))
                || (r + 1 < h && !fg(r + 1, c))
                || (c > 0 && !fg(r, c - 1))
                || (c + 1 < w && !fg(r, c + 1)))
    })
}

/// Dilation by the disk of radius `tol`.
fn dilate(b: &Array2<bool>, tol: usize) -> Array2<bool> {
    let (h, w) = b.dim();
    let t = tol as isize;
    let offsets: Vec<(isize, isize)> = (-t..=t)
        .flat_map(|dy| (-t..=t).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= t * t)
        .collect();
    let mut out = Array2::from_elem((h, w), false);
    for ((r, c), &on) in b.indexed_iter() {
        if !on {
            continue;
        }
        for &(dy, dx) in &offsets {
            let (rr, cc) = (r as isize + dy, c as isize + dx);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                out[[rr as usize, cc as usize]] = true;
            }
        }
    }
    out
}

fn check_binary(m: &Array2<f64>) -> Result<()> {
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("mask is not binary"));
    }
    Ok(())
}

/// Boundary F-measure with pixel tolerance `tol`.
pub fn f_metric(pred: &Array2<f64>, gt: &Array2<f64>, tol: usize) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::contract(format!("mask shapes {:?} and {:?} differ", pred.dim(), gt.dim())));
    }
    check_binary(pred)?;
    check_binary(gt)?;
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (np, ng) = (bp.iter().filter(|&&v| v).count(), bg.iter().filter(|&&v| v).count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (dp, dg) = (dilate(&bp, tol), dilate(&bg, tol));
    let hits_p = bp.iter().zip(dg.iter()).filter(|(&a, &b)| a && b).count();
    let hits_g = bg.iter().zip(dp.iter()).filter(|(&a, &b)| a && b).count();
    let precision = hits_p as f64 / np as f64;
    let recall = hits_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-video region, boundary and combined scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JfScore {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

impl JfScore {
    pub fn new(j: f64, f: f64) -> Self {
        JfScore { j, f, jf: (j + f) / 2.0 }
    }
}

/// J and F averaged over every frame of a clip.
pub fn video_jf(preds: &[Array2<f64>], gts: &[Array2<f64>], tol: Option<usize>) -> Result<JfScore> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::contract(format!(
            "{} predicted masks for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let (h, w) = gts[0].dim();
    let tol = tol.unwrap_or_else(|| default_tolerance(h, w));
    let (mut j, mut f) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        j += j_metric(p, g)?;
        f += f_metric(p, g, tol)?;
    }
    let n = preds.len() as f64;
    Ok(JfScore::new(j / n, f / n))
}

/// Pearson correlation of each modality's stacked maps with the resized
/// ground truth at the same keyframes: `(frame, video)`.
pub fn correlation_metric(maps: &GroundingMaps, gt: &[Array2<f64>]) -> Result<(f64, f64)> {
    let grid = |a: &Array3<f64>| (a.len_of(Axis(1)), a.len_of(Axis(2)));
    let gf = resized_targets(gt, &maps.frame_keyframes, grid(&maps.frame_maps))?;
    let gv = resized_targets(gt, &maps.video_keyframes, grid(&maps.video_map))?;
    Ok((pearson_corr(&maps.frame_maps, &gf)?, pearson_corr(&maps.video_map, &gv)?))
}
