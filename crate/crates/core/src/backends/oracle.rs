//! Segmenter that reads answers off ground-truth instance-label maps.

use ndarray::Array2;

use super::{Direction, PropagatedMask, Segmenter};
use crate::error::{Error, Result};

/// Logit magnitude emitted inside and outside propagated masks.
pub const ORACLE_LOGIT: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    labels: Vec<Array2<u8>>,
}

impl OracleSegmenter {
    pub fn new(labels: Vec<Array2<u8>>) -> Result<Self> {
        let first = labels
            .first()
            .ok_or_else(|| Error::contract("oracle segmenter needs at least one label map"))?;
        if labels.iter().any(|l| l.dim() != first.dim()) {
            return Err(Error::contract("label maps must share one resolution"));
        }
        Ok(OracleSegmenter { labels })
    }

    /// Instance with the largest overlap with the seed (pixels ≥ 0.5);
    /// ties go to the smaller label, background never wins.
    pub fn resolve_instance(&self, seed_mask: &Array2<f64>, frame: usize) -> Result<Option<u8>> {
        let lab = self.frame_labels(frame)?;
        if seed_mask.dim() != lab.dim() {
            return Err(Error::contract(format!(
                "seed mask {:?} does not match frame {:?}",
                seed_mask.dim(),
                lab.dim()
            )));
        }
        let mut counts = [0usize; 256];
        for (&m, &l) in seed_mask.iter().zip(lab.iter()) {
            if m >= 0.5 && l > 0 {
                counts[l as usize] += 1;
            }
        }
        let mut best: Option<(u8, usize)> = None;
        for (l, &c) in counts.iter().enumerate().skip(1) {
            if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
                best = Some((l as u8, c));
            }
        }
        Ok(best.map(|(l, _)| l))
    }

    fn frame_labels(&self, frame: usize) -> Result<&Array2<u8>> {
        self.labels.get(frame).ok_or_else(|| {
            Error::contract(format!("frame {frame} outside clip of {} frames", self.labels.len()))
        })
    }

    fn indicator(&self, frame: usize, label: Option<u8>) -> Array2<f64> {
        let lab = &self.labels[frame];
        match label {
            Some(l) => lab.mapv(|v| (v == l) as u8 as f64),
            None => Array2::zeros(lab.dim()),
        }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment_from_point(&self, frame: usize, x: f64, y: f64) -> Result<Array2<f64>> {
        let lab = self.frame_labels(frame)?;
        let (h, w) = lab.dim();
        if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
            return Err(Error::contract(format!("point ({x}, {y}) outside {w}x{h} frame")));
        }
        let l = lab[[y as usize, x as usize]];
        Ok(self.indicator(frame, (l > 0).then_some(l)))
    }

    fn propagate(&self, seed_mask: &Array2<f64>, seed_frame: usize, direction: Direction) -> Result<Vec<PropagatedMask>> {
        let label = self.resolve_instance(seed_mask, seed_frame)?;
        let frames: Vec<usize> = match direction {
            Direction::Forward => (seed_frame + 1..self.labels.len()).collect(),
            Direction::Backward => (0..seed_frame).rev().collect(),
        };
        Ok(frames
            .into_iter()
            .map(|t| {
                let probability = self.indicator(t, label);
                let logits = probability.mapv(|p| if p > 0.5 { ORACLE_LOGIT } else { -ORACLE_LOGIT });
                PropagatedMask {
                    frame: t,
                    probability,
                    logits,
                }
            })
            .collect())
    }

    fn num_frames(&self) -> usize {
        self.labels.len()
    }
}
