//! Suite evaluation, reports and ablation tables.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{correlation_metric, video_jf};
use super::{SyntheticScene, VosSample};
use crate::backends::OracleSegmenter;
use crate::error::{Error, Result};
use crate::numerics::pearson_corr;
use crate::pipeline::{Banks, Candidates, Pipeline};
use crate::prompting::SoftPromptBank;
use crate::rollout::keyframes;
use crate::steering::resized_targets;
use crate::video::{label_mask, Video};

/// One referring query with instance-label ground truth.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub video: Video,
    pub expression: String,
    pub labels: Vec<Array2<u8>>,
    pub target: u8,
}

impl EvalItem {
    pub fn gt_masks(&self) -> Vec<Array2<f64>> {
        self.labels.iter().map(|l| label_mask(l, self.target)).collect()
    }
}

impl From<&SyntheticScene> for EvalItem {
    fn from(s: &SyntheticScene) -> Self {
        EvalItem {
            id: s.id.clone(),
            video: s.video.clone(),
            expression: s.expression.clone(),
            labels: s.labels.clone(),
            target: s.target,
        }
    }
}

impl From<VosSample> for EvalItem {
    fn from(s: VosSample) -> Self {
        EvalItem {
            id: s.id(),
            expression: s.entry.expression.clone(),
            target: s.entry.object_id,
            video: s.video,
            labels: s.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub id: String,
    pub expression: String,
    pub response_word: String,
    pub attributes: Vec<String>,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub corr_frame: f64,
    pub corr_video: f64,
    pub n_candidates: usize,
    pub chosen: Option<usize>,
    /// Best J any candidate reaches against the ground truth.
    pub best_candidate_j: f64,
    /// Whether the chosen tracklet is one with the best candidate J.
    pub chose_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoResult>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub mean_corr_frame: f64,
    pub mean_corr_video: f64,
    pub selection_accuracy: f64,
    pub cot_failures: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn from_results(videos: Vec<VideoResult>, cot_failures: usize, config: serde_json::Value) -> Self {
        let n = videos.len().max(1) as f64;
        let mean = |f: fn(&VideoResult) -> f64| videos.iter().map(f).sum::<f64>() / n;
        let mean_j = mean(|v| v.j);
        let mean_f = mean(|v| v.f);
        EvalReport {
            mean_j,
            mean_f,
            mean_jf: (mean_j + mean_f) / 2.0,
            mean_corr_frame: mean(|v| v.corr_frame),
            mean_corr_video: mean(|v| v.corr_video),
            selection_accuracy: mean(|v| f64::from(u8::from(v.chose_best))),
            cot_failures,
            config,
            videos,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }
}

/// Scores one pipeline run against the item's ground truth.
pub fn score_run(item: &EvalItem, c: &Candidates, chosen: Option<usize>, masks: &[Array2<f64>], threshold: f64) -> Result<VideoResult> {
    let gt = item.gt_masks();
    let bin = |ms: &[Array2<f64>]| -> Vec<Array2<f64>> {
        ms.iter().map(|m| m.mapv(|v| f64::from(u8::from(v >= threshold)))).collect()
    };
    let s = video_jf(&bin(masks), &gt, None)?;
    let (corr_frame, corr_video) = correlation_metric(&c.maps, &gt)?;
    let mut cand_j = Vec::with_capacity(c.tracklets.len());
    for t in &c.tracklets {
        cand_j.push(video_jf(&bin(&t.masks), &gt, None)?.j);
    }
    let best_candidate_j = cand_j.iter().copied().fold(0.0, f64::max);
    Ok(VideoResult {
        id: item.id.clone(),
        expression: item.expression.clone(),
        response_word: c.query.response_word.clone(),
        attributes: c.query.attributes.clone(),
        j: s.j,
        f: s.f,
        jf: s.jf,
        corr_frame,
        corr_video,
        n_candidates: c.tracklets.len(),
        chosen,
        best_candidate_j,
        chose_best: chosen.is_some_and(|i| cand_j[i] >= best_candidate_j),
    })
}

/// Unscored candidates for every item, computed with the oracle segmenter.
pub fn suite_candidates(pipeline: &Pipeline<'_>, items: &[EvalItem]) -> Result<Vec<Candidates>> {
    items
        .iter()
        .map(|it| {
            let seg = OracleSegmenter::new(it.labels.clone())?;
            pipeline.candidates(&it.video, &it.expression, &seg)
        })
        .collect()
}

/// Selects at `alpha` over precomputed candidates and scores the results.
pub fn report_from_candidates(
    pipeline: &Pipeline<'_>,
    items: &[EvalItem],
    candidates: &[Candidates],
    alpha: f64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut videos = Vec::with_capacity(items.len());
    let mut failures = 0;
    for (it, c) in items.iter().zip(candidates) {
        let run = pipeline.select(c.clone(), alpha, (it.video.height(), it.video.width()), it.video.len())?;
        failures += usize::from(run.candidates.cot_failed);
        videos.push(score_run(it, &run.candidates, run.chosen, &run.masks, pipeline.selection.binarize_threshold)?);
    }
    Ok(EvalReport::from_results(videos, failures, config))
}

/// Full pipeline over `items`.
pub fn evaluate(pipeline: &Pipeline<'_>, items: &[EvalItem], config: serde_json::Value) -> Result<EvalReport> {
    let candidates = suite_candidates(pipeline, items)?;
    report_from_candidates(pipeline, items, &candidates, pipeline.selection.alpha, config)
}

/// Self-test: ground truth scored as the prediction, maps replaced by the
/// resized ground truth on the token grid of `grid`.
pub fn evaluate_ground_truth(items: &[EvalItem], grid: (usize, usize), frame_keys: usize, config: serde_json::Value) -> Result<EvalReport> {
    let mut videos = Vec::new();
    for it in items {
        let gt = it.gt_masks();
        let s = video_jf(&gt, &gt, None)?;
        let keys = keyframes(gt.len(), frame_keys);
        let g = resized_targets(&gt, &keys, grid)?;
        let corr = pearson_corr(&g, &g)?;
        videos.push(VideoResult {
            id: it.id.clone(),
            expression: it.expression.clone(),
            response_word: String::new(),
            attributes: Vec::new(),
            j: s.j,
            f: s.f,
            jf: s.jf,
            corr_frame: corr,
            corr_video: corr,
            n_candidates: 1,
            chosen: Some(0),
            best_candidate_j: s.j,
            chose_best: true,
        });
    }
    Ok(EvalReport::from_results(videos, 0, config))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: String,
    pub value: String,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub mean_corr_frame: f64,
    pub mean_corr_video: f64,
    pub selection_accuracy: f64,
}

impl AblationRow {
    pub fn from_report(param: &str, value: impl Into<String>, r: &EvalReport) -> Self {
        AblationRow {
            param: param.to_string(),
            value: value.into(),
            mean_j: r.mean_j,
            mean_f: r.mean_f,
            mean_jf: r.mean_jf,
            mean_corr_frame: r.mean_corr_frame,
            mean_corr_video: r.mean_corr_video,
            selection_accuracy: r.selection_accuracy,
        }
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("param,value,mean_j,mean_f,mean_jf,mean_corr_frame,mean_corr_video,selection_accuracy\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.param, r.value, r.mean_j, r.mean_f, r.mean_jf, r.mean_corr_frame, r.mean_corr_video, r.selection_accuracy
        );
    }
    s
}

/// Fusion-weight sweep over cached candidates. Also returns, per alpha,
/// the candidate fingerprints of every item so reuse can be checked.
pub fn alpha_sweep(
    pipeline: &Pipeline<'_>,
    items: &[EvalItem],
    alphas: &[f64],
) -> Result<(Vec<AblationRow>, Vec<Vec<Vec<String>>>, Vec<EvalReport>)> {
    let candidates = suite_candidates(pipeline, items)?;
    let mut rows = Vec::new();
    let mut prints = Vec::new();
    let mut reports = Vec::new();
    for &a in alphas {
        prints.push(
            candidates
                .iter()
                .map(|c| c.tracklets.iter().map(|t| t.fingerprint()).collect())
                .collect(),
        );
        let r = report_from_candidates(pipeline, items, &candidates, a, serde_json::json!({ "alpha": a }))?;
        rows.push(AblationRow::from_report("alpha", format!("{a}"), &r));
        reports.push(r);
    }
    Ok((rows, prints, reports))
}

/// The four soft-prompt × reasoning rows at the pipeline's fusion weight.
pub fn components_ablation(
    base: &Pipeline<'_>,
    banks: Banks<'_>,
    items: &[EvalItem],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (soft, cot) in [(false, false), (false, true), (true, false), (true, true)] {
        let p = Pipeline {
            banks: if soft { banks } else { Banks::default() },
            use_cot: cot,
            ..*base
        };
        let r = evaluate(&p, items, serde_json::json!({ "soft": soft, "cot": cot }))?;
        let value = format!("soft={},cot={}", if soft { "on" } else { "off" }, if cot { "on" } else { "off" });
        rows.push(AblationRow::from_report("components", value, &r));
    }
    Ok(rows)
}

/// Retrains through `train` for every prompt count and evaluates.
pub fn np_sweep(
    base: &Pipeline<'_>,
    values: &[usize],
    items: &[EvalItem],
    mut train: impl FnMut(usize) -> Result<(SoftPromptBank, SoftPromptBank)>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &n in values {
        let (f, v) = train(n)?;
        let p = Pipeline {
            banks: Banks {
                frame: Some(&f),
                video: Some(&v),
            },
            ..*base
        };
        let r = evaluate(&p, items, serde_json::json!({ "n_p": n }))?;
        rows.push(AblationRow::from_report("n_p", n.to_string(), &r));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let r = EvalReport::from_results(Vec::new(), 0, serde_json::Value::Null);
        let csv = ablation_csv(&[AblationRow::from_report("alpha", "0.3", &r)]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("param,value,"));
    }
}
