//! End-to-end grounding: reasoning, query prompt, dual rollout, tracklets, selection.

use ndarray::Array2;

use crate::backends::{LanguageBackend, Segmenter};
use crate::error::{Error, Result};
use crate::prompting::{build_cot_prompt, build_query_prompt, parse_cot_response, GroundingQuery, SoftPromptBank};
use crate::rollout::{compute_grounding_maps, GroundingMaps, RolloutConfig};
use crate::steering::TrainSample;
use crate::tracklets::{build_tracklets, finalize, score_tracklet, select_best, select_points, SelectionConfig, Tracklet};
use crate::video::Video;

/// Query for `expression`, with reasoning attributes when `use_cot` is set.
/// A malformed reasoning response degrades to an empty attribute list.
pub fn make_query(backend: &dyn LanguageBackend, expression: &str, video: &Video, use_cot: bool) -> Result<(GroundingQuery, bool)> {
    let (mut reasoning, mut attributes, mut failed) = (String::new(), Vec::new(), false);
    if use_cot {
        let raw = backend.respond(&build_cot_prompt(expression), video.frames())?;
        match parse_cot_response(&raw) {
            Ok((r, a)) => (reasoning, attributes) = (r, a),
            Err(e) => {
                log::warn!("reasoning response unusable, continuing without attributes: {e}");
                failed = true;
            }
        }
    }
    let prompt = build_query_prompt(expression, &attributes);
    let response_word = backend.respond(&prompt, video.frames())?;
    let response_word = match response_word.split_whitespace().collect::<Vec<_>>()[..] {
        [w] => w.to_string(),
        [w, ..] => {
            log::warn!("multi-word response {response_word:?}, using its first word");
            w.to_string()
        }
        [] => return Err(Error::contract("backend returned an empty response")),
    };
    Ok((
        GroundingQuery {
            expression: expression.to_string(),
            reasoning,
            attributes,
            response_word,
        },
        failed,
    ))
}

pub fn query_prompt(q: &GroundingQuery) -> String {
    build_query_prompt(&q.expression, &q.attributes)
}

/// Prompt banks used at inference; `None` runs the raw backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct Banks<'a> {
    pub frame: Option<&'a SoftPromptBank>,
    pub video: Option<&'a SoftPromptBank>,
}

/// Everything computed before scoring; reusable across fusion weights.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub query: GroundingQuery,
    pub cot_failed: bool,
    pub maps: GroundingMaps,
    pub tracklets: Vec<Tracklet>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub candidates: Candidates,
    pub alpha: f64,
    pub chosen: Option<usize>,
    /// Final probability masks, one per frame (all zero when nothing was found).
    pub masks: Vec<Array2<f64>>,
}

#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub backend: &'a dyn LanguageBackend,
    pub rollout: &'a RolloutConfig,
    pub selection: &'a SelectionConfig,
    pub banks: Banks<'a>,
    pub use_cot: bool,
}

impl Pipeline<'_> {
    /// Maps and unscored tracklets for one expression.
    pub fn candidates(&self, video: &Video, expression: &str, segmenter: &dyn Segmenter) -> Result<Candidates> {
        if segmenter.num_frames() != video.len() {
            return Err(Error::contract(format!(
                "segmenter covers {} frames, video has {}",
                segmenter.num_frames(),
                video.len()
            )));
        }
        let (query, cot_failed) = make_query(self.backend, expression, video, self.use_cot)?;
        let prompt = query_prompt(&query);
        let maps = compute_grounding_maps(video, &prompt, self.banks.frame, self.banks.video, self.backend, self.rollout)?;
        let (_, gh, gw) = maps.frame_maps.dim();
        let points = select_points(&maps.frame_maps, &maps.frame_keyframes, (video.height(), video.width()))?;
        let tracklets = build_tracklets(&points, segmenter, &maps.frame_keyframes, (gh, gw), self.selection)?;
        Ok(Candidates {
            query,
            cot_failed,
            maps,
            tracklets,
        })
    }

    /// Scores candidates at `alpha` and finalizes the best one.
    pub fn select(&self, mut candidates: Candidates, alpha: f64, native: (usize, usize), frames: usize) -> Result<PipelineRun> {
        for t in &mut candidates.tracklets {
            score_tracklet(t, &candidates.maps, alpha)?;
        }
        let chosen = select_best(&candidates.tracklets);
        let masks = match chosen {
            Some(i) => finalize(&candidates.tracklets[i], native)?,
            None => vec![Array2::zeros(native); frames],
        };
        Ok(PipelineRun {
            candidates,
            alpha,
            chosen,
            masks,
        })
    }

    pub fn run(&self, video: &Video, expression: &str, segmenter: &dyn Segmenter) -> Result<PipelineRun> {
        let c = self.candidates(video, expression, segmenter)?;
        self.select(c, self.selection.alpha, (video.height(), video.width()), video.len())
    }
}

/// Training sample whose prompt carries the query the pipeline would build.
pub fn training_sample(
    backend: &dyn LanguageBackend,
    id: &str,
    video: Video,
    expression: &str,
    masks: Vec<Array2<f64>>,
    use_cot: bool,
) -> Result<TrainSample> {
    let (q, _) = make_query(backend, expression, &video, use_cot)?;
    Ok(TrainSample {
        id: id.to_string(),
        prompt: query_prompt(&q),
        video,
        masks,
    })
}
