//! Backend contracts and their desk-scale implementations.
//!
//! A [`LanguageBackend`] answers free-form prompts and runs attention-capturing
//! forward passes. Backends that can also differentiate the input soft prompts
//! implement [`DifferentiableBackend`]. A [`Segmenter`] turns point prompts
//! into masks and propagates them through a clip.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod dump;
mod oracle;
mod reasoner;
mod toy;
pub mod vocab;

pub use dump::{load_attention_dump, write_attention_dump, DumpManifest, DEFAULT_DUMP_LAYERS};
pub use oracle::OracleSegmenter;
pub use reasoner::{describe_objects, SceneObject};
pub use toy::{ToyConfig, ToyLvlm};

/// Tolerance of the row-stochastic check at the contract boundary.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    SoftPrompt,
    Text,
    Visual,
    Generated,
}

/// How visual tokens tile the input: `frames × height × width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualLayout {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl VisualLayout {
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub roles: Vec<TokenRole>,
    pub visual_layout: VisualLayout,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, roles: Vec<TokenRole>, visual_layout: VisualLayout) -> Result<Self> {
        if ids.len() != roles.len() {
            return Err(Error::contract(format!(
                "{} token ids but {} roles",
                ids.len(),
                roles.len()
            )));
        }
        let seq = TokenSequence {
            ids,
            roles,
            visual_layout,
        };
        let n_v = seq.visual_indices().len();
        if n_v != visual_layout.tokens() {
            return Err(Error::contract(format!(
                "{n_v} visual tokens but layout {visual_layout:?} implies {}",
                visual_layout.tokens()
            )));
        }
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn visual_indices(&self) -> Vec<usize> {
        self.indices_of(TokenRole::Visual)
    }

    pub fn soft_indices(&self) -> Vec<usize> {
        self.indices_of(TokenRole::SoftPrompt)
    }

    fn indices_of(&self, role: TokenRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-layer, per-head attention matrices of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: Vec<Vec<Array2<f64>>>,
    seq_len: usize,
}

impl AttentionTensor {
    /// Checks squareness and equal sizes; row sums are checked by [`Self::validate_rows`].
    pub fn new(layers: Vec<Vec<Array2<f64>>>) -> Result<Self> {
        let first = layers
            .first()
            .and_then(|l| l.first())
            .ok_or_else(|| Error::contract("attention needs at least one layer and head"))?;
        let n = first.nrows();
        let heads = layers[0].len();
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != heads {
                return Err(Error::contract(format!("layer {l} has {} heads, expected {heads}", layer.len())));
            }
            if let Some(h) = layer.iter().position(|a| a.dim() != (n, n)) {
                return Err(Error::contract(format!("layer {l}, head {h} is not {n}x{n}")));
            }
        }
        Ok(AttentionTensor { layers, seq_len: n })
    }

    /// Fails with the first row that is negative or does not sum to 1 within `tol`.
    pub fn validate_rows(&self, tol: f64) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, a) in layer.iter().enumerate() {
                for (r, row) in a.rows().into_iter().enumerate() {
                    let sum = row.sum();
                    if !sum.is_finite() || (sum - 1.0).abs() > tol || row.iter().any(|&v| v < 0.0) {
                        return Err(Error::RowSum {
                            layer: l,
                            head: h,
                            row: r,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self) -> usize {
        self.layers[0].len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn layer(&self, l: usize) -> &[Array2<f64>] {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Vec<Array2<f64>>] {
        &self.layers
    }
}

/// Output of one attention-capturing forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendForwardResult {
    pub attention: AttentionTensor,
    pub tokens: TokenSequence,
    pub generated_word: String,
    pub query_index: usize,
    /// Input embeddings (seq_len × d); absent for file-based results.
    pub input_embeddings: Option<Array2<f64>>,
    /// Inclusive layer range the backend recommends for rollout.
    pub rollout_layers: (usize, usize),
}

impl BackendForwardResult {
    /// Checks every cross-field invariant of the result.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(ROW_SUM_TOLERANCE)
    }

    /// [`Self::validate`] with an explicit row-sum tolerance.
    pub fn validate_with(&self, row_tol: f64) -> Result<()> {
        self.attention.validate_rows(row_tol)?;
        if self.attention.seq_len() != self.tokens.len() {
            return Err(Error::contract(format!(
                "attention is {0}x{0} but the sequence has {1} tokens",
                self.attention.seq_len(),
                self.tokens.len()
            )));
        }
        if self.tokens.roles.get(self.query_index) != Some(&TokenRole::Generated) {
            return Err(Error::contract(format!(
                "query index {} is not a generated token",
                self.query_index
            )));
        }
        if self.generated_word.is_empty() || self.generated_word.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!(
                "generated word {:?} is not a single word",
                self.generated_word
            )));
        }
        let (l0, l1) = self.rollout_layers;
        if l0 > l1 || l1 >= self.attention.num_layers() {
            return Err(Error::contract(format!(
                "rollout layers {l0}..={l1} outside 0..{}",
                self.attention.num_layers()
            )));
        }
        Ok(())
    }
}

/// Where soft prompts enter the sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftPlacement {
    #[default]
    Prepend,
    Append,
}

/// Inputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardRequest<'a> {
    pub prompt: &'a str,
    pub frames: &'a [Array3<f64>],
    pub soft_prompts: Option<ArrayView2<'a, f64>>,
    pub placement: SoftPlacement,
    /// Spatial merge factor applied to visual token embeddings (1 = none).
    pub token_merge: usize,
}

impl<'a> ForwardRequest<'a> {
    pub fn new(prompt: &'a str, frames: &'a [Array3<f64>]) -> Self {
        ForwardRequest {
            prompt,
            frames,
            soft_prompts: None,
            placement: SoftPlacement::Prepend,
            token_merge: 1,
        }
    }

    pub fn with_soft_prompts(mut self, p: Option<ArrayView2<'a, f64>>, placement: SoftPlacement) -> Self {
        self.soft_prompts = p.filter(|p| p.nrows() > 0);
        self.placement = placement;
        self
    }

    pub fn with_token_merge(mut self, factor: usize) -> Self {
        self.token_merge = factor;
        self
    }
}

/// Gradient of a scalar objective with respect to each attention matrix.
/// `None` marks layers the objective does not depend on.
pub type AttentionGrad = Vec<Option<Vec<Array2<f64>>>>;

/// Objective evaluated on a forward result: returns its value and its
/// gradient with respect to the captured attention.
pub type AttentionObjective<'o> = dyn FnMut(&BackendForwardResult) -> Result<(f64, AttentionGrad)> + 'o;

pub trait LanguageBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Width d of token embeddings.
    fn embedding_dim(&self) -> usize;

    /// Visual token grid (H_v, W_v) for frames of the given pixel size.
    fn visual_grid(&self, height: usize, width: usize) -> Result<(usize, usize)>;

    fn default_rollout_layers(&self) -> (usize, usize);

    /// Token embeddings of `text`, one row per token.
    fn embed_text(&self, text: &str) -> Result<Array2<f64>>;

    /// Free-form answer to `prompt` about `frames` (no soft prompts).
    fn respond(&self, prompt: &str, frames: &[Array3<f64>]) -> Result<String>;

    fn forward(&self, req: &ForwardRequest<'_>) -> Result<BackendForwardResult>;

    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        None
    }
}

pub trait DifferentiableBackend: Send + Sync {
    /// Runs `req`, evaluates `objective` on the result and returns its value
    /// together with the gradient with respect to the soft prompt rows.
    fn soft_prompt_vjp(
        &self,
        req: &ForwardRequest<'_>,
        objective: &mut AttentionObjective<'_>,
    ) -> Result<(f64, Array2<f64>)>;
}

/// Propagation direction for [`Segmenter::propagate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Masks produced by propagation: frame index, probability mask, logit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedMask {
    pub frame: usize,
    pub probability: Array2<f64>,
    pub logits: Array2<f64>,
}

pub trait Segmenter: Send + Sync {
    /// Probability mask at native resolution for a point prompt.
    fn segment_from_point(&self, frame: usize, x: f64, y: f64) -> Result<Array2<f64>>;

    /// Masks for every frame strictly after (forward) or before (backward)
    /// `seed_frame`, ordered away from the seed.
    fn propagate(&self, seed_mask: &Array2<f64>, seed_frame: usize, direction: Direction) -> Result<Vec<PropagatedMask>>;

    fn num_frames(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn token_sequence_checks_layout() {
        let layout = VisualLayout {
            frames: 1,
            height: 1,
            width: 2,
        };
        let roles = vec![TokenRole::Text, TokenRole::Visual, TokenRole::Visual, TokenRole::Generated];
        assert!(TokenSequence::new(vec![0; 4], roles.clone(), layout).is_ok());
        assert!(TokenSequence::new(vec![0; 3], roles.clone(), layout).is_err());
        let wrong = VisualLayout { width: 3, ..layout };
        assert!(TokenSequence::new(vec![0; 4], roles, wrong).is_err());
    }

    #[test]
    fn attention_row_validation_names_row() {
        let good = arr2(&[[1.0, 0.0], [0.5, 0.5]]);
        let bad = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let t = AttentionTensor::new(vec![vec![good.clone()], vec![good.clone(), bad.clone()]]);
        assert!(t.is_err());
        let t = AttentionTensor::new(vec![vec![good.clone()], vec![bad]]).unwrap();
        match t.validate_rows(1e-5) {
            Err(Error::RowSum { layer, head, row, .. }) => assert_eq!((layer, head, row), (1, 0, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(AttentionTensor::new(vec![vec![arr2(&[[1.0, 0.0]])]]).is_err());
    }
}
