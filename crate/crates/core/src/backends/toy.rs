//! Deterministic toy vision-language transformer with attention capture.
//!
//! Four causal layers, two heads each, no normalisation. The embedding
//! space reserves fixed dimensions for visual color and position, word
//! color and position, token-type flags and a constant bias; the remaining
//! "free" dimensions carry random features. Random projections only write
//! into the free dimensions, so the structured dimensions stay readable by
//! the upper layers:
//!
//! * layer 0, head 0 lets the generated token gather color and position
//!   words from the prompt;
//! * layers 2 and 3, head 0 match the gathered word color and position
//!   against the visual tokens;
//! * layers 2 and 3, head 1 spread mass over random keys and the sink
//!   token, which is the distraction the soft prompts learn to suppress.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::reasoner;
use super::vocab::{self, VOCAB};
use super::{
    AttentionGrad, AttentionObjective, AttentionTensor, BackendForwardResult, DifferentiableBackend,
    ForwardRequest, LanguageBackend, SoftPlacement, TokenRole, TokenSequence, VisualLayout,
};
use crate::error::{Error, Result};
use crate::video::patch_colors;

pub const D_MODEL: usize = 32;
const D_HEAD: usize = 16;
const HEADS: usize = 2;
const LAYERS: usize = 4;
const D_FF: usize = 64;
const FREE: Range<usize> = 17..32;
const N_FREE: usize = 15;
const POS_TABLE: usize = 8;

// embedding dimensions
const VIS_RGB: usize = 0;
const VIS_X: usize = 3;
const VIS_Y: usize = 4;
const TIME: usize = 5;
const WORD_RGB: usize = 6;
const WORD_POS: usize = 9;
const FLAG_VISUAL: usize = 11;
const FLAG_TEXT: usize = 12;
const FLAG_GENERATED: usize = 13;
const FLAG_ATTRIBUTE: usize = 14;
const FLAG_SINK: usize = 15;
const BIAS: usize = 16;

/// Construction parameters of [`ToyLvlm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub seed: u64,
    /// Pixel size of one visual token.
    pub patch: usize,
    pub base_noise: f64,
    pub gather_gain: f64,
    pub ground_gain: f64,
    pub position_weight: f64,
    pub junk_gain: f64,
    pub sink_gain: f64,
    pub visual_bias: f64,
    pub word_noise: f64,
    pub visual_noise: f64,
    /// Zero all query and key projections, making attention input-independent.
    pub uniform_attention: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 1234,
            patch: 8,
            base_noise: 0.02,
            gather_gain: 5.0,
            ground_gain: 7.0,
            position_weight: 0.5,
            junk_gain: 1.0,
            sink_gain: 2.0,
            visual_bias: 1.0,
            word_noise: 0.5,
            visual_noise: 0.5,
            uniform_attention: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    wq: Vec<Array2<f64>>,
    wk: Vec<Array2<f64>>,
    wv: Vec<Array2<f64>>,
    wo: Vec<Array2<f64>>,
    w1: Array2<f64>,
    w2: Array2<f64>,
}

/// The toy backend. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ToyLvlm {
    cfg: ToyConfig,
    embeddings: Array2<f64>,
    visual_pos: Array2<f64>,
    layers: Vec<Layer>,
}

struct Normal<'r>(&'r mut ChaCha8Rng);

impl Normal<'_> {
    fn matrix(&mut self, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.0.sample::<f64, _>(StandardNormal) * scale)
    }

    fn vector(&mut self, len: usize, scale: f64) -> Array1<f64> {
        Array1::from_shape_simple_fn(len, || self.0.sample::<f64, _>(StandardNormal) * scale)
    }
}

impl ToyLvlm {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        if cfg.patch == 0 {
            return Err(Error::Config("toy patch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut rn = Normal(&mut rng);

        let mut e = Array2::zeros((VOCAB.len(), D_MODEL));
        e.slice_mut(s![.., FREE]).assign(&rn.matrix(VOCAB.len(), N_FREE, cfg.word_noise));
        e.column_mut(FLAG_TEXT).fill(1.0);
        e.column_mut(BIAS).fill(1.0);
        for c in crate::eval::Color::ALL {
            let i = vocab::id(c.name());
            for (k, v) in c.rgb().iter().enumerate() {
                e[[i, WORD_RGB + k]] = v - 0.5;
            }
            e[[i, FLAG_ATTRIBUTE]] = 1.0;
        }
        for (w, x, y) in [("left", -1.0, 0.0), ("right", 1.0, 0.0), ("top", 0.0, -1.0), ("bottom", 0.0, 1.0)] {
            let i = vocab::id(w);
            e[[i, WORD_POS]] = x;
            e[[i, WORD_POS + 1]] = y;
            e[[i, FLAG_ATTRIBUTE]] = 1.0;
        }
        e[[vocab::BOS, FLAG_SINK]] = 1.0;
        let visual_pos = rn.matrix(POS_TABLE * POS_TABLE, N_FREE, cfg.visual_noise);

        let ns = cfg.base_noise;
        let mut layers = Vec::with_capacity(LAYERS);
        for l in 0..LAYERS {
            let mut wq: Vec<_> = (0..HEADS).map(|_| rn.matrix(D_MODEL, D_HEAD, ns)).collect();
            let mut wk: Vec<_> = (0..HEADS).map(|_| rn.matrix(D_MODEL, D_HEAD, ns)).collect();
            let mut wv: Vec<_> = (0..HEADS).map(|_| rn.matrix(D_MODEL, D_HEAD, ns)).collect();
            let mut wo: Vec<Array2<f64>> = (0..HEADS)
                .map(|_| {
                    let mut w = Array2::zeros((D_HEAD, D_MODEL));
                    w.slice_mut(s![.., FREE]).assign(&rn.matrix(D_HEAD, N_FREE, ns));
                    w
                })
                .collect();
            let mut scramble = |h: usize, sc: f64, rn: &mut Normal<'_>| {
                wq[h] += &rn.matrix(D_MODEL, D_HEAD, sc);
                wk[h] += &rn.matrix(D_MODEL, D_HEAD, sc);
                wv[h] += &rn.matrix(D_MODEL, D_HEAD, sc);
                let mut free = wo[h].slice_mut(s![.., FREE]);
                free += &rn.matrix(D_HEAD, N_FREE, sc);
            };
            match l {
                0 => {
                    scramble(1, 0.3, &mut rn);
                    wq[0][[FLAG_GENERATED, 0]] += cfg.gather_gain;
                    wk[0][[FLAG_ATTRIBUTE, 0]] += cfg.gather_gain;
                    for i in 0..5 {
                        wv[0][[WORD_RGB + i, 1 + i]] += 1.0;
                        wo[0][[1 + i, WORD_RGB + i]] += 1.0;
                    }
                }
                1 => {
                    scramble(0, 0.2, &mut rn);
                    scramble(1, 0.2, &mut rn);
                }
                _ => {
                    let b = cfg.ground_gain;
                    for i in 0..3 {
                        wq[0][[WORD_RGB + i, i]] += b;
                        wk[0][[VIS_RGB + i, i]] += b;
                    }
                    for i in 0..2 {
                        wq[0][[WORD_POS + i, 3 + i]] += b * cfg.position_weight;
                        wk[0][[VIS_X + i, 3 + i]] += b * cfg.position_weight;
                    }
                    let jq = rn.vector(D_HEAD - 2, cfg.junk_gain);
                    let mut row = wq[1].slice_mut(s![BIAS, 2..]);
                    row += &jq;
                    let jk = rn.matrix(N_FREE, D_HEAD - 2, cfg.junk_gain);
                    let mut block = wk[1].slice_mut(s![FREE, 2..]);
                    block += &jk;
                    wq[1][[BIAS, 0]] += cfg.sink_gain;
                    wk[1][[FLAG_SINK, 0]] += cfg.sink_gain;
                    wq[1][[BIAS, 1]] += 2.0;
                    wk[1][[FLAG_VISUAL, 1]] += cfg.visual_bias;
                    wv[1] += &rn.matrix(D_MODEL, D_HEAD, 0.2);
                    let mut free = wo[1].slice_mut(s![.., FREE]);
                    free += &rn.matrix(D_HEAD, N_FREE, 0.2);
                }
            }
            let w1 = rn.matrix(D_MODEL, D_FF, 0.1);
            let mut w2 = Array2::zeros((D_FF, D_MODEL));
            w2.slice_mut(s![.., FREE]).assign(&rn.matrix(D_FF, N_FREE, 0.1));
            if cfg.uniform_attention {
                wq.iter_mut().chain(wk.iter_mut()).for_each(|w| w.fill(0.0));
            }
            layers.push(Layer { wq, wk, wv, wo, w1, w2 });
        }
        Ok(ToyLvlm {
            cfg,
            embeddings: e,
            visual_pos,
            layers,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    /// SHA-256 over every parameter's bit pattern.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |a: &Array2<f64>| a.iter().for_each(|v| h.update(v.to_bits().to_le_bytes()));
        feed(&self.embeddings);
        feed(&self.visual_pos);
        for l in &self.layers {
            for w in l.wq.iter().chain(&l.wk).chain(&l.wv).chain(&l.wo) {
                feed(w);
            }
            feed(&l.w1);
            feed(&l.w2);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn word_embedding(&self, id: usize) -> Array1<f64> {
        self.embeddings.row(id).to_owned()
    }

    /// Embeds one frame's visual tokens, optionally merged `merge × merge`.
    fn visual_tokens(&self, frame: &Array3<f64>, time: f64, merge: usize) -> Result<(Array2<f64>, usize, usize)> {
        let colors = patch_colors(frame, self.cfg.patch)?;
        let (gh, gw, _) = colors.dim();
        let mut x = Array2::zeros((gh * gw, D_MODEL));
        for r in 0..gh {
            for c in 0..gw {
                let i = r * gw + c;
                for k in 0..3 {
                    x[[i, VIS_RGB + k]] = colors[[r, c, k]] - 0.5;
                }
                x[[i, VIS_X]] = (c as f64 + 0.5) / gw as f64 * 2.0 - 1.0;
                x[[i, VIS_Y]] = (r as f64 + 0.5) / gh as f64 * 2.0 - 1.0;
                x[[i, TIME]] = time;
                x[[i, FLAG_VISUAL]] = 1.0;
                x[[i, BIAS]] = 1.0;
                let rr = (((r as f64 + 0.5) / gh as f64 * POS_TABLE as f64) as usize).min(POS_TABLE - 1);
                let cc = (((c as f64 + 0.5) / gw as f64 * POS_TABLE as f64) as usize).min(POS_TABLE - 1);
                x.slice_mut(s![i, FREE]).assign(&self.visual_pos.row(rr * POS_TABLE + cc));
            }
        }
        if merge == 1 {
            return Ok((x, gh, gw));
        }
        if merge == 0 || gh % merge != 0 || gw % merge != 0 {
            return Err(Error::contract(format!(
                "visual grid {gh}x{gw} cannot be merged by {merge}"
            )));
        }
        let (mh, mw) = (gh / merge, gw / merge);
        let mut pooled = Array2::zeros((mh * mw, D_MODEL));
        for r in 0..gh {
            for c in 0..gw {
                let mut dst = pooled.row_mut((r / merge) * mw + c / merge);
                dst += &x.row(r * gw + c);
            }
        }
        pooled.mapv_inplace(|v| v / (merge * merge) as f64);
        Ok((pooled, mh, mw))
    }

    fn build(&self, req: &ForwardRequest<'_>) -> Result<(Array2<f64>, TokenSequence, String)> {
        if req.frames.is_empty() {
            return Err(Error::contract("forward needs at least one frame"));
        }
        let soft = req.soft_prompts;
        if let Some(p) = soft {
            if p.ncols() != D_MODEL {
                return Err(Error::contract(format!(
                    "soft prompts have width {}, backend expects {D_MODEL}",
                    p.ncols()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("soft prompts contain non-finite entries"));
            }
        }
        let mut rows: Vec<Array1<f64>> = Vec::new();
        let mut ids = Vec::new();
        let mut roles = Vec::new();
        let push_soft = |rows: &mut Vec<Array1<f64>>, ids: &mut Vec<usize>, roles: &mut Vec<TokenRole>| {
            if let Some(p) = soft {
                for r in p.rows() {
                    rows.push(r.to_owned());
                    ids.push(vocab::SOFT);
                    roles.push(TokenRole::SoftPrompt);
                }
            }
        };
        let push_word = |rows: &mut Vec<Array1<f64>>, ids: &mut Vec<usize>, roles: &mut Vec<TokenRole>, id: usize| {
            rows.push(self.word_embedding(id));
            ids.push(id);
            roles.push(TokenRole::Text);
        };
        if req.placement == SoftPlacement::Prepend {
            push_soft(&mut rows, &mut ids, &mut roles);
        }
        push_word(&mut rows, &mut ids, &mut roles, vocab::BOS);
        push_word(&mut rows, &mut ids, &mut roles, vocab::VISION_START);
        let n_frames = req.frames.len();
        let mut grid = (0, 0);
        for (k, frame) in req.frames.iter().enumerate() {
            let time = if n_frames == 1 {
                0.0
            } else {
                k as f64 / (n_frames - 1) as f64 * 2.0 - 1.0
            };
            let (v, gh, gw) = self.visual_tokens(frame, time, req.token_merge)?;
            if k > 0 && (gh, gw) != grid {
                return Err(Error::contract("frames in one forward must share a resolution"));
            }
            grid = (gh, gw);
            for r in v.rows() {
                rows.push(r.to_owned());
                ids.push(vocab::IMAGE);
                roles.push(TokenRole::Visual);
            }
        }
        push_word(&mut rows, &mut ids, &mut roles, vocab::VISION_END);
        for id in vocab::tokenize(req.prompt) {
            push_word(&mut rows, &mut ids, &mut roles, id);
        }
        if req.placement == SoftPlacement::Append {
            push_soft(&mut rows, &mut ids, &mut roles);
        }
        push_word(&mut rows, &mut ids, &mut roles, vocab::ASSISTANT);
        let word = query_word(req.prompt);
        let wid = vocab::id(&word);
        let mut g = self.word_embedding(wid);
        g[FLAG_TEXT] = 0.0;
        g[FLAG_GENERATED] = 1.0;
        rows.push(g);
        ids.push(wid);
        roles.push(TokenRole::Generated);

        let mut x = Array2::zeros((rows.len(), D_MODEL));
        for (i, r) in rows.iter().enumerate() {
            x.row_mut(i).assign(r);
        }
        let layout = VisualLayout {
            frames: n_frames,
            height: grid.0,
            width: grid.1,
        };
        Ok((x, TokenSequence::new(ids, roles, layout)?, word))
    }

    fn run(&self, x: &Array2<f64>) -> Vec<LayerCache> {
        let n = x.nrows();
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(LAYERS);
        for layer in &self.layers {
            let mut out = Array2::<f64>::zeros((n, D_MODEL));
            let mut q = Vec::with_capacity(HEADS);
            let mut k = Vec::with_capacity(HEADS);
            let mut v = Vec::with_capacity(HEADS);
            let mut a = Vec::with_capacity(HEADS);
            for hd in 0..HEADS {
                let qh = h.dot(&layer.wq[hd]);
                let kh = h.dot(&layer.wk[hd]);
                let vh = h.dot(&layer.wv[hd]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|s| s * SCALE);
                causal_softmax(&mut scores);
                out += &scores.dot(&vh).dot(&layer.wo[hd]);
                q.push(qh);
                k.push(kh);
                v.push(vh);
                a.push(scores);
            }
            let h_in = std::mem::replace(&mut h, Array2::zeros((0, 0)));
            let h1 = &h_in + &out;
            let t = h1.dot(&layer.w1).mapv(f64::tanh);
            h = &h1 + &t.dot(&layer.w2);
            caches.push(LayerCache { q, k, v, a, t });
        }
        caches
    }

    fn result_from(&self, x: Array2<f64>, tokens: TokenSequence, word: String, caches: &[LayerCache]) -> Result<BackendForwardResult> {
        let attention = AttentionTensor::new(caches.iter().map(|c| c.a.clone()).collect())?;
        let query_index = tokens.len() - 1;
        let result = BackendForwardResult {
            attention,
            tokens,
            generated_word: word,
            query_index,
            input_embeddings: Some(x),
            rollout_layers: self.default_rollout_layers(),
        };
        result.validate()?;
        Ok(result)
    }

    /// Gradient of the objective with respect to the input embeddings.
    fn backward(&self, caches: &[LayerCache], grad_attn: &AttentionGrad, n: usize) -> Result<Array2<f64>> {
        if grad_attn.len() != LAYERS {
            return Err(Error::contract(format!(
                "attention gradient has {} layers, backend has {LAYERS}",
                grad_attn.len()
            )));
        }
        let mut g = Array2::<f64>::zeros((n, D_MODEL));
        let mut live = false;
        for (l, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let mut g1 = g.clone();
            if live {
                let gt = g.dot(&layer.w2.t());
                let gz = &gt * &cache.t.mapv(|t| 1.0 - t * t);
                g1 += &gz.dot(&layer.w1.t());
            }
            let mut g_in = g1.clone();
            let ext = grad_attn[l].as_ref();
            if let Some(e) = ext {
                if e.len() != HEADS || e.iter().any(|m| m.dim() != (n, n)) {
                    return Err(Error::contract(format!("attention gradient for layer {l} has the wrong shape")));
                }
            }
            for hd in 0..HEADS {
                let a = &cache.a[hd];
                let mut ga = ext.map(|e| e[hd].clone());
                if live {
                    let go = g1.dot(&layer.wo[hd].t());
                    let from_values = go.dot(&cache.v[hd].t());
                    ga = Some(match ga {
                        Some(x) => x + from_values,
                        None => from_values,
                    });
                    let gv = a.t().dot(&go);
                    g_in += &gv.dot(&layer.wv[hd].t());
                }
                if let Some(ga) = ga {
                    let gs = softmax_backward(a, &ga) * SCALE;
                    let gq = gs.dot(&cache.k[hd]);
                    let gk = gs.t().dot(&cache.q[hd]);
                    g_in += &gq.dot(&layer.wq[hd].t());
                    g_in += &gk.dot(&layer.wk[hd].t());
                }
            }
            live = live || ext.is_some();
            g = g_in;
        }
        Ok(g)
    }
}

const SCALE: f64 = 0.25; // 1 / sqrt(D_HEAD)

struct LayerCache {
    q: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    a: Vec<Array2<f64>>,
    t: Array2<f64>,
}

fn causal_softmax(scores: &mut Array2<f64>) {
    for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.slice_mut(s![..=i]).mapv_inplace(|v| v / sum);
    }
}

/// dS = A ⊙ (dA − rowsum(dA ⊙ A)).
fn softmax_backward(a: &Array2<f64>, ga: &Array2<f64>) -> Array2<f64> {
    let dot = (a * ga).sum_axis(Axis(1));
    let mut out = ga.clone();
    Zip::from(out.rows_mut())
        .and(a.rows())
        .and(&dot)
        .for_each(|mut o, ar, &d| {
            Zip::from(&mut o).and(ar).for_each(|ov, &av| *ov = av * (*ov - d));
        });
    out
}

/// The one-word answer: first shape noun among the attribute line, then the
/// expression line, then the whole prompt; otherwise the generic noun.
pub(crate) fn query_word(prompt: &str) -> String {
    let mut attrs = Vec::new();
    let mut expr = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Distinguishing attributes of the target:") {
            attrs.extend(vocab::words(rest));
        } else if let Some(rest) = line.strip_prefix("Expression:") {
            expr.extend(vocab::words(rest));
        }
    }
    let scoped = attrs.iter().chain(expr.iter());
    let all = vocab::words(prompt);
    let pick = |mut it: Box<dyn Iterator<Item = &String> + '_>| {
        it.find(|w| vocab::SHAPE_WORDS.contains(&w.as_str())).cloned()
    };
    if attrs.is_empty() && expr.is_empty() {
        pick(Box::new(all.iter()))
    } else {
        pick(Box::new(scoped))
    }
    .unwrap_or_else(|| vocab::FALLBACK_NOUN.to_string())
}

impl LanguageBackend for ToyLvlm {
    fn name(&self) -> &str {
        "toy"
    }

    fn embedding_dim(&self) -> usize {
        D_MODEL
    }

    fn visual_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let p = self.cfg.patch;
        if !height.is_multiple_of(p) || !width.is_multiple_of(p) || height == 0 || width == 0 {
            return Err(Error::contract(format!(
                "frame {height}x{width} is not a multiple of the {p}px patch"
            )));
        }
        Ok((height / p, width / p))
    }

    fn default_rollout_layers(&self) -> (usize, usize) {
        (2, 3)
    }

    fn embed_text(&self, text: &str) -> Result<Array2<f64>> {
        let ids = vocab::tokenize(text);
        let mut out = Array2::zeros((ids.len(), D_MODEL));
        for (i, id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&self.embeddings.row(*id));
        }
        Ok(out)
    }

    fn respond(&self, prompt: &str, frames: &[Array3<f64>]) -> Result<String> {
        if frames.is_empty() {
            return Err(Error::contract("respond needs at least one frame"));
        }
        if prompt.contains("Reasoning:") && prompt.contains("Attributes:") {
            let expression = prompt
                .lines()
                .find_map(|l| l.trim().strip_prefix("Expression:"))
                .map(str::trim)
                .unwrap_or("");
            return Ok(reasoner::answer(expression, frames));
        }
        Ok(query_word(prompt))
    }

    fn forward(&self, req: &ForwardRequest<'_>) -> Result<BackendForwardResult> {
        let (x, tokens, word) = self.build(req)?;
        let caches = self.run(&x);
        self.result_from(x, tokens, word, &caches)
    }

    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        Some(self)
    }
}

impl DifferentiableBackend for ToyLvlm {
    fn soft_prompt_vjp(&self, req: &ForwardRequest<'_>, objective: &mut AttentionObjective<'_>) -> Result<(f64, Array2<f64>)> {
        let (x, tokens, word) = self.build(req)?;
        let n = x.nrows();
        let caches = self.run(&x);
        let result = self.result_from(x, tokens, word, &caches)?;
        let (value, grad_attn) = objective(&result)?;
        let gx = self.backward(&caches, &grad_attn, n)?;
        let soft = result.tokens.soft_indices();
        let mut gp = Array2::zeros((soft.len(), D_MODEL));
        for (row, &i) in soft.iter().enumerate() {
            gp.row_mut(row).assign(&gx.row(i));
        }
        Ok((value, gp))
    }
}
