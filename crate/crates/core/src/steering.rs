//! Soft prompt training against ground-truth masks with a frozen backend.

use ndarray::{Array2, Array3, ArrayView3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{AttentionGrad, BackendForwardResult, ForwardRequest, LanguageBackend, SoftPlacement};
use crate::error::{Error, Result};
use crate::numerics::{area_downsample, min_max, minmax_normalize, pearson_corr};
use crate::prompting::SoftPromptBank;
use crate::rollout::{keyframes, query_maps, rollout_row_vjp, RolloutConfig};
use crate::video::Video;

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub effective_batch: usize,
    pub warmup_fraction: f64,
    pub n_p: usize,
    pub dice_smoothing: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Steps per emitted [`TrainRecord`].
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            steps: 6500,
            effective_batch: 4,
            warmup_fraction: 0.03,
            n_p: 64,
            dice_smoothing: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.effective_batch == 0 || self.n_p == 0 || self.log_every == 0 {
            return bad("effective_batch, n_p and log_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if !(self.dice_smoothing > 0.0) || self.weight_decay < 0.0 {
            return bad("dice_smoothing must be positive and weight_decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("AdamW betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.steps as f64).round() as usize).max(1)
    }

    /// Linear warmup from 0 to the peak, then cosine decay to 0 at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps().min(self.steps.max(1));
        if step < w {
            return self.learning_rate * step as f64 / w as f64;
        }
        let span = self.steps.saturating_sub(w).max(1) as f64;
        let p = ((step - w) as f64 / span).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Loss components; `loss = bce + dice`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub bce: f64,
    pub dice: f64,
}

impl LossParts {
    fn add(&mut self, other: LossParts, w: f64) {
        self.bce += w * other.bce;
        self.dice += w * other.dice;
        self.loss = self.bce + self.dice;
    }
}

fn check_pair(s: &ArrayView3<'_, f64>, g: &ArrayView3<'_, f64>) -> Result<()> {
    if s.dim() != g.dim() || s.is_empty() {
        return Err(Error::contract(format!(
            "loss inputs have shapes {:?} and {:?}",
            s.dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// BCE (probability clamp [`BCE_EPS`], mean) plus Dice with smoothing `sigma`.
pub fn grounding_loss(s: ArrayView3<'_, f64>, g: ArrayView3<'_, f64>, sigma: f64) -> Result<LossParts> {
    grounding_loss_grad(s, g, sigma).map(|(p, _)| p)
}

/// [`grounding_loss`] and its gradient with respect to `s`.
pub fn grounding_loss_grad(s: ArrayView3<'_, f64>, g: ArrayView3<'_, f64>, sigma: f64) -> Result<(LossParts, Array3<f64>)> {
    check_pair(&s, &g)?;
    let n = s.len() as f64;
    let mut bce = 0.0;
    let (mut inter, mut ss, mut gs) = (0.0, 0.0, 0.0);
    Zip::from(&s).and(&g).for_each(|&sv, &gv| {
        let p = sv.clamp(BCE_EPS, 1.0 - BCE_EPS);
        bce -= gv * p.ln() + (1.0 - gv) * (1.0 - p).ln();
        inter += sv * gv;
        ss += sv;
        gs += gv;
    });
    bce /= n;
    let num = 2.0 * inter + sigma;
    let den = ss + gs + sigma;
    let dice = 1.0 - num / den;
    let mut grad = Array3::zeros(s.dim());
    Zip::from(&mut grad).and(&s).and(&g).for_each(|d, &sv, &gv| {
        let db = if sv > BCE_EPS && sv < 1.0 - BCE_EPS {
            (-gv / sv + (1.0 - gv) / (1.0 - sv)) / n
        } else {
            0.0
        };
        let dd = -(2.0 * gv * den - num) / (den * den);
        *d = db + dd;
    });
    Ok((
        LossParts {
            loss: bce + dice,
            bce,
            dice,
        },
        grad,
    ))
}

/// Backpropagates through min-max normalization.
fn minmax_backward(x: &Array3<f64>, normalized: &Array3<f64>, grad: &Array3<f64>) -> Array3<f64> {
    let (mn, mx) = min_max(x);
    let imin = x.iter().position(|&v| v == mn).unwrap_or(0);
    let imax = x.iter().position(|&v| v == mx).unwrap_or(0);
    let delta = mx - mn;
    if delta <= 0.0 {
        return Array3::zeros(x.dim());
    }
    let (mut to_min, mut to_max) = (0.0, 0.0);
    Zip::from(grad).and(normalized).for_each(|&gv, &nv| {
        to_min += gv * (1.0 - nv);
        to_max += gv * nv;
    });
    let mut out = grad.mapv(|v| v / delta);
    let flat = out.as_slice_mut().expect("standard layout");
    flat[imin] -= to_min / delta;
    flat[imax] -= to_max / delta;
    out
}

/// Loss of a raw attention map after min-max normalization, with its
/// gradient with respect to the raw map.
pub fn map_loss_grad(raw: &Array3<f64>, target: ArrayView3<'_, f64>, sigma: f64) -> Result<(LossParts, Array3<f64>)> {
    let norm = minmax_normalize(raw);
    let (parts, g_norm) = grounding_loss_grad(norm.view(), target, sigma)?;
    Ok((parts, minmax_backward(raw, &norm, &g_norm)))
}

/// One loss term: a forward over `frames` whose query map is compared with `target`.
#[derive(Debug, Clone, Copy)]
pub struct BranchTerm<'a> {
    pub frames: &'a [ndarray::Array3<f64>],
    pub prompt: &'a str,
    /// Resized ground truth in the map's `frames × h × w` shape.
    pub target: ArrayView3<'a, f64>,
    pub token_merge: usize,
}

struct TermEval {
    parts: LossParts,
    raw: Array3<f64>,
}

fn evaluate(
    result: &BackendForwardResult,
    term: &BranchTerm<'_>,
    rollout: &RolloutConfig,
    sigma: f64,
    want_grad: bool,
) -> Result<(TermEval, Option<AttentionGrad>)> {
    let range = rollout.range_for(result);
    let raw = query_maps(result, range)?;
    let (parts, g_raw) = map_loss_grad(&raw, term.target, sigma)?;
    let grad = if want_grad {
        let mut g_row = ndarray::Array1::zeros(result.tokens.len());
        for (&i, &v) in result.tokens.visual_indices().iter().zip(g_raw.iter()) {
            g_row[i] = v;
        }
        Some(rollout_row_vjp(&result.attention, range, result.query_index, g_row.view())?)
    } else {
        None
    };
    Ok((TermEval { parts, raw }, grad))
}

fn request<'a, 'b: 'a>(bank: &'a Array2<f64>, term: &BranchTerm<'b>, placement: SoftPlacement) -> ForwardRequest<'a> {
    ForwardRequest::new(term.prompt, term.frames)
        .with_soft_prompts(Some(bank.view()), placement)
        .with_token_merge(term.token_merge)
}

/// Loss of one term at the given prompt embeddings.
pub fn branch_loss(
    embeddings: &Array2<f64>,
    term: &BranchTerm<'_>,
    backend: &dyn LanguageBackend,
    rollout: &RolloutConfig,
    sigma: f64,
) -> Result<LossParts> {
    let res = backend.forward(&request(embeddings, term, rollout.soft_placement))?;
    Ok(evaluate(&res, term, rollout, sigma, false)?.0.parts)
}

/// Loss of one term and its gradient with respect to the bank's embeddings.
pub fn loss_gradient(
    bank: &SoftPromptBank,
    term: &BranchTerm<'_>,
    backend: &dyn LanguageBackend,
    rollout: &RolloutConfig,
    sigma: f64,
) -> Result<(LossParts, Array2<f64>)> {
    let (parts, grad, _) = loss_gradient_raw(&bank.embeddings, term, backend, rollout, sigma)?;
    Ok((parts, grad))
}

fn loss_gradient_raw(
    embeddings: &Array2<f64>,
    term: &BranchTerm<'_>,
    backend: &dyn LanguageBackend,
    rollout: &RolloutConfig,
    sigma: f64,
) -> Result<(LossParts, Array2<f64>, Array3<f64>)> {
    let diff = backend.differentiable().ok_or_else(|| {
        Error::Capability(format!("backend {} cannot differentiate soft prompts", backend.name()))
    })?;
    let mut seen: Option<TermEval> = None;
    let req = request(embeddings, term, rollout.soft_placement);
    let (_, grad) = diff.soft_prompt_vjp(&req, &mut |res| {
        let (ev, g) = evaluate(res, term, rollout, sigma, true)?;
        let loss = ev.parts.loss;
        seen = Some(ev);
        Ok((loss, g.expect("gradient requested")))
    })?;
    let ev = seen.ok_or_else(|| Error::contract("backend never evaluated the objective"))?;
    if grad.dim() != embeddings.dim() {
        return Err(Error::contract("backend returned a gradient of the wrong shape"));
    }
    Ok((ev.parts, grad, ev.raw))
}

/// Central finite-difference estimate of `d loss / d P[r, c]`.
pub fn finite_difference(
    embeddings: &Array2<f64>,
    entry: (usize, usize),
    h: f64,
    term: &BranchTerm<'_>,
    backend: &dyn LanguageBackend,
    rollout: &RolloutConfig,
    sigma: f64,
) -> Result<f64> {
    let mut p = embeddings.clone();
    p[entry] += h;
    let up = branch_loss(&p, term, backend, rollout, sigma)?.loss;
    p[entry] = embeddings[entry] - h;
    let down = branch_loss(&p, term, backend, rollout, sigma)?.loss;
    Ok((up - down) / (2.0 * h))
}

/// Decoupled-weight-decay Adam state for one bank.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(dim: (usize, usize)) -> Self {
        AdamW {
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut Array2<f64>, g: &Array2<f64>, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        Zip::from(p)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *p -= lr * cfg.weight_decay * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
            });
    }
}

/// One training example with ground truth at native resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub video: Video,
    /// Query prompt the maps are computed for.
    pub prompt: String,
    /// Per-frame target masks in `[0, 1]`, one per video frame.
    pub masks: Vec<Array2<f64>>,
}

/// A sample resolved into both branches' keyframes and resized targets.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub prompt: String,
    pub frame_inputs: Vec<Array3<f64>>,
    /// `1 × H_v × W_v` targets, one per frame keyframe.
    pub frame_targets: Vec<Array3<f64>>,
    pub video_inputs: Vec<Array3<f64>>,
    /// `T_v × H̃_v × W̃_v`.
    pub video_target: Array3<f64>,
    pub video_merge: usize,
}

impl PreparedSample {
    pub fn frame_term(&self, k: usize) -> BranchTerm<'_> {
        BranchTerm {
            frames: std::slice::from_ref(&self.frame_inputs[k]),
            prompt: &self.prompt,
            target: self.frame_targets[k].view(),
            token_merge: 1,
        }
    }

    pub fn video_term(&self) -> BranchTerm<'_> {
        BranchTerm {
            frames: &self.video_inputs,
            prompt: &self.prompt,
            target: self.video_target.view(),
            token_merge: self.video_merge,
        }
    }
}

/// Area factor between a native mask and a token grid of `grid_h` rows.
fn grid_factor(h: usize, w: usize, grid: (usize, usize)) -> Result<usize> {
    if grid.0 == 0 || !h.is_multiple_of(grid.0) || !w.is_multiple_of(grid.1) || h / grid.0 != w / grid.1 {
        return Err(Error::contract(format!(
            "frame {h}x{w} does not tile into a {}x{} token grid",
            grid.0, grid.1
        )));
    }
    Ok(h / grid.0)
}

/// Resizes per-frame masks at `keys` onto the token grid.
pub fn resized_targets(masks: &[Array2<f64>], keys: &[usize], grid: (usize, usize)) -> Result<Array3<f64>> {
    let (h, w) = masks
        .first()
        .map(|m| m.dim())
        .ok_or_else(|| Error::contract("no ground-truth masks"))?;
    let f = grid_factor(h, w, grid)?;
    let mut out = Array3::zeros((keys.len(), grid.0, grid.1));
    for (i, &t) in keys.iter().enumerate() {
        let m = masks
            .get(t)
            .ok_or_else(|| Error::contract(format!("no ground-truth mask for frame {t}")))?;
        out.index_axis_mut(ndarray::Axis(0), i).assign(&area_downsample(m.view(), f)?);
    }
    Ok(out)
}

pub fn prepare_sample(sample: &TrainSample, backend: &dyn LanguageBackend, rollout: &RolloutConfig) -> Result<PreparedSample> {
    let video = &sample.video;
    if sample.masks.len() != video.len() {
        return Err(Error::Dataset(format!(
            "{}: {} masks for {} frames",
            sample.id,
            sample.masks.len(),
            video.len()
        )));
    }
    let grid = backend.visual_grid(video.height(), video.width())?;
    let merge = rollout.video_downsample;
    if grid.0 % merge != 0 || grid.1 % merge != 0 {
        return Err(Error::contract(format!(
            "token grid {}x{} cannot be merged by {merge}",
            grid.0, grid.1
        )));
    }
    let fkeys = keyframes(video.len(), rollout.frame_keyframes);
    let vkeys = keyframes(video.len(), rollout.video_keyframes);
    let frame_stack = resized_targets(&sample.masks, &fkeys, grid)?;
    let frame_targets = frame_stack
        .outer_iter()
        .map(|m| m.insert_axis(ndarray::Axis(0)).to_owned())
        .collect();
    Ok(PreparedSample {
        id: sample.id.clone(),
        prompt: sample.prompt.clone(),
        frame_inputs: fkeys.iter().map(|&t| video.frame(t).clone()).collect(),
        frame_targets,
        video_inputs: vkeys.iter().map(|&t| video.frame(t).clone()).collect(),
        video_target: resized_targets(&sample.masks, &vkeys, (grid.0 / merge, grid.1 / merge))?,
        video_merge: merge,
    })
}

/// Metrics averaged over one logging interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub bce: f64,
    pub dice: f64,
    pub mean_corr_frame: f64,
    pub mean_corr_video: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub frame: SoftPromptBank,
    pub video: SoftPromptBank,
    pub records: Vec<TrainRecord>,
    /// Per-step batch loss (frame plus video term, batch mean).
    pub losses: Vec<f64>,
}

/// Trains both banks from `init` until their step counter reaches `cfg.steps`.
pub fn train_soft_prompts(
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    rollout: &RolloutConfig,
    backend: &dyn LanguageBackend,
    init: (SoftPromptBank, SoftPromptBank),
    on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    train_soft_prompts_until(samples, cfg, rollout, backend, init, cfg.steps, on_record)
}

/// Like [`train_soft_prompts`] but stops once the step counter reaches
/// `end`, keeping the learning-rate schedule of the full `cfg.steps`.
pub fn train_soft_prompts_until(
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    rollout: &RolloutConfig,
    backend: &dyn LanguageBackend,
    init: (SoftPromptBank, SoftPromptBank),
    end: usize,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if end > cfg.steps {
        return Err(Error::contract(format!("stop step {end} beyond schedule of {} steps", cfg.steps)));
    }
    rollout.validate()?;
    if samples.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    let (mut frame, mut video) = init;
    if frame.steps != video.steps {
        return Err(Error::contract("frame and video banks are at different steps"));
    }
    let start = frame.steps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(start as u64);
    let mut opt_f = AdamW::new(frame.embeddings.dim());
    let mut opt_v = AdamW::new(video.embeddings.dim());
    let mut records = Vec::new();
    let mut losses = Vec::new();
    let mut acc = LossParts::default();
    let (mut corr_f, mut corr_v, mut n_acc) = (0.0, 0.0, 0usize);
    let w = 1.0 / cfg.effective_batch as f64;
    for step in start..end {
        let mut gf = Array2::zeros(frame.embeddings.dim());
        let mut gv = Array2::zeros(video.embeddings.dim());
        let mut step_parts = LossParts::default();
        for _ in 0..cfg.effective_batch {
            let s = &samples[rng.random_range(0..samples.len())];
            let k = rng.random_range(0..s.frame_inputs.len());
            let ft = s.frame_term(k);
            let (pf, g1, raw_f) = loss_gradient_raw(&frame.embeddings, &ft, backend, rollout, cfg.dice_smoothing)?;
            let vt = s.video_term();
            let (pv, g2, raw_v) = loss_gradient_raw(&video.embeddings, &vt, backend, rollout, cfg.dice_smoothing)?;
            if !pf.loss.is_finite() || !pv.loss.is_finite() || g1.iter().chain(g2.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { sample: s.id.clone() });
            }
            gf.scaled_add(w, &g1);
            gv.scaled_add(w, &g2);
            step_parts.add(pf, w);
            step_parts.add(pv, w);
            corr_f += pearson_corr(&raw_f, &ft.target)?;
            corr_v += pearson_corr(&raw_v, &vt.target)?;
        }
        let lr = cfg.lr_at(step);
        opt_f.step(&mut frame.embeddings, &gf, lr, cfg);
        opt_v.step(&mut video.embeddings, &gv, lr, cfg);
        losses.push(step_parts.loss);
        acc.add(step_parts, 1.0);
        n_acc += 1;
        if (step + 1) % cfg.log_every == 0 || step + 1 == end {
            let k = n_acc as f64;
            let bce = acc.bce / k;
            let dice = acc.dice / k;
            let rec = TrainRecord {
                step: step + 1,
                loss: bce + dice,
                bce,
                dice,
                mean_corr_frame: corr_f / (k * cfg.effective_batch as f64),
                mean_corr_video: corr_v / (k * cfg.effective_batch as f64),
            };
            on_record(&rec);
            records.push(rec);
            acc = LossParts::default();
            (corr_f, corr_v, n_acc) = (0.0, 0.0, 0);
        }
    }
    frame.steps = end.max(start);
    video.steps = end.max(start);
    Ok(TrainOutcome {
        frame,
        video,
        records,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn grid(v: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_dice_is_zero() {
        let g = grid(&[1.0, 0.0, 1.0, 0.0]);
        let p = grounding_loss(g.view(), g.view(), 1.0).unwrap();
        assert_eq!(p.dice, 0.0);
        assert!(p.bce < 1e-6);
    }

    #[test]
    fn inverse_mask_dice() {
        let g = grid(&[1.0, 0.0, 1.0, 1.0, 0.0]);
        let s = g.mapv(|v| 1.0 - v);
        let p = grounding_loss(s.view(), g.view(), 1.0).unwrap();
        assert!((p.dice - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
        assert!(grounding_loss(s.view(), grid(&[1.0]).view(), 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let s = grid(&[0.2, 0.7, 0.5, 0.9, 0.1]);
        let g = grid(&[0.0, 1.0, 0.5, 0.75, 0.0]);
        let (_, d) = grounding_loss_grad(s.view(), g.view(), 1.0).unwrap();
        for i in 0..5 {
            let mut up = s.clone();
            up[[0, 0, i]] += 1e-6;
            let mut dn = s.clone();
            dn[[0, 0, i]] -= 1e-6;
            let fd = (grounding_loss(up.view(), g.view(), 1.0).unwrap().loss
                - grounding_loss(dn.view(), g.view(), 1.0).unwrap().loss)
                / 2e-6;
            assert!((fd - d[[0, 0, i]]).abs() < 1e-7, "{i}: {fd} vs {}", d[[0, 0, i]]);
        }
    }

    #[test]
    fn minmax_backward_matches_differences() {
        let x = grid(&[0.3, -1.0, 2.0, 0.5]);
        let w = grid(&[0.4, -0.2, 0.9, 1.3]);
        let f = |x: &Array3<f64>| (minmax_normalize(x) * &w).sum();
        let n = minmax_normalize(&x);
        let d = minmax_backward(&x, &n, &w);
        for i in 0..4 {
            let mut up = x.clone();
            up[[0, 0, i]] += 1e-6;
            let mut dn = x.clone();
            dn[[0, 0, i]] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - d[[0, 0, i]]).abs() < 1e-7);
        }
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            steps: 1000,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.warmup_steps(), 30);
        assert_eq!(cfg.lr_at(0), 0.0);
        assert!((cfg.lr_at(30) - 5e-4).abs() < 1e-18);
        assert!(cfg.lr_at(1000).abs() < 1e-18);
        assert!((cfg.lr_at(515) - 2.5e-4).abs() < 1e-12);
        for s in 30..1000 {
            assert!(cfg.lr_at(s + 1) <= cfg.lr_at(s));
        }
    }

    #[test]
    fn adamw_first_step() {
        let cfg = TrainConfig::default();
        let mut p = Array2::from_elem((1, 2), 1.0);
        let g = Array2::from_shape_vec((1, 2), vec![0.5, -2.0]).unwrap();
        let mut opt = AdamW::new((1, 2));
        opt.step(&mut p, &g, 0.1, &cfg);
        // decay then a unit-magnitude bias-corrected step
        let decayed = 1.0 - 0.1 * 0.01;
        assert!((p[[0, 0]] - (decayed - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
        assert!((p[[0, 1]] - (decayed + 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
    }
}
