//! Deterministic numerical kernels shared by the rest of the crate.
//!
//! Every grid is an `ndarray` array of `f64`. The kernels never produce
//! NaN or infinite values from finite inputs; degenerate inputs (constant
//! grids, empty masks) map to fixed, documented values instead.

use ndarray::{Array, Array2, Array3, ArrayBase, ArrayView2, ArrayView3, Axis, Data, Dimension, Zip};

use crate::error::{Error, Result};

/// Default clamp used before mapping probabilities into logit space.
pub const DEFAULT_LOGIT_EPS: f64 = 1e-4;

/// Fails unless every entry of `grid` is finite.
pub fn ensure_finite<S, D>(grid: &ArrayBase<S, D>, what: &str) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    match grid.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::contract(format!("{what}: non-finite entry at flat index {i}"))),
        None => Ok(()),
    }
}

/// Pearson correlation over all elements of two equally shaped grids.
///
/// Returns exactly `0.0` when either input has zero variance.
pub fn pearson_corr<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "pearson_corr: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("pearson_corr: need at least 2 elements"));
    }
    let mean_a = a.sum() / n as f64;
    let mean_b = b.sum() / n as f64;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    });
    if var_a <= 0.0 || var_b <= 0.0 {
        return Ok(0.0);
    }
    let r = cov / (var_a.sqrt() * var_b.sqrt());
    if !r.is_finite() {
        return Ok(0.0);
    }
    Ok(r.clamp(-1.0, 1.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `log(p / (1 - p))` after clamping `p` into `[eps, 1 - eps]`.
pub fn logit_transform<S, D>(p: &ArrayBase<S, D>, eps: f64) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::contract(format!("logit_transform: eps {eps} outside (0, 0.5)")));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!(
            "logit_transform: probability {bad} outside [0, 1]"
        )));
    }
    Ok(p.mapv(|v| {
        let c = v.clamp(eps, 1.0 - eps);
        (c / (1.0 - c)).ln()
    }))
}

/// Block-mean pooling of a 2D grid by an integer factor.
pub fn area_downsample(g: ArrayView2<'_, f64>, factor: usize) -> Result<Array2<f64>> {
    let (h, w) = g.dim();
    if factor == 0 {
        return Err(Error::contract("area_downsample: factor must be positive"));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::contract(format!(
            "area_downsample: extents {h}x{w} not divisible by {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = Array2::zeros((oh, ow));
    for ((r, c), v) in g.indexed_iter() {
        out[[r / factor, c / factor]] += v;
    }
    out.mapv_inplace(|v| v / norm);
    Ok(out)
}

/// [`area_downsample`] applied to every slice along the leading axis.
pub fn area_downsample_stack(g: ArrayView3<'_, f64>, factor: usize) -> Result<Array3<f64>> {
    let (t, h, w) = g.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::contract(format!(
            "area_downsample: extents {h}x{w} not divisible by {factor}"
        )));
    }
    let mut out = Array3::zeros((t, h / factor, w / factor));
    for (i, slice) in g.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&area_downsample(slice, factor)?);
    }
    Ok(out)
}

/// Bilinear interpolation with half-pixel sample centers.
pub fn bilinear_resize(g: ArrayView2<'_, f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = g.dim();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::contract("bilinear_resize: extents must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(g.to_owned());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Array2::zeros((out_h, out_w));
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = g[[r0, c0]] * (1.0 - fc) + g[[r0, c1]] * fc;
            let bottom = g[[r1, c0]] * (1.0 - fc) + g[[r1, c1]] * fc;
            out[[r, c]] = top * (1.0 - fr) + bottom * fr;
        }
    }
    Ok(out)
}

/// Intersection over union of two binary masks; two empty masks score 1.
pub fn mask_iou<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "mask_iou: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.iter().chain(b.iter()).any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("mask_iou: masks must be binary"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let (x, y) = (x == 1.0, y == 1.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    });
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Rescales a grid to `[0, 1]`; a constant grid maps to all zeros.
pub fn minmax_normalize<S, D>(g: &ArrayBase<S, D>) -> Array<f64, D>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let (lo, hi) = min_max(g);
    if hi > lo {
        g.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array::zeros(g.raw_dim())
    }
}

pub(crate) fn min_max<S, D>(g: &ArrayBase<S, D>) -> (f64, f64)
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    g.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Flat index of the first maximum in iteration (row-major) order.
pub fn argmax_first<S, D>(g: &ArrayBase<S, D>) -> Option<usize>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in g.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
