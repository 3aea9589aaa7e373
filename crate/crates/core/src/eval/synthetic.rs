//! Synthetic moving-shape scenes with exact instance labels.

use ndarray::{Array2, Array3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{label_mask, Video};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Radius of the smallest center-anchored circle enclosing the shape.
    pub fn circumradius(self, r: f64) -> f64 {
        match self {
            Shape::Circle => r,
            Shape::Square => 0.85 * std::f64::consts::SQRT_2 * r,
            Shape::Triangle => (0.96f64.powi(2) + 0.36).sqrt() * r,
        }
    }

    /// Analytic membership test relative to the shape center.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            // apex up
            Shape::Triangle => dy >= -r && dy <= r * 0.6 && dx.abs() <= (dy + r) * 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Purple,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Purple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Purple => "purple",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::Purple => [1.0, 0.0, 1.0],
        }
    }

    /// Palette entry nearest to an RGB value in squared distance.
    pub fn nearest(rgb: [f64; 3]) -> (Color, f64) {
        let mut best = (Color::Red, f64::INFINITY);
        for c in Color::ALL {
            let p = c.rgb();
            let d: f64 = (0..3).map(|k| (p[k] - rgb[k]).powi(2)).sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

/// One rendered object with a linear trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub label: u8,
    pub shape: Shape,
    pub color: Color,
    pub radius: f64,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub moving: bool,
}

impl Instance {
    pub fn center(&self, t: usize) -> (f64, f64) {
        (self.x0 + self.vx * t as f64, self.y0 + self.vy * t as f64)
    }

    /// Attribute words describing this instance in a clip of `len` frames.
    pub fn attributes(&self, len: usize, width: usize) -> Vec<String> {
        let (mx, _) = self.mid_center(len);
        vec![
            self.color.name().to_string(),
            self.shape.name().to_string(),
            if self.moving { "moving" } else { "static" }.to_string(),
            if mx < width as f64 / 2.0 { "left" } else { "right" }.to_string(),
        ]
    }

    pub fn mid_center(&self, len: usize) -> (f64, f64) {
        let half = (len as f64 - 1.0) / 2.0;
        (self.x0 + self.vx * half, self.y0 + self.vy * half)
    }

    pub fn contains_pixel(&self, t: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center(t);
        self.shape.contains(x - cx, y - cy, self.radius)
    }
}

/// Bounds for [`generate_scenes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub moving_probability: f64,
    pub max_speed: f64,
    /// Minimum gap in pixels between the outlines of any two instances.
    pub clearance: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            min_frames: 12,
            max_frames: 24,
            min_instances: 2,
            max_instances: 4,
            min_radius: 6.0,
            max_radius: 9.0,
            moving_probability: 0.5,
            max_speed: 1.0,
            clearance: 3.0,
        }
    }
}

impl SceneSpec {
    /// Same bounds with a fixed instance count.
    pub fn with_instances(mut self, n: usize) -> Self {
        self.min_instances = n;
        self.max_instances = n;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Generation(m.to_string()));
        if self.width < 64 || self.height < 64 {
            return bad("resolution must be at least 64x64");
        }
        if self.min_frames < 1 || self.min_frames > self.max_frames || self.max_frames > 32 {
            return bad("frame count bounds must satisfy 1 <= min <= max <= 32");
        }
        if self.min_instances < 1 || self.min_instances > self.max_instances || self.max_instances > 8 {
            return bad("instance count bounds must satisfy 1 <= min <= max <= 8");
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return bad("radius bounds must satisfy 0 < min <= max");
        }
        if 2.0 * (self.max_radius + 1.0) >= self.width.min(self.height) as f64 {
            return bad("instances do not fit in the frame");
        }
        Ok(())
    }
}

/// A rendered clip with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub video: Video,
    pub labels: Vec<Array2<u8>>,
    pub instances: Vec<Instance>,
    pub expression: String,
    pub target: u8,
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.video.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video.is_empty()
    }

    pub fn instance(&self, label: u8) -> Option<&Instance> {
        self.instances.iter().find(|i| i.label == label)
    }

    /// Binary ground-truth masks of `label` over all frames.
    pub fn masks(&self, label: u8) -> Vec<Array2<f64>> {
        self.labels.iter().map(|l| label_mask(l, label)).collect()
    }

    pub fn target_masks(&self) -> Vec<Array2<f64>> {
        self.masks(self.target)
    }

    pub fn target_attributes(&self) -> Vec<String> {
        let tgt = self.instance(self.target).expect("target instance exists");
        tgt.attributes(self.len(), self.video.width())
    }
}

const ATTEMPTS_PER_INSTANCE: usize = 200;
const MAX_SCENE_RETRIES: usize = 500;

/// Deterministically generates `count` scenes from `seed`.
pub fn generate_scenes(seed: u64, count: usize, spec: &SceneSpec) -> Result<Vec<SyntheticScene>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| generate_one(&mut rng, spec, format!("syn-{seed}-{i:04}")))
        .collect()
}

fn generate_one(rng: &mut ChaCha8Rng, spec: &SceneSpec, id: String) -> Result<SyntheticScene> {
    for _ in 0..MAX_SCENE_RETRIES {
        let len = rng.random_range(spec.min_frames..=spec.max_frames);
        let n = rng.random_range(spec.min_instances..=spec.max_instances);
        let Some(mut instances) = place_instances(rng, spec, len, n) else {
            continue;
        };
        if n >= 2 {
            force_distractor(rng, &mut instances);
            let d = &instances[1];
            if !instances.iter().filter(|o| o.label != d.label).all(|o| separated(d, o, len, spec.clearance)) {
                continue;
            }
        }
        let Some(expression) = describe_target(rng, &instances, len, spec.width) else {
            continue;
        };
        let (video, labels) = render(spec, len, &instances)?;
        return Ok(SyntheticScene {
            id,
            video,
            labels,
            instances,
            expression,
            target: 1,
        });
    }
    Err(Error::Generation(format!(
        "no feasible overlap-free placement after {MAX_SCENE_RETRIES} retries"
    )))
}

fn place_instances(rng: &mut ChaCha8Rng, spec: &SceneSpec, len: usize, n: usize) -> Option<Vec<Instance>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut out: Vec<Instance> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = None;
        for _ in 0..ATTEMPTS_PER_INSTANCE {
            let shape = *Shape::ALL.choose(rng).expect("nonempty");
            let color = *Color::ALL.choose(rng).expect("nonempty");
            let r = rng.random_range(spec.min_radius..=spec.max_radius);
            let moving = rng.random::<f64>() < spec.moving_probability;
            let (vx, vy) = if moving {
                (
                    rng.random_range(-spec.max_speed..=spec.max_speed),
                    rng.random_range(-spec.max_speed..=spec.max_speed),
                )
            } else {
                (0.0, 0.0)
            };
            let x0 = rng.random_range(r + 1.0..=w - r - 1.0);
            let y0 = rng.random_range(r + 1.0..=h - r - 1.0);
            let end = (len - 1) as f64;
            let (x1, y1) = (x0 + vx * end, y0 + vy * end);
            if !(r + 1.0..=w - r - 1.0).contains(&x1) || !(r + 1.0..=h - r - 1.0).contains(&y1) {
                continue;
            }
            let cand = Instance {
                label: (k + 1) as u8,
                shape,
                color,
                radius: r,
                x0,
                y0,
                vx,
                vy,
                moving,
            };
            if out.iter().all(|o| separated(&cand, o, len, spec.clearance)) {
                placed = Some(cand);
                break;
            }
        }
        out.push(placed?);
    }
    Some(out)
}

fn separated(a: &Instance, b: &Instance, len: usize, clearance: f64) -> bool {
    let gap = a.shape.circumradius(a.radius) + b.shape.circumradius(b.radius) + clearance;
    (0..len).all(|t| {
        let (ax, ay) = a.center(t);
        let (bx, by) = b.center(t);
        (ax - bx).hypot(ay - by) >= gap
    })
}

/// Ensures some non-target instance shares the target's shape or color.
fn force_distractor(rng: &mut ChaCha8Rng, instances: &mut [Instance]) {
    let (tshape, tcolor) = (instances[0].shape, instances[0].color);
    if instances[1..].iter().any(|o| o.shape == tshape || o.color == tcolor) {
        return;
    }
    if rng.random::<f64>() < 0.5 {
        instances[1].color = tcolor;
    } else {
        instances[1].shape = tshape;
    }
}

const COMBOS: [&[&str]; 6] = [
    &["color", "shape"],
    &["motion", "shape"],
    &["shape", "hside"],
    &["color", "motion"],
    &["color", "shape", "motion"],
    &["color", "shape", "hside"],
];

fn attr_value<'a>(attrs: &'a [String], key: &str) -> &'a str {
    let idx = match key {
        "color" => 0,
        "shape" => 1,
        "motion" => 2,
        _ => 3,
    };
    &attrs[idx]
}

/// Picks the first shuffled attribute combination that singles out the target.
fn describe_target(rng: &mut ChaCha8Rng, instances: &[Instance], len: usize, width: usize) -> Option<String> {
    let all: Vec<Vec<String>> = instances.iter().map(|i| i.attributes(len, width)).collect();
    let ta = &all[0];
    let mut combos = COMBOS.to_vec();
    combos.shuffle(rng);
    for combo in combos {
        let unique = all[1..]
            .iter()
            .all(|o| combo.iter().any(|k| attr_value(o, k) != attr_value(ta, k)));
        if !unique {
            continue;
        }
        let mut parts = vec!["the"];
        if combo.contains(&"motion") {
            parts.push(attr_value(ta, "motion"));
        }
        if combo.contains(&"color") {
            parts.push(attr_value(ta, "color"));
        }
        parts.push(if combo.contains(&"shape") { attr_value(ta, "shape") } else { "object" });
        let mut expr = parts.join(" ");
        if combo.contains(&"hside") {
            expr.push_str(" on the ");
            expr.push_str(attr_value(ta, "hside"));
        }
        return Some(expr);
    }
    None
}

fn render(spec: &SceneSpec, len: usize, instances: &[Instance]) -> Result<(Video, Vec<Array2<u8>>)> {
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    for t in 0..len {
        let mut frame = Array3::zeros((h, w, 3));
        let mut lab = Array2::zeros((h, w));
        for inst in instances {
            let rgb = inst.color.rgb();
            for r in 0..h {
                for c in 0..w {
                    if inst.contains_pixel(t, c as f64 + 0.5, r as f64 + 0.5) {
                        lab[[r, c]] = inst.label;
                        for k in 0..3 {
                            frame[[r, c, k]] = rgb[k];
                        }
                    }
                }
            }
        }
        frames.push(frame);
        labels.push(lab);
    }
    Ok((Video::new(frames)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_from_seed() {
        let spec = SceneSpec::default();
        let a = generate_scenes(5, 3, &spec).unwrap();
        let b = generate_scenes(5, 3, &spec).unwrap();
        assert_eq!(a, b);
        let c = generate_scenes(6, 3, &spec).unwrap();
        assert_ne!(a[0].labels, c[0].labels);
    }

    #[test]
    fn labels_match_analytic_shapes() {
        let spec = SceneSpec::default();
        for scene in generate_scenes(1, 6, &spec).unwrap() {
            for (t, lab) in scene.labels.iter().enumerate() {
                for ((r, c), &l) in lab.indexed_iter() {
                    let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                    let covering: Vec<u8> = scene
                        .instances
                        .iter()
                        .filter(|i| i.contains_pixel(t, x, y))
                        .map(|i| i.label)
                        .collect();
                    if l == 0 {
                        assert!(covering.is_empty());
                    } else {
                        assert_eq!(covering, vec![l]);
                    }
                }
            }
        }
    }

    #[test]
    fn distractor_and_expression_constraints() {
        let spec = SceneSpec::default();
        for scene in generate_scenes(2, 20, &spec).unwrap() {
            assert!((12..=24).contains(&scene.len()));
            assert!((2..=4).contains(&scene.instances.len()));
            let tgt = scene.instance(scene.target).unwrap();
            assert!(scene.instances[1..]
                .iter()
                .any(|o| o.shape == tgt.shape || o.color == tgt.color));
            assert!(scene.expression.starts_with("the "));
            let words: Vec<&str> = scene.expression.split(' ').collect();
            let attrs = scene.target_attributes();
            for w in &words[1..] {
                if !["object", "on", "the"].contains(w) {
                    assert!(attrs.iter().any(|a| a == w), "{w} not in {attrs:?}");
                }
            }
            assert!(scene.labels.iter().any(|l| l.iter().any(|&v| v == scene.target)));
        }
    }

    #[test]
    fn infeasible_spec_is_error() {
        let spec = SceneSpec {
            min_radius: 40.0,
            max_radius: 40.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scenes(0, 1, &spec), Err(Error::Generation(_))));
        let crowded = SceneSpec {
            min_instances: 8,
            max_instances: 8,
            min_radius: 9.0,
            clearance: 12.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scenes(0, 1, &crowded), Err(Error::Generation(_))));
    }
}
