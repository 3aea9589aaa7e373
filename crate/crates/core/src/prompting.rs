//! Prompt templates, reasoning-response parsing and soft prompt banks.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{encoding_fields, Container};

/// Maximum number of attributes kept from a reasoning response.
pub const MAX_ATTRIBUTES: usize = 10;

pub const FRAME_SEED_TEXT: &str = "focus attention precisely on the referred object region";
pub const VIDEO_SEED_TEXT: &str = "track the referred object consistently across frames";

const COT_TEMPLATE: &str = "Expression: {sent}

First, briefly reason about which object in the scene best satisfies this expression — consider the role, function, or intent the expression implies, not just visual similarity to the words. Then list distinguishing attributes (color, size, position, shape, motion) of THAT object only.

Respond in EXACTLY this format, nothing else:

Reasoning: <one or two short sentences>

Attributes: <comma-separated list, max ~10 words, e.g., 'large, white, on the right, parked'>";

const QUERY_HEAD: &str = "Expression: {sent}\n\n";
const QUERY_ATTRS: &str = "Distinguishing attributes of the target: {attrs}.\n\n";
const QUERY_TAIL: &str = "What is the main object (or objects) referred to in the given expression or question?

Use the attributes above to disambiguate from other similar objects. Respond with a single word (e.g., 'cat', 'person', 'dog') that best describes the target object(s).";

/// Reasoning prompt asking for the two-header response.
pub fn build_cot_prompt(expression: &str) -> String {
    COT_TEMPLATE.replace("{sent}", expression)
}

/// Query prompt; the attribute line is omitted when `attributes` is empty.
pub fn build_query_prompt(expression: &str, attributes: &[String]) -> String {
    let mut s = QUERY_HEAD.replace("{sent}", expression);
    if !attributes.is_empty() {
        s.push_str(&QUERY_ATTRS.replace("{attrs}", &attributes.join(", ")));
    }
    s.push_str(QUERY_TAIL);
    s
}

/// Splits a reasoning response into its reasoning text and attribute list.
pub fn parse_cot_response(text: &str) -> Result<(String, Vec<String>)> {
    let fail = |reason: &str| Error::CotParse {
        reason: reason.to_string(),
        raw: text.to_string(),
    };
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let header = |name: &str| {
        lines.iter().position(|l| {
            l.get(..name.len())
                .is_some_and(|p| p.eq_ignore_ascii_case(name))
        })
    };
    let r_at = header("Reasoning:").ok_or_else(|| fail("missing `Reasoning:` header"))?;
    let a_at = header("Attributes:").ok_or_else(|| fail("missing `Attributes:` header"))?;
    if a_at < r_at {
        return Err(fail("`Attributes:` precedes `Reasoning:`"));
    }
    let mut reasoning = vec![lines[r_at]["Reasoning:".len()..].trim()];
    reasoning.extend(lines[r_at + 1..a_at].iter().copied());
    let reasoning = reasoning
        .into_iter()
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let mut list = vec![lines[a_at]["Attributes:".len()..].trim()];
    list.extend(lines[a_at + 1..].iter().copied());
    let mut attributes: Vec<String> = Vec::new();
    for item in list.join(",").split(',') {
        let item = item.trim().trim_end_matches('.').trim().to_lowercase();
        if !item.is_empty() && !attributes.contains(&item) {
            attributes.push(item);
        }
    }
    if attributes.is_empty() {
        return Err(fail("attribute list is empty"));
    }
    attributes.truncate(MAX_ATTRIBUTES);
    Ok((reasoning, attributes))
}

/// Inputs that condition one grounding query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub expression: String,
    pub reasoning: String,
    /// Empty when reasoning is disabled or its response failed to parse.
    pub attributes: Vec<String>,
    pub response_word: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Frame,
    Video,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Frame => "frame",
            Branch::Video => "video",
        })
    }
}

impl Branch {
    pub fn default_seed(self) -> &'static str {
        match self {
            Branch::Frame => FRAME_SEED_TEXT,
            Branch::Video => VIDEO_SEED_TEXT,
        }
    }
}

/// Trainable prompt embeddings for one modality branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPromptBank {
    pub branch: Branch,
    pub seed_text: String,
    /// `N_p × d`.
    pub embeddings: Array2<f64>,
    /// Optimizer steps applied since initialization.
    pub steps: usize,
}

impl SoftPromptBank {
    pub fn n_p(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut m = toml::Table::new();
        m.insert("kind".into(), "soft_prompt_bank".into());
        m.insert("version".into(), 1.into());
        m.insert("branch".into(), self.branch.to_string().into());
        m.insert("seed_text".into(), self.seed_text.clone().into());
        m.insert("n_p".into(), (self.n_p() as i64).into());
        m.insert("d".into(), (self.dim() as i64).into());
        m.insert("steps".into(), (self.steps as i64).into());
        encoding_fields(&mut m);
        let mut c = Container::new(m);
        c.put_f32("P.bin", self.embeddings.iter().copied());
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.check_encoding()?;
        if c.str_field("kind")? != "soft_prompt_bank" {
            return Err(Error::format("container is not a soft prompt bank"));
        }
        let branch = match c.str_field("branch")? {
            "frame" => Branch::Frame,
            "video" => Branch::Video,
            other => return Err(Error::format(format!("unknown branch {other:?}"))),
        };
        let (n_p, d) = (c.usize_field("n_p")?, c.usize_field("d")?);
        let values = c.get_f32("P.bin", n_p * d)?;
        let embeddings = Array2::from_shape_vec((n_p, d), values).map_err(|e| Error::format(e.to_string()))?;
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("soft prompt bank holds non-finite values"));
        }
        Ok(SoftPromptBank {
            branch,
            seed_text: c.str_field("seed_text")?.to_string(),
            embeddings,
            steps: c.usize_field("steps")?,
        })
    }
}

/// Repeat-and-truncate initialization from the seed text's token embeddings.
pub fn init_soft_prompts(
    branch: Branch,
    seed_text: &str,
    n_p: usize,
    embed: impl Fn(&str) -> Result<Array2<f64>>,
) -> Result<SoftPromptBank> {
    if n_p == 0 {
        return Err(Error::contract("soft prompt count must be at least 1"));
    }
    let rows = embed(seed_text)?;
    if rows.nrows() == 0 {
        return Err(Error::contract(format!("seed text {seed_text:?} has no tokens")));
    }
    let mut p = Array2::zeros((n_p, rows.ncols()));
    for i in 0..n_p {
        p.row_mut(i).assign(&rows.row(i % rows.nrows()));
    }
    Ok(SoftPromptBank {
        branch,
        seed_text: seed_text.to_string(),
        embeddings: p,
        steps: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cot_prompt_substitutes_verbatim() {
        let p = build_cot_prompt("the red circle");
        assert!(p.starts_with("Expression: the red circle\n"));
        assert!(p.contains("Reasoning:") && p.contains("Attributes:"));
        assert!(p.contains("Respond in EXACTLY this format, nothing else:"));
        let odd = "the car (left-most), parked; \"white\"?";
        assert!(build_cot_prompt(odd).contains(odd));
        assert_eq!(build_cot_prompt(odd), build_cot_prompt(odd));
    }

    #[test]
    fn query_prompt_with_and_without_attributes() {
        let attrs = vec!["red".to_string(), "on the left".to_string()];
        let with = build_query_prompt("the circle", &attrs);
        assert!(with.contains("Distinguishing attributes of the target: red, on the left.\n"));
        let without = build_query_prompt("the circle", &[]);
        assert!(!without.contains("Distinguishing attributes"));
        assert_eq!(
            with.replace("Distinguishing attributes of the target: red, on the left.\n\n", ""),
            without
        );
        assert!(without.ends_with("that best describes the target object(s)."));
    }

    #[test]
    fn parses_example_response() {
        let (r, a) =
            parse_cot_response("Reasoning: it is parked.\nAttributes: large, white, on the right, parked").unwrap();
        assert_eq!(r, "it is parked.");
        assert_eq!(a, vec!["large", "white", "on the right", "parked"]);
    }

    #[test]
    fn parse_failures_carry_raw_text() {
        for bad in ["Reasoning: x\nAttributes:", "Attributes: a, b", "Reasoning: only", ""] {
            match parse_cot_response(bad) {
                Err(Error::CotParse { raw, .. }) => assert_eq!(raw, bad),
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn caps_and_dedupes_attributes() {
        let items: Vec<String> = (0..14).map(|i| format!(" Item{} ", i % 12)).collect();
        let text = format!("Reasoning: many.\nAttributes: {}", items.join(","));
        let (_, got) = parse_cot_response(&text).unwrap();
        // reference: split, trim, lowercase, first occurrence, first ten
        let mut want: Vec<String> = Vec::new();
        for it in text.split("Attributes:").nth(1).unwrap().split(',') {
            let t = it.trim().to_lowercase();
            if !want.contains(&t) {
                want.push(t);
            }
        }
        want.truncate(10);
        assert_eq!(got, want);
        assert_eq!(got.len(), 10);
    }

    fn fake_embed(text: &str) -> Result<Array2<f64>> {
        let n = text.split_whitespace().count();
        Ok(Array2::from_shape_fn((n, 2), |(i, j)| (i * 10 + j) as f64))
    }

    #[test]
    fn repeat_and_truncate() {
        let b = init_soft_prompts(Branch::Frame, "a b c", 7, fake_embed).unwrap();
        let seed = fake_embed("a b c").unwrap();
        let mut expected = Vec::new();
        let mut k = 0;
        while expected.len() < 7 {
            expected.push(seed.row(k).to_owned());
            k = (k + 1) % 3;
        }
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(b.embeddings.row(i), row.view());
        }
        let exact = init_soft_prompts(Branch::Frame, "a b c", 3, fake_embed).unwrap();
        assert_eq!(exact.embeddings, seed);
        let trunc = init_soft_prompts(Branch::Video, "a b c d e f", 3, fake_embed).unwrap();
        assert_eq!(trunc.embeddings, fake_embed("a b c").unwrap());
        assert!(init_soft_prompts(Branch::Frame, "", 3, fake_embed).is_err());
        assert!(init_soft_prompts(Branch::Frame, "a", 0, fake_embed).is_err());
    }

    #[test]
    fn bank_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let b = init_soft_prompts(Branch::Video, "a b c", 5, |t| {
            fake_embed(t).map(|m| m.mapv(|v| v * 0.1 + 1.0 / 3.0))
        })
        .unwrap();
        let p1 = dir.path().join("b1.ssc");
        let p2 = dir.path().join("b2.ssc");
        b.save(&p1).unwrap();
        let back = SoftPromptBank::load(&p1).unwrap();
        assert_eq!(back.branch, Branch::Video);
        assert!((&back.embeddings - &b.embeddings).iter().all(|d| d.abs() < 1e-6));
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
