//! Attention dump files: the exchange format for externally computed attention.
//!
//! A dump is an array container whose manifest carries
//!
//! ```toml
//! format = "steerseg-attention"
//! version = 1
//! layer_start = 14        # absolute index of the first stored layer
//! layer_end = 27          # absolute index of the last stored layer
//! heads = 28
//! seq_len = 1400
//! n_visual = 1024
//! visual_layout = [1, 32, 32]
//! visual_start = 12       # visual tokens are contiguous from here
//! query_index = 1399
//! generated_word = "dog"
//! dtype = "float32"
//! byte_order = "little-endian"
//! rollout_layers = [14, 27]   # optional, defaults to [14, 27]
//! roles = "ttvv...g"          # optional: s/t/v/g per token
//! token_ids = [...]           # optional
//! ```
//!
//! and one blob `layer_<l>.bin` per stored layer holding `heads × seq_len ×
//! seq_len` values, head-major then row-major.

use std::path::Path;

use ndarray::Array2;

use super::{AttentionTensor, BackendForwardResult, TokenRole, TokenSequence, VisualLayout};
use crate::error::{Error, Result};
use crate::formats::{encoding_fields, Container};

pub const DUMP_FORMAT: &str = "steerseg-attention";
pub const DUMP_VERSION: i64 = 1;
/// Rollout range assumed when a dump does not declare one.
pub const DEFAULT_DUMP_LAYERS: (usize, usize) = (14, 27);
/// Row-sum tolerance applied when reading dumps (float32 storage).
pub const DUMP_ROW_TOLERANCE: f64 = 1e-3;

/// Absolute layer bookkeeping of a dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpManifest {
    /// Absolute index of the first stored layer.
    pub layer_start: usize,
    /// Absolute rollout range.
    pub rollout_layers: (usize, usize),
}

impl DumpManifest {
    /// Manifest for an in-process result whose layers start at 0.
    pub fn for_result(result: &BackendForwardResult) -> Self {
        DumpManifest {
            layer_start: 0,
            rollout_layers: result.rollout_layers,
        }
    }
}

fn role_char(r: TokenRole) -> char {
    match r {
        TokenRole::SoftPrompt => 's',
        TokenRole::Text => 't',
        TokenRole::Visual => 'v',
        TokenRole::Generated => 'g',
    }
}

fn role_from(c: char) -> Result<TokenRole> {
    Ok(match c {
        's' => TokenRole::SoftPrompt,
        't' => TokenRole::Text,
        'v' => TokenRole::Visual,
        'g' => TokenRole::Generated,
        other => return Err(Error::format(format!("unknown role code {other:?}"))),
    })
}

fn int(v: usize) -> toml::Value {
    toml::Value::Integer(v as i64)
}

pub fn write_attention_dump(path: &Path, result: &BackendForwardResult, meta: &DumpManifest) -> Result<()> {
    let att = &result.attention;
    let layout = result.tokens.visual_layout;
    let visual = result.tokens.visual_indices();
    let visual_start = visual.first().copied().unwrap_or(0);
    if visual.iter().enumerate().any(|(k, &i)| i != visual_start + k) {
        return Err(Error::contract("dump format requires contiguous visual tokens"));
    }
    let mut m = toml::Table::new();
    m.insert("format".into(), DUMP_FORMAT.into());
    m.insert("version".into(), DUMP_VERSION.into());
    m.insert("layer_start".into(), int(meta.layer_start));
    m.insert("layer_end".into(), int(meta.layer_start + att.num_layers() - 1));
    m.insert("heads".into(), int(att.heads()));
    m.insert("seq_len".into(), int(att.seq_len()));
    m.insert("n_visual".into(), int(visual.len()));
    m.insert(
        "visual_layout".into(),
        toml::Value::Array(vec![int(layout.frames), int(layout.height), int(layout.width)]),
    );
    m.insert("visual_start".into(), int(visual_start));
    m.insert("query_index".into(), int(result.query_index));
    m.insert("generated_word".into(), result.generated_word.clone().into());
    m.insert(
        "rollout_layers".into(),
        toml::Value::Array(vec![int(meta.rollout_layers.0), int(meta.rollout_layers.1)]),
    );
    m.insert(
        "roles".into(),
        result.tokens.roles.iter().map(|r| role_char(*r)).collect::<String>().into(),
    );
    m.insert(
        "token_ids".into(),
        toml::Value::Array(result.tokens.ids.iter().map(|&i| int(i)).collect()),
    );
    encoding_fields(&mut m);
    let mut c = Container::new(m);
    for (l, heads) in att.layers().iter().enumerate() {
        c.put_f32(
            format!("layer_{}.bin", meta.layer_start + l),
            heads.iter().flat_map(|a| a.iter().copied()),
        );
    }
    c.write(path)
}

/// Reads and validates a dump. Embeddings are absent from the result.
pub fn load_attention_dump(path: &Path) -> Result<(BackendForwardResult, DumpManifest)> {
    let c = Container::read(path)?;
    if c.str_field("format")? != DUMP_FORMAT {
        return Err(Error::format(format!("not an attention dump (format != {DUMP_FORMAT})")));
    }
    let version = c.manifest.get("version").and_then(|v| v.as_integer());
    if version != Some(DUMP_VERSION) {
        return Err(Error::format(format!("unsupported dump version {version:?}")));
    }
    c.check_encoding()?;
    let layer_start = c.usize_field("layer_start")?;
    let layer_end = c.usize_field("layer_end")?;
    if layer_end < layer_start {
        return Err(Error::format("layer_end precedes layer_start"));
    }
    let heads = c.usize_field("heads")?;
    let n = c.usize_field("seq_len")?;
    let n_visual = c.usize_field("n_visual")?;
    if heads == 0 || n == 0 {
        return Err(Error::format("heads and seq_len must be positive"));
    }
    let lay = c.usize_list_field("visual_layout")?;
    let [frames, height, width] = lay[..] else {
        return Err(Error::format("visual_layout must have 3 entries"));
    };
    let layout = VisualLayout { frames, height, width };
    if layout.tokens() != n_visual {
        return Err(Error::format(format!(
            "visual_layout {lay:?} implies {} tokens, n_visual is {n_visual}",
            layout.tokens()
        )));
    }
    let visual_start = c.usize_field("visual_start")?;
    let query_index = c.usize_field("query_index")?;
    if visual_start + n_visual > n || query_index >= n {
        return Err(Error::format("visual span or query index outside the sequence"));
    }
    let word = c.str_field("generated_word")?.to_string();
    let rollout_layers = match c.manifest.get("rollout_layers") {
        None => DEFAULT_DUMP_LAYERS,
        Some(_) => {
            let r = c.usize_list_field("rollout_layers")?;
            let [a, b] = r[..] else {
                return Err(Error::format("rollout_layers must have 2 entries"));
            };
            (a, b)
        }
    };
    if rollout_layers.0 < layer_start || rollout_layers.1 > layer_end || rollout_layers.0 > rollout_layers.1 {
        return Err(Error::format(format!(
            "rollout layers {rollout_layers:?} not within stored layers {layer_start}..={layer_end}"
        )));
    }

    let roles: Vec<TokenRole> = match c.manifest.get("roles") {
        Some(_) => {
            let s = c.str_field("roles")?;
            s.chars().map(role_from).collect::<Result<_>>()?
        }
        None => (0..n)
            .map(|i| {
                if i == query_index {
                    TokenRole::Generated
                } else if (visual_start..visual_start + n_visual).contains(&i) {
                    TokenRole::Visual
                } else {
                    TokenRole::Text
                }
            })
            .collect(),
    };
    if roles.len() != n {
        return Err(Error::format(format!("{} roles for seq_len {n}", roles.len())));
    }
    let ids = match c.manifest.get("token_ids") {
        Some(_) => c.usize_list_field("token_ids")?,
        None => vec![super::vocab::UNK; n],
    };
    let tokens = TokenSequence::new(ids, roles, layout).map_err(|e| Error::format(e.to_string()))?;
    if tokens.visual_indices().first().is_some_and(|&v| v != visual_start) {
        return Err(Error::format("visual_start disagrees with roles"));
    }

    let mut layers = Vec::with_capacity(layer_end - layer_start + 1);
    for l in layer_start..=layer_end {
        let values = c.get_f32(&format!("layer_{l}.bin"), heads * n * n)?;
        let per_head = n * n;
        let mats = (0..heads)
            .map(|h| {
                Array2::from_shape_vec((n, n), values[h * per_head..(h + 1) * per_head].to_vec())
                    .expect("length checked above")
            })
            .collect();
        layers.push(mats);
    }
    let attention = AttentionTensor::new(layers)?;
    if let Err(Error::RowSum { layer, head, row, sum }) = attention.validate_rows(DUMP_ROW_TOLERANCE) {
        return Err(Error::RowSum {
            layer: layer + layer_start,
            head,
            row,
            sum,
        });
    }
    let result = BackendForwardResult {
        attention,
        tokens,
        generated_word: word,
        query_index,
        input_embeddings: None,
        rollout_layers: (rollout_layers.0 - layer_start, rollout_layers.1 - layer_start),
    };
    result
        .validate_with(DUMP_ROW_TOLERANCE)
        .map_err(|e| match e {
            Error::Contract(m) => Error::format(m),
            other => other,
        })?;
    Ok((
        result,
        DumpManifest {
            layer_start,
            rollout_layers,
        },
    ))
}
