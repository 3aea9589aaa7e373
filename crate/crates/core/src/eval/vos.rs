//! Benchmark-style directory adapter and mask output directories.
//!
//! ```text
//! root/
//!   expressions.toml        # [videos.<video>] "<object id>" = ["expression", ...]
//!   JPEGImages/<video>/*.{jpg,png}
//!   Annotations/<video>/*.png   # indexed-palette instance labels
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SyntheticScene;
use crate::error::{Error, Result};
use crate::formats::{read_label_png, read_prob_mask, write_label_png, write_prob_mask};
use crate::video::{label_mask, list_images, Video};

pub const EXPRESSIONS_FILE: &str = "expressions.toml";
pub const FRAMES_DIR: &str = "JPEGImages";
pub const MASKS_DIR: &str = "Annotations";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpressionManifest {
    videos: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

/// One (video, object, expression) triple of a directory dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VosEntry {
    pub video_id: String,
    pub object_id: u8,
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VosSample {
    pub entry: VosEntry,
    pub video: Video,
    /// Per-frame labels; the sample's ground truth is `labels == object_id`.
    pub labels: Vec<Array2<u8>>,
}

impl VosSample {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.entry.video_id, self.entry.object_id, self.entry.expression)
    }

    pub fn masks(&self) -> Vec<Array2<f64>> {
        self.labels.iter().map(|l| label_mask(l, self.entry.object_id)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct VosDataset {
    root: PathBuf,
    pub entries: Vec<VosEntry>,
}

fn dataset_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Dataset(format!("{}: {msg}", path.display()))
}

/// Opens a directory dataset; media are read lazily per sample.
pub fn load_vos_directory(root: &Path) -> Result<VosDataset> {
    let mpath = root.join(EXPRESSIONS_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| dataset_err(&mpath, format!("missing manifest ({e})")))?;
    let manifest: ExpressionManifest = toml::from_str(&text).map_err(|e| dataset_err(&mpath, e))?;
    let mut entries = Vec::new();
    for (video_id, objects) in &manifest.videos {
        let mut objs: Vec<(u8, &Vec<String>)> = Vec::new();
        for (obj, exprs) in objects {
            let id: u8 = obj
                .parse()
                .map_err(|_| dataset_err(&mpath, format!("object id {obj:?} of {video_id} is not in 1..=255")))?;
            if id == 0 {
                return Err(dataset_err(&mpath, format!("object id 0 of {video_id} is background")));
            }
            objs.push((id, exprs));
        }
        objs.sort_by_key(|(id, _)| *id);
        for (object_id, exprs) in objs {
            for e in exprs {
                entries.push(VosEntry {
                    video_id: video_id.clone(),
                    object_id,
                    expression: e.clone(),
                });
            }
        }
    }
    Ok(VosDataset {
        root: root.to_path_buf(),
        entries,
    })
}

impl VosDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<VosSample> {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::contract(format!("sample {i} outside dataset of {}", self.len())))?
            .clone();
        let fdir = self.root.join(FRAMES_DIR).join(&entry.video_id);
        let video = Video::load_dir(&fdir)?;
        let mdir = self.root.join(MASKS_DIR).join(&entry.video_id);
        let mut mpaths = list_images(&mdir).map_err(|e| dataset_err(&mdir, e))?;
        mpaths.sort();
        if mpaths.len() != video.len() {
            return Err(dataset_err(
                &mdir,
                format!("{} masks for {} frames", mpaths.len(), video.len()),
            ));
        }
        let labels = mpaths.iter().map(|p| read_label_png(p)).collect::<Result<Vec<_>>>()?;
        if let Some(p) = labels.iter().position(|l| l.dim() != (video.height(), video.width())) {
            return Err(dataset_err(&mpaths[p], "mask resolution differs from its frame"));
        }
        Ok(VosSample { entry, video, labels })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<VosSample>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }
}

/// Writes scenes in the directory layout, one expression per scene.
pub fn write_vos_directory(root: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    let mut manifest = ExpressionManifest::default();
    for s in scenes {
        s.video.save_dir(&root.join(FRAMES_DIR).join(&s.id))?;
        let mdir = root.join(MASKS_DIR).join(&s.id);
        std::fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
        for (t, l) in s.labels.iter().enumerate() {
            write_label_png(&mdir.join(format!("{t:05}.png")), l)?;
        }
        manifest
            .videos
            .entry(s.id.clone())
            .or_default()
            .insert(s.target.to_string(), vec![s.expression.clone()]);
    }
    let path = root.join(EXPRESSIONS_FILE);
    let text = toml::to_string(&manifest).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes `binary/<t>.png` (palette labels 0/1) and `prob/<t>.ssc` per frame.
pub fn write_mask_dir(dir: &Path, masks: &[Array2<f64>], threshold: f64) -> Result<()> {
    let (bdir, pdir) = (dir.join("binary"), dir.join("prob"));
    for d in [&bdir, &pdir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (t, m) in masks.iter().enumerate() {
        write_label_png(&bdir.join(format!("{t:05}.png")), &m.mapv(|v| u8::from(v >= threshold)))?;
        write_prob_mask(&pdir.join(format!("{t:05}.ssc")), m)?;
    }
    Ok(())
}

/// Probability masks of a directory written by [`write_mask_dir`].
pub fn read_mask_dir(dir: &Path) -> Result<Vec<Array2<f64>>> {
    let pdir = dir.join("prob");
    let rd = std::fs::read_dir(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut paths = Vec::new();
    for e in rd {
        let p = e.map_err(|e| Error::io(&pdir, e))?.path();
        if p.extension().is_some_and(|x| x == "ssc") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_prob_mask(p)).collect()
}
