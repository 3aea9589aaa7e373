//! RGB video clips held in memory.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A clip of equally sized RGB frames, each `(height, width, 3)` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: Vec<Array3<f64>>,
}

impl Video {
    pub fn new(frames: Vec<Array3<f64>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::contract("video must contain at least one frame"))?;
        let dim = first.dim();
        if dim.2 != 3 || dim.0 == 0 || dim.1 == 0 {
            return Err(Error::contract(format!("frame shape {dim:?} is not (h, w, 3)")));
        }
        if let Some(i) = frames.iter().position(|f| f.dim() != dim) {
            return Err(Error::contract(format!("frame {i} differs in shape from frame 0")));
        }
        Ok(Video { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].dim().0
    }

    pub fn width(&self) -> usize {
        self.frames[0].dim().1
    }

    pub fn frame(&self, t: usize) -> &Array3<f64> {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Array3<f64>] {
        &self.frames
    }

    /// Loads every image in `dir`, sorted lexicographically by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths = list_images(dir)?;
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Dataset(format!("{}: no frame images found", dir.display())));
        }
        let frames = paths.iter().map(|p| load_rgb(p)).collect::<Result<Vec<_>>>()?;
        Video::new(frames).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))
    }

    /// Writes frames as `00000.png`, `00001.png`, ... into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, f) in self.frames.iter().enumerate() {
            save_rgb(&dir.join(format!("{t:05}.png")), f)?;
        }
        Ok(())
    }
}

/// Image files (png, jpg, jpeg) directly inside `dir`, unsorted.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn load_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, k)| {
        rgb.get_pixel(c as u32, r as u32)[k] as f64 / 255.0
    }))
}

pub fn save_rgb(path: &Path, frame: &Array3<f64>) -> Result<()> {
    let (h, w, _) = frame.dim();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let px = |k: usize| (frame[[r as usize, c as usize, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Mean color of each `patch × patch` block: `(h / patch, w / patch, 3)`.
pub fn patch_colors(frame: &Array3<f64>, patch: usize) -> Result<Array3<f64>> {
    let (h, w, _) = frame.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::contract(format!(
            "frame {h}x{w} cannot be tiled by {patch}x{patch} patches"
        )));
    }
    let mut out = Array3::zeros((h / patch, w / patch, 3));
    for ((r, c, k), v) in frame.indexed_iter() {
        out[[r / patch, c / patch, k]] += v;
    }
    out.mapv_inplace(|v| v / (patch * patch) as f64);
    Ok(out)
}

/// Binary grid of pixels equal to `label`.
pub fn label_mask(labels: &Array2<u8>, label: u8) -> Array2<f64> {
    labels.mapv(|v| (v == label) as u8 as f64)
}
