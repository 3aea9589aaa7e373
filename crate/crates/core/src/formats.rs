//! On-disk formats: the zip array container and indexed-palette mask images.
//!
//! The array container is a zip archive with a structured-text `manifest`
//! entry followed by raw little-endian `float32` blobs. Archives are written
//! deterministically (stored entries, fixed timestamps, fixed permissions)
//! so identical inputs always produce identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use ndarray::Array2;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{Error, Result};

pub const MANIFEST_ENTRY: &str = "manifest";

/// In-memory view of a zip array container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: toml::Table,
    /// Raw entries other than the manifest, keyed by entry name.
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Container {
    pub fn new(manifest: toml::Table) -> Self {
        Container {
            manifest,
            blobs: BTreeMap::new(),
        }
    }

    pub fn put_f32(&mut self, name: impl Into<String>, values: impl IntoIterator<Item = f64>) {
        self.blobs.insert(name.into(), encode_f32(values));
    }

    pub fn get_f32(&self, name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let raw = self
            .blobs
            .get(name)
            .ok_or_else(|| Error::format(format!("missing entry `{name}`")))?;
        let values = decode_f32(raw)?;
        if values.len() != expected_len {
            return Err(Error::format(format!(
                "entry `{name}` holds {} values, manifest implies {expected_len}",
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Stored)
            .last_modified_time(DateTime::default())
            .unix_permissions(0o644);
        let mut zw = ZipWriter::new(Cursor::new(Vec::new()));
        let manifest = toml::to_string(&self.manifest)
            .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
        let zip_err = |e: zip::result::ZipError| Error::format(format!("zip write: {e}"));
        zw.start_file(MANIFEST_ENTRY, opts).map_err(zip_err)?;
        zw.write_all(manifest.as_bytes())
            .map_err(|e| Error::format(format!("zip write: {e}")))?;
        for (name, bytes) in &self.blobs {
            zw.start_file(name.as_str(), opts).map_err(zip_err)?;
            zw.write_all(bytes)
                .map_err(|e| Error::format(format!("zip write: {e}")))?;
        }
        Ok(zw.finish().map_err(zip_err)?.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != b"PK\x03\x04" {
            return Err(Error::format("not an array container (bad magic)"));
        }
        let mut archive = ZipArchive::new(Cursor::new(bytes))
            .map_err(|e| Error::format(format!("corrupt container: {e}")))?;
        let mut manifest = None;
        let mut blobs = BTreeMap::new();
        for i in 0..archive.len() {
            let mut entry = archive
                .by_index(i)
                .map_err(|e| Error::format(format!("corrupt container entry {i}: {e}")))?;
            let name = entry.name().to_string();
            let mut buf = Vec::new();
            entry
                .read_to_end(&mut buf)
                .map_err(|e| Error::format(format!("corrupt entry `{name}`: {e}")))?;
            if name == MANIFEST_ENTRY {
                let text = String::from_utf8(buf)
                    .map_err(|_| Error::format("manifest is not valid UTF-8"))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
                manifest = Some(table);
            } else {
                blobs.insert(name, buf);
            }
        }
        let manifest = manifest.ok_or_else(|| Error::format("container has no manifest"))?;
        Ok(Container { manifest, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn str_field(&self, key: &str) -> Result<&str> {
        self.manifest
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::format(format!("manifest field `{key}` missing or not a string")))
    }

    pub fn usize_field(&self, key: &str) -> Result<usize> {
        self.manifest
            .get(key)
            .and_then(|v| v.as_integer())
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| {
                Error::format(format!("manifest field `{key}` missing or not a non-negative integer"))
            })
    }

    pub fn usize_list_field(&self, key: &str) -> Result<Vec<usize>> {
        let arr = self
            .manifest
            .get(key)
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::format(format!("manifest field `{key}` missing or not a list")))?;
        arr.iter()
            .map(|v| {
                v.as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| Error::format(format!("manifest field `{key}` has a bad entry")))
            })
            .collect()
    }

    /// Checks the dtype and byte-order fields every container carries.
    pub fn check_encoding(&self) -> Result<()> {
        let dtype = self.str_field("dtype")?;
        let order = self.str_field("byte_order")?;
        if dtype != "float32" || order != "little-endian" {
            return Err(Error::format(format!(
                "unsupported encoding {dtype}/{order}, expected float32/little-endian"
            )));
        }
        Ok(())
    }
}

pub fn encoding_fields(table: &mut toml::Table) {
    table.insert("dtype".into(), "float32".into());
    table.insert("byte_order".into(), "little-endian".into());
}

pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32(raw: &[u8]) -> Result<Vec<f64>> {
    if !raw.len().is_multiple_of(4) {
        return Err(Error::format(format!("blob length {} is not a multiple of 4", raw.len())));
    }
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Palette used for exported label images: background black, then distinct hues.
const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [128, 0, 0],
    [0, 128, 0],
    [128, 128, 0],
    [0, 0, 128],
    [128, 0, 128],
    [0, 128, 128],
    [128, 128, 128],
];

/// Writes a label grid as an 8-bit indexed-palette PNG.
pub fn write_label_png(path: &Path, labels: &Array2<u8>) -> Result<()> {
    let (h, w) = labels.dim();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let mut palette: Vec<u8> = PALETTE.iter().flatten().copied().collect();
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    for k in PALETTE.len()..=max_label {
        palette.extend([(k * 37 % 256) as u8, (k * 91 % 256) as u8, (k * 53 % 256) as u8]);
    }
    enc.set_palette(palette);
    let img_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(img_err)?;
    let data: Vec<u8> = labels.iter().copied().collect();
    writer.write_image_data(&data).map_err(img_err)?;
    writer.finish().map_err(img_err)
}

/// Reads an 8-bit indexed-palette PNG back into its label indices.
pub fn read_label_png(path: &Path) -> Result<Array2<u8>> {
    let img_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| img_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| img_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
    if info.color_type != png::ColorType::Indexed && info.color_type != png::ColorType::Grayscale {
        return Err(img_err(format!("expected indexed-palette image, got {:?}", info.color_type)));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(img_err(format!("expected 8-bit indices, got {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        let row = &buf[r * info.line_size..r * info.line_size + w];
        for (c, &v) in row.iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

/// Writes a probability mask as a single-entry array container.
pub fn write_prob_mask(path: &Path, mask: &Array2<f64>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut manifest = toml::Table::new();
    manifest.insert("kind".into(), "probability_mask".into());
    manifest.insert("version".into(), 1.into());
    manifest.insert("height".into(), (h as i64).into());
    manifest.insert("width".into(), (w as i64).into());
    encoding_fields(&mut manifest);
    let mut c = Container::new(manifest);
    c.put_f32("mask.bin", mask.iter().copied());
    c.write(path)
}

pub fn read_prob_mask(path: &Path) -> Result<Array2<f64>> {
    let c = Container::read(path)?;
    c.check_encoding()?;
    if c.str_field("kind")? != "probability_mask" {
        return Err(Error::format("container is not a probability mask"));
    }
    let (h, w) = (c.usize_field("height")?, c.usize_field("width")?);
    let values = c.get_f32("mask.bin", h * w)?;
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::format(e.to_string()))
}
