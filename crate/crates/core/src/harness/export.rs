//! Attention maps as CSV (one query row per line) or 8-bit binary PGM.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{AttentionRecord, DynModel};
use crate::nn::keyword_enum;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnFormat {
    Csv,
    Pgm,
}

keyword_enum!(AttnFormat, "format", AttnFormat::Csv => "csv", AttnFormat::Pgm => "pgm");

impl AttnFormat {
    pub fn extension(self) -> &'static str {
        match self {
            AttnFormat::Csv => "csv",
            AttnFormat::Pgm => "pgm",
        }
    }
}

pub fn csv_text(rec: &AttentionRecord) -> String {
    let mut out = String::new();
    for i in 0..rec.tokens {
        let row: Vec<String> = rec.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Gray levels with each row scaled so its largest score maps to 255.
pub fn pgm_bytes(rec: &AttentionRecord) -> Vec<u8> {
    let n = rec.tokens;
    let mut out = format!("P5 {n} {n} 255\n").into_bytes();
    for i in 0..n {
        let row = rec.row(i);
        let max = row.iter().cloned().fold(0.0, f64::max);
        out.extend(row.iter().map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
    }
    out
}

pub fn parse_csv_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad number `{v}`"))))
                .collect()
        })
        .collect()
}

/// Width, height and pixels of a binary PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Input("malformed PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels))
}

/// Writes every head of `layer` for each image in `images` to `dir` as
/// `attn_l{layer}_h{head}.{ext}` (suffixed `_i{image}` for batches larger
/// than one) and returns the paths.
pub fn export_attention(
    model: &DynModel,
    images: &Tensor<f32>,
    layer: usize,
    dir: &Path,
    format: AttnFormat,
) -> Result<Vec<PathBuf>> {
    let records = match model {
        DynModel::F32(m) => m.attention_scores(images, layer)?,
        DynModel::F64(m) => m.attention_scores(&images.cast(), layer)?,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let batch = images.shape()[0];
    let mut paths = Vec::with_capacity(records.len());
    for rec in &records {
        let stem = if batch > 1 {
            format!("attn_l{}_h{}_i{}", rec.layer, rec.head, rec.image)
        } else {
            format!("attn_l{}_h{}", rec.layer, rec.head)
        };
        let path = dir.join(format!("{stem}.{}", format.extension()));
        let bytes = match format {
            AttnFormat::Csv => csv_text(rec).into_bytes(),
            AttnFormat::Pgm => pgm_bytes(rec),
        };
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
