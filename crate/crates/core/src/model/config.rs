use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{keyword_enum, Activation, KernelInit, NormPlacement, Padding};
use crate::pos_encoding::{format_positions, parse_positions, EncodingScheme, PegFunction, PegSpec, DEFAULT_CLIP};
use crate::tensor::Precision;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Class token readout.
    Cls,
    /// Global average pooling over grid tokens; no class token anywhere.
    Gap,
}

keyword_enum!(Head, "head", Head::Cls => "cls", Head::Gap => "gap");

/// Full architectural description of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub image_size: usize,
    pub channels: usize,
    pub classes: usize,
    pub head: Head,
    pub scheme: EncodingScheme,
    pub ffn_ratio: usize,
    pub norm: NormPlacement,
    pub activation: Activation,
    pub precision: Precision,
    pub qkv_bias: bool,
    /// Kept for completeness; always run as 0.
    pub dropout: f64,
    /// Kept for completeness; always run as 0.
    pub drop_path: f64,
}

pub const CONFIG_KEYS: &[&str] = &[
    "activation",
    "channels",
    "classes",
    "depth",
    "dim",
    "drop_path",
    "dropout",
    "ffn_ratio",
    "head",
    "heads",
    "image_size",
    "norm",
    "patch",
    "peg_function",
    "peg_init",
    "peg_kernel",
    "peg_layers",
    "peg_padding",
    "peg_positions",
    "precision",
    "qkv_bias",
    "rpe_clip",
    "rpe_value_bias",
    "scheme",
];

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("invalid value `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

impl ModelConfig {
    fn preset(depth: usize, dim: usize, heads: usize) -> Self {
        ModelConfig {
            depth,
            dim,
            heads,
            patch: 16,
            image_size: 224,
            channels: 3,
            classes: 1000,
            head: Head::Cls,
            scheme: EncodingScheme::Peg(PegSpec::default()),
            ffn_ratio: 4,
            norm: NormPlacement::Pre,
            activation: Activation::Relu,
            precision: Precision::F32,
            qkv_bias: true,
            dropout: 0.0,
            drop_path: 0.0,
        }
    }

    pub fn tiny() -> Self {
        Self::preset(12, 192, 3)
    }

    pub fn small() -> Self {
        Self::preset(12, 384, 6)
    }

    pub fn base() -> Self {
        Self::preset(12, 768, 12)
    }

    /// 32×32 single-channel images in 8×8 patches (4×4 grid).
    pub fn toy() -> Self {
        ModelConfig {
            depth: 2,
            dim: 32,
            heads: 2,
            patch: 8,
            image_size: 32,
            channels: 1,
            classes: 4,
            ..Self::preset(2, 32, 2)
        }
    }

    pub fn preset_named(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "base" => Ok(Self::base()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_size / self.patch, self.image_size / self.patch)
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.ffn_ratio
    }

    pub fn has_cls(&self) -> bool {
        self.head == Head::Cls
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("dim", self.dim),
            ("heads", self.heads),
            ("patch", self.patch),
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("classes", self.classes),
            ("ffn_ratio", self.ffn_ratio),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*k, "must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::config("heads", format!("dim {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::config(
                "image_size",
                format!("{} is not divisible by patch size {}", self.image_size, self.patch),
            ));
        }
        for (k, v) in [("dropout", self.dropout), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(k, format!("rate must lie in [0, 1), got {v}")));
            }
        }
        match &self.scheme {
            EncodingScheme::Peg(spec) => spec.validate(self.depth)?,
            EncodingScheme::Sinusoidal1d if self.dim % 2 != 0 => {
                return Err(Error::config("dim", "sinusoidal encoding needs an even width"));
            }
            EncodingScheme::SinCos2d if self.dim % 4 != 0 => {
                return Err(Error::config("dim", "2-D sin-cos encoding needs a width divisible by 4"));
            }
            EncodingScheme::Relative { clip: 0, .. } => {
                return Err(Error::config("rpe_clip", "clip distance must be at least 1"));
            }
            _ => {}
        }
        Ok(())
    }

    fn peg_mut(&mut self) -> &mut PegSpec {
        if !matches!(self.scheme, EncodingScheme::Peg(_)) {
            self.scheme = EncodingScheme::Peg(PegSpec::default());
        }
        match &mut self.scheme {
            EncodingScheme::Peg(s) => s,
            _ => unreachable!(),
        }
    }

    /// Sets one `key=value` field. Returns `false` for keys this record does
    /// not own, so callers can layer other records on top.
    ///
    /// PEG and relative-bias keys only take effect for their scheme; `scheme`
    /// should therefore come first (the canonical text is ordered so that
    /// parsing works in any order).
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "depth" => self.depth = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "head" => self.head = value.trim().parse()?,
            "ffn_ratio" => self.ffn_ratio = parse(key, value)?,
            "norm" => self.norm = value.trim().parse()?,
            "activation" => self.activation = value.trim().parse()?,
            "precision" => self.precision = parse(key, value)?,
            "qkv_bias" => self.qkv_bias = parse_bool(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "drop_path" => self.drop_path = parse(key, value)?,
            "scheme" => {
                self.scheme = match value.trim() {
                    "none" => EncodingScheme::None,
                    "learnable" => EncodingScheme::Learnable,
                    "sinusoidal1d" => EncodingScheme::Sinusoidal1d,
                    "sincos2d" => EncodingScheme::SinCos2d,
                    "relative" => match self.scheme {
                        EncodingScheme::Relative { .. } => self.scheme.clone(),
                        _ => EncodingScheme::Relative {
                            clip: DEFAULT_CLIP,
                            value_bias: false,
                        },
                    },
                    "peg" => EncodingScheme::Peg(self.scheme.peg_spec().cloned().unwrap_or_default()),
                    other => return Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
                }
            }
            "peg_kernel" | "peg_layers" | "peg_function" | "peg_padding" | "peg_positions" | "peg_init" => {
                if matches!(self.scheme, EncodingScheme::Peg(_)) {
                    let spec = self.peg_mut();
                    match key {
                        "peg_kernel" => spec.kernel = parse(key, value)?,
                        "peg_layers" => spec.layers = parse(key, value)?,
                        "peg_function" => spec.function = value.trim().parse::<PegFunction>()?,
                        "peg_padding" => spec.padding = value.trim().parse::<Padding>()?,
                        "peg_positions" => spec.positions = parse_positions(value)?,
                        _ => spec.init = value.trim().parse::<KernelInit>()?,
                    }
                } else {
                    check_peg_value(key, value)?;
                }
            }
            "rpe_clip" | "rpe_value_bias" => {
                if let EncodingScheme::Relative { clip, value_bias } = &mut self.scheme {
                    match key {
                        "rpe_clip" => *clip = parse(key, value)?,
                        _ => *value_bias = parse_bool(key, value)?,
                    }
                } else if key == "rpe_clip" {
                    parse::<usize>(key, value)?;
                } else {
                    parse_bool(key, value)?;
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical key-sorted `key=value` lines. Scheme-specific keys appear
    /// only for the active scheme.
    pub fn to_kv_text(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("activation", self.activation.to_string());
        m.insert("channels", self.channels.to_string());
        m.insert("classes", self.classes.to_string());
        m.insert("depth", self.depth.to_string());
        m.insert("dim", self.dim.to_string());
        m.insert("drop_path", self.drop_path.to_string());
        m.insert("dropout", self.dropout.to_string());
        m.insert("ffn_ratio", self.ffn_ratio.to_string());
        m.insert("head", self.head.to_string());
        m.insert("heads", self.heads.to_string());
        m.insert("image_size", self.image_size.to_string());
        m.insert("norm", self.norm.to_string());
        m.insert("patch", self.patch.to_string());
        m.insert("precision", self.precision.to_string());
        m.insert("qkv_bias", self.qkv_bias.to_string());
        m.insert("scheme", self.scheme.name().to_string());
        match &self.scheme {
            EncodingScheme::Peg(s) => {
                m.insert("peg_function", s.function.to_string());
                m.insert("peg_init", s.init.to_string());
                m.insert("peg_kernel", s.kernel.to_string());
                m.insert("peg_layers", s.layers.to_string());
                m.insert("peg_padding", s.padding.to_string());
                m.insert("peg_positions", format_positions(&s.positions));
            }
            EncodingScheme::Relative { clip, value_bias } => {
                m.insert("rpe_clip", clip.to_string());
                m.insert("rpe_value_bias", value_bias.to_string());
            }
            _ => {}
        }
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines (blank lines and `#` comments ignored) on top
    /// of the toy defaults. `scheme` is applied before dependent keys.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::toy();
        let pairs = parse_kv_lines(text)?;
        let (first, rest): (Vec<_>, Vec<_>) = pairs.iter().partition(|(k, _)| k == "scheme");
        for (k, v) in first.into_iter().chain(rest) {
            if !cfg.set(k, v)? {
                return Err(Error::config(k.clone(), "unknown key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_peg_value(key: &str, value: &str) -> Result<()> {
    match key {
        "peg_kernel" | "peg_layers" => parse::<usize>(key, value).map(drop),
        "peg_function" => value.trim().parse::<PegFunction>().map(drop),
        "peg_padding" => value.trim().parse::<Padding>().map(drop),
        "peg_positions" => parse_positions(value).map(drop),
        _ => value.trim().parse::<KernelInit>().map(drop),
    }
}

/// Splits flat `key=value` text into pairs, rejecting malformed lines.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv_text())
    }
}
