//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! [model]
//! decode_channels = 32
//! ```
//!
//! Keys under a `[section]` header are addressed as `section.key`. Unknown
//! keys and malformed values are errors. [`RunConfig::to_text`] prints
//! every field and parses back to the same configuration.

use std::fmt::Write as _;

use crate::blocks::{BlockConfig, SismKernels};
use crate::error::{Error, Result};
use crate::network::DecoderConfig;
use crate::nn::{Activation, NormKind};
use crate::training::{AdamW, TrainConfig};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "LIGHTFORMER_SEED";

/// Which defaults a configuration starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-size decoder with ResNet18-like encoder widths, 7 classes.
    Reference,
    /// The small network and schedule of the synthetic training recipe.
    Toy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_size: usize,
    pub val_size: usize,
    pub image_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeConfig {
    /// Feature shapes `[B, C, H, W]` for the channel-management table.
    pub shapes: Vec<[usize; 4]>,
    /// Input extent `(H, W)` for the whole-network cost report.
    pub input: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: DecoderConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub infer: InferConfig,
    pub analyze: AnalyzeConfig,
}

fn toy_model() -> DecoderConfig {
    DecoderConfig {
        in_channels: 3,
        encoder_channels: [16, 32, 64, 128],
        decode_channels: 32,
        num_classes: crate::io::synth::TOY_CLASSES,
        block: BlockConfig { heads: 2, ..BlockConfig::default() },
        aux_heads: true,
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let seed = 7;
        RunConfig {
            seed,
            model: match p {
                Preset::Reference => DecoderConfig::default(),
                Preset::Toy => toy_model(),
            },
            train: TrainConfig { seed, ..TrainConfig::default() },
            data: DataConfig {
                train_size: crate::io::synth::TOY_TRAIN,
                val_size: crate::io::synth::TOY_VAL,
                image_size: crate::io::synth::TOY_SIZE,
            },
            infer: InferConfig { window: (1024, 1024), stride: (512, 512) },
            analyze: AnalyzeConfig { shapes: crate::efficiency::REFERENCE_SHAPES.to_vec(), input: (512, 512) },
        }
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", n + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            self.set(&key, v.trim()).map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies [`SEED_ENV`] if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", v.trim()).map_err(|e| Error::Config(format!("{SEED_ENV}: {}", strip(e)))),
            Err(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let (w, s) = (self.infer.window, self.infer.stride);
        if w.0 == 0 || w.1 == 0 || s.0 == 0 || s.1 == 0 || s.0 > w.0 || s.1 > w.1 {
            return Err(Error::Config(format!("infer: need 0 < stride <= window, got window {w:?}, stride {s:?}")));
        }
        if self.data.image_size == 0 || !self.data.image_size.is_multiple_of(32) {
            return Err(Error::Config(format!("data.image_size must be a positive multiple of 32, got {}", self.data.image_size)));
        }
        if self.data.val_size == 0 {
            return Err(Error::Config("data.val_size must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                t.seed = self.seed;
            }
            "model.in_channels" => m.in_channels = parse(key, v)?,
            "model.encoder_channels" => {
                let c: Vec<usize> = list(key, v)?;
                m.encoder_channels = c.try_into().map_err(|_| bad(key, v, "four widths"))?;
            }
            "model.decode_channels" => m.decode_channels = parse(key, v)?,
            "model.num_classes" => m.num_classes = parse(key, v)?,
            "model.window_size" => m.block.window_size = parse(key, v)?,
            "model.heads" => m.block.heads = parse(key, v)?,
            "model.shuffle_groups" => m.block.shuffle_groups = parse(key, v)?,
            "model.eca_kernel" => m.block.eca_kernel = parse(key, v)?,
            "model.sism_mid_kernel" => m.block.sism_kernels.mid = parse(key, v)?,
            "model.sism_long_kernel" => m.block.sism_kernels.long = parse(key, v)?,
            "model.sism_attn_kernel" => m.block.sism_kernels.attn = parse(key, v)?,
            "model.sism_detail_kernel" => m.block.sism_kernels.detail = parse(key, v)?,
            "model.norm" => m.block.norm = NormKind::parse(v).ok_or_else(|| bad(key, v, "batch, group or none"))?,
            "model.activation" => m.block.activation = Activation::parse(v).ok_or_else(|| bad(key, v, "relu or gelu"))?,
            "model.aux_heads" => m.aux_heads = parse_bool(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.crop" => t.crop = if v == "none" { None } else { Some(pair(key, v)?) },
            "train.crop_alpha" => t.crop_alpha = parse(key, v)?,
            "train.crop_max_iter" => t.crop_max_iter = parse(key, v)?,
            "train.augment" => t.augment = parse_bool(key, v)?,
            "train.lr_decoder" => t.lr_decoder = parse(key, v)?,
            "train.lr_encoder" => t.lr_encoder = parse(key, v)?,
            "train.lr_min" => t.lr_min = parse(key, v)?,
            "train.aux_weight" => t.aux_weight = parse(key, v)?,
            "train.weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "train.beta1" => t.optimizer.beta1 = parse(key, v)?,
            "train.beta2" => t.optimizer.beta2 = parse(key, v)?,
            "train.eps" => t.optimizer.eps = parse(key, v)?,
            "train.mean" => t.mean = list(key, v)?,
            "train.std" => t.std = list(key, v)?,
            "data.train_size" => self.data.train_size = parse(key, v)?,
            "data.val_size" => self.data.val_size = parse(key, v)?,
            "data.image_size" => self.data.image_size = parse(key, v)?,
            "infer.window" => self.infer.window = pair(key, v)?,
            "infer.stride" => self.infer.stride = pair(key, v)?,
            "analyze.shapes" => {
                self.analyze.shapes = v
                    .split(';')
                    .map(|s| parse_shape(s.trim()).map_err(|e| Error::Config(format!("{key}: {}", strip(e)))))
                    .collect::<Result<_>>()?
            }
            "analyze.input" => self.analyze.input = pair(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every field, in a form [`RunConfig::apply_text`] accepts.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let b = &m.block;
        let k: SismKernels = b.sism_kernels;
        let t = &self.train;
        let o: AdamW = t.optimizer;
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "in_channels = {}", m.in_channels);
        let _ = writeln!(s, "encoder_channels = {}", m.encoder_channels.map(|c| c.to_string()).join(","));
        let _ = writeln!(s, "decode_channels = {}", m.decode_channels);
        let _ = writeln!(s, "num_classes = {}", m.num_classes);
        let _ = writeln!(s, "window_size = {}", b.window_size);
        let _ = writeln!(s, "heads = {}", b.heads);
        let _ = writeln!(s, "shuffle_groups = {}", b.shuffle_groups);
        let _ = writeln!(s, "eca_kernel = {}", b.eca_kernel);
        let _ = writeln!(s, "sism_mid_kernel = {}", k.mid);
        let _ = writeln!(s, "sism_long_kernel = {}", k.long);
        let _ = writeln!(s, "sism_attn_kernel = {}", k.attn);
        let _ = writeln!(s, "sism_detail_kernel = {}", k.detail);
        let _ = writeln!(s, "norm = {}", b.norm.as_str());
        let _ = writeln!(s, "activation = {}", b.activation.as_str());
        let _ = writeln!(s, "aux_heads = {}", m.aux_heads);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "crop = {}", t.crop.map_or("none".to_string(), |(h, w)| format!("{h},{w}")));
        let _ = writeln!(s, "crop_alpha = {}", t.crop_alpha);
        let _ = writeln!(s, "crop_max_iter = {}", t.crop_max_iter);
        let _ = writeln!(s, "augment = {}", t.augment);
        let _ = writeln!(s, "lr_decoder = {}", t.lr_decoder);
        let _ = writeln!(s, "lr_encoder = {}", t.lr_encoder);
        let _ = writeln!(s, "lr_min = {}", t.lr_min);
        let _ = writeln!(s, "aux_weight = {}", t.aux_weight);
        let _ = writeln!(s, "weight_decay = {}", o.weight_decay);
        let _ = writeln!(s, "beta1 = {}", o.beta1);
        let _ = writeln!(s, "beta2 = {}", o.beta2);
        let _ = writeln!(s, "eps = {}", o.eps);
        let _ = writeln!(s, "mean = {}", join(&t.mean));
        let _ = writeln!(s, "std = {}", join(&t.std));
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "train_size = {}", self.data.train_size);
        let _ = writeln!(s, "val_size = {}", self.data.val_size);
        let _ = writeln!(s, "image_size = {}", self.data.image_size);
        let _ = writeln!(s, "\n[infer]");
        let _ = writeln!(s, "window = {},{}", self.infer.window.0, self.infer.window.1);
        let _ = writeln!(s, "stride = {},{}", self.infer.stride.0, self.infer.stride.1);
        let _ = writeln!(s, "\n[analyze]");
        let shapes: Vec<String> = self.analyze.shapes.iter().map(|s| s.map(|d| d.to_string()).join(",")).collect();
        let _ = writeln!(s, "shapes = {}", shapes.join("; "));
        let _ = writeln!(s, "input = {},{}", self.analyze.input.0, self.analyze.input.1);
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn bad(key: &str, v: &str, want: &str) -> Error {
    Error::Config(format!("{key}: expected {want}, got `{v}`"))
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, std::any::type_name::<T>()))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

/// `n` or `h,w`.
fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    let xs: Vec<usize> = list(key, v)?;
    match xs[..] {
        [n] => Ok((n, n)),
        [h, w] => Ok((h, w)),
        _ => Err(bad(key, v, "one or two sizes")),
    }
}

/// `B,C,H,W` with every dimension positive.
pub fn parse_shape(s: &str) -> Result<[usize; 4]> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Config(format!("shape `{s}` is not four positive integers B,C,H,W")))?;
    dims.try_into().map_err(|_| Error::Config(format!("shape `{s}` is not four positive integers B,C,H,W")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        for p in [Preset::Reference, Preset::Toy] {
            let mut c = RunConfig::preset(p);
            c.apply_text("seed = 11\n[train]\ncrop = 32,48\nlr_min = 1e-6\nmean = 0.5,0.5,0.5\n").unwrap();
            let mut back = RunConfig::preset(if p == Preset::Toy { Preset::Reference } else { Preset::Toy });
            back.apply_text(&c.to_text()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.train.seed, 11);
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut c = RunConfig::preset(Preset::Toy);
        let e = c.apply_text("[model]\nwidth = 3\n").unwrap_err().to_string();
        assert!(e.contains("model.width") && e.contains("line 2"), "{e}");
        assert!(c.apply_text("[train]\nepochs = many\n").is_err());
        assert!(c.apply_text("[train\n").is_err());
        assert!(c.apply_text("just words\n").is_err());
        assert!(c.apply_override("train.augment=yes").is_err());
        assert!(c.apply_override("model.encoder_channels=1,2,3").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut c = RunConfig::preset(Preset::Toy);
        c.apply_text("[infer]\nstride = 256\n").unwrap();
        c.apply_override("infer.stride=128").unwrap();
        assert_eq!(c.infer.stride, (128, 128));
        c.validate().unwrap();
        c.apply_override("infer.stride=2048").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("4,64,128,128").unwrap(), [4, 64, 128, 128]);
        for s in ["4,64,128", "4,64,0,1", "a,b,c,d", "1,2,3,4,5"] {
            assert!(parse_shape(s).is_err(), "{s}");
        }
    }
}
