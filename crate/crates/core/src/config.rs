//! Run configuration as `key=value` lines.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to its default; unknown or repeated keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::diffuse::HeadConfig;
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::hsidata::SplitSpec;
use crate::numkit::{AdamWConfig, TrainSettings};

macro_rules! run_config {
    ($($(#[$doc:meta])* $key:ident : $ty:ty = $default:expr;)*) => {
        /// Every tunable of a pipeline run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[$doc])* pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            /// Accepted keys in serialization order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    $(stringify!($key) => self.$key = parse_value(key, value, line)?,)*
                    _ => return Err(Error::invalid(format!("line {line}: unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// One `key=value` line per field.
            pub fn serialize(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{}={}", stringify!($key), self.$key).expect("string write");)*
                s
            }
        }
    };
}

run_config! {
    /// Patch side `P`.
    patch_size: usize = 9;
    /// Token side `s`.
    stride: usize = 3;
    /// Manifold dimension `D`.
    embed_dim: usize = 64;
    /// Spectral bottleneck rank `r`.
    rank: usize = 8;
    layers: usize = 2;
    heads: usize = 4;
    ffn_mult: usize = 4;
    lambda_cls: f64 = 0.1;
    lr: f64 = 1e-3;
    weight_decay: f64 = 1e-4;
    batch_size: usize = 16;
    /// Embedding-stage epochs.
    epochs: usize = 20;
    diffusion_epochs: usize = 20;
    classifier_epochs: usize = 20;
    /// Weight of the clean-prediction diffusion term.
    lambda_x: f64 = 1.0;
    /// Refinement time.
    t_star: f64 = 0.25;
    /// Time-embedding frequency pairs.
    time_freqs: usize = 16;
    /// Degraded copies per training patch for the classifier stage.
    augment_copies: usize = 2;
    train_fraction: f64 = 0.1;
    val_fraction: f64 = 0.1;
    seed: u64 = 0;
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("line {line}: bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {line}: expected key=value, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::invalid(format!("line {line}: repeated config key `{key}`")));
            }
            cfg.set(key, value, line)?;
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Checks cross-field constraints that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_star > 0.0 && self.t_star < 1.0) {
            return Err(Error::invalid(format!("t_star must lie in (0, 1), got {}", self.t_star)));
        }
        if !(self.lambda_x >= 0.0) {
            return Err(Error::invalid(format!("lambda_x must be non-negative, got {}", self.lambda_x)));
        }
        if self.time_freqs == 0 {
            return Err(Error::invalid("time_freqs must be positive"));
        }
        self.split(0)?;
        for s in [self.embed_settings(), self.diffusion_settings(), self.classifier_settings()] {
            s.validate()?;
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    fn settings(&self, epochs: usize, tag: u64) -> TrainSettings {
        TrainSettings {
            epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer(),
            seed: crate::seeds::derive(self.seed, tag),
        }
    }

    pub fn embed_settings(&self) -> TrainSettings {
        self.settings(self.epochs, 1)
    }

    pub fn diffusion_settings(&self) -> TrainSettings {
        self.settings(self.diffusion_epochs, 2)
    }

    pub fn classifier_settings(&self) -> TrainSettings {
        self.settings(self.classifier_epochs, 3)
    }

    /// Seed of model initialization for stage `tag`.
    pub fn init_seed(&self, tag: u64) -> u64 {
        crate::seeds::derive(self.seed, 0x1000 + tag)
    }

    /// Embedding architecture for data with `bands` bands and `n_classes` classes.
    pub fn embed_config(&self, bands: usize, n_classes: usize) -> EmbedConfig {
        EmbedConfig {
            patch_size: self.patch_size,
            stride: self.stride,
            bands,
            embed_dim: self.embed_dim,
            rank: self.rank,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            lambda_cls: self.lambda_cls,
            n_classes,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            n_freqs: self.time_freqs,
            ..HeadConfig::new(self.embed_dim)
        }
    }

    /// Train/val/test fractions; the test fraction takes the remainder.
    pub fn split(&self, seed: u64) -> Result<SplitSpec> {
        let test = 1.0 - self.train_fraction - self.val_fraction;
        SplitSpec::new(self.train_fraction, self.val_fraction, test.max(0.0), seed)
    }
}
