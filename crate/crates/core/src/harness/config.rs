//! Training configuration and its `key = value` text format.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::data::ShuffleLevel;
use crate::losses::{Discriminator, LossWeights};
use crate::network::{NetConfig, ReuseMode};
use crate::params::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps_rec: usize,
    pub steps_all: usize,
    pub weights: LossWeights,
    pub lambda_gp: f64,
    /// Reference shuffle applied to every training batch.
    pub shuffle: ShuffleLevel,
    pub augment: bool,
    /// Feed first-stage features into the second stage.
    pub frf: bool,
    pub seed: u64,
    /// Synthetic training set, used when `data_dir` is unset.
    pub pairs: usize,
    pub hr_size: usize,
    pub data_dir: Option<PathBuf>,
    pub disc_widths: Vec<usize>,
    pub perceptual_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 2,
            steps_rec: 500,
            steps_all: 500,
            weights: LossWeights::default(),
            lambda_gp: 10.0,
            shuffle: ShuffleLevel::Medium,
            augment: true,
            frf: true,
            seed: 0,
            pairs: 8,
            hr_size: 64,
            data_dir: None,
            disc_widths: Discriminator::WIDTHS.to_vec(),
            perceptual_widths: vec![16, 32, 64],
        }
    }
}

const KEYS: &[&str] = &[
    "net",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "steps_rec",
    "steps_all",
    "lambda_rec",
    "lambda_per",
    "lambda_adv",
    "lambda_gp",
    "shuffle",
    "augment",
    "frf",
    "sife",
    "drb",
    "seed",
    "pairs",
    "hr_size",
    "data_dir",
    "width",
    "ref_widths",
    "sife_width",
    "sife_blocks",
    "dense_units",
    "growth",
    "drb_units",
    "esa_pool",
    "esa_stride",
    "reuse_mode",
    "patch",
    "frozen_seed",
    "disc_widths",
    "perceptual_widths",
];

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config { line, detail: format!("`{key}`: {e}") })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config { line, detail: format!("`{key}`: expected on/off, got `{v}`") }),
    }
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(line, key, s.trim())).collect()
}

impl TrainConfig {
    /// Parse `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown or repeated keys are errors. `net = tiny | desk` selects the
    /// architecture preset that the other network keys then override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Config { line, detail: format!("expected `key = value`, got `{body}`") })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config { line, detail: format!("unknown key `{k}`") });
            }
            if let Some(prev) = seen.insert(k.to_string(), line) {
                return Err(Error::Config { line, detail: format!("`{k}` already set on line {prev}") });
            }
            entries.push((line, k.to_string(), v.to_string()));
        }
        let mut cfg = TrainConfig::default();
        if let Some((line, _, v)) = entries.iter().find(|e| e.1 == "net") {
            cfg.net = match v.as_str() {
                "tiny" => NetConfig::tiny(),
                "desk" => NetConfig::default(),
                _ => return Err(Error::Config { line: *line, detail: format!("`net`: expected tiny or desk, got `{v}`") }),
            };
        }
        for (line, k, v) in &entries {
            let (line, v) = (*line, v.as_str());
            let k = k.as_str();
            match k {
                "net" => {}
                "lr" => cfg.adam.lr = parse(line, k, v)?,
                "beta1" => cfg.adam.beta1 = parse(line, k, v)?,
                "beta2" => cfg.adam.beta2 = parse(line, k, v)?,
                "eps" => cfg.adam.eps = parse(line, k, v)?,
                "batch_size" => cfg.batch_size = parse(line, k, v)?,
                "steps_rec" => cfg.steps_rec = parse(line, k, v)?,
                "steps_all" => cfg.steps_all = parse(line, k, v)?,
                "lambda_rec" => cfg.weights.rec = parse(line, k, v)?,
                "lambda_per" => cfg.weights.per = parse(line, k, v)?,
                "lambda_adv" => cfg.weights.adv = parse(line, k, v)?,
                "lambda_gp" => cfg.lambda_gp = parse(line, k, v)?,
                "shuffle" => cfg.shuffle = parse(line, k, v)?,
                "augment" => cfg.augment = parse_bool(line, k, v)?,
                "frf" => cfg.frf = parse_bool(line, k, v)?,
                "sife" => cfg.net.sife = parse_bool(line, k, v)?,
                "drb" => cfg.net.drb = parse_bool(line, k, v)?,
                "seed" => cfg.seed = parse(line, k, v)?,
                "pairs" => cfg.pairs = parse(line, k, v)?,
                "hr_size" => cfg.hr_size = parse(line, k, v)?,
                "data_dir" => cfg.data_dir = Some(PathBuf::from(v)),
                "width" => cfg.net.c = parse(line, k, v)?,
                "ref_widths" => {
                    let w = parse_list(line, k, v)?;
                    cfg.net.ref_c = w.try_into().map_err(|_| Error::Config { line, detail: "`ref_widths`: expected three values".into() })?;
                }
                "sife_width" => cfg.net.c_sife = parse(line, k, v)?,
                "sife_blocks" => cfg.net.sife_blocks = parse(line, k, v)?,
                "dense_units" => cfg.net.dense_units = parse(line, k, v)?,
                "growth" => cfg.net.growth = parse(line, k, v)?,
                "drb_units" => cfg.net.drb_units = parse(line, k, v)?,
                "esa_pool" => cfg.net.esa.pool_k = parse(line, k, v)?,
                "esa_stride" => cfg.net.esa.pool_s = parse(line, k, v)?,
                "reuse_mode" => cfg.net.reuse_mode = parse::<ReuseMode>(line, k, v)?,
                "patch" => cfg.net.patch = parse(line, k, v)?,
                "frozen_seed" => cfg.net.frozen_seed = parse(line, k, v)?,
                "disc_widths" => cfg.disc_widths = parse_list(line, k, v)?,
                "perceptual_widths" => cfg.perceptual_widths = parse_list(line, k, v)?,
                _ => unreachable!("key list and match arms out of sync: {k}"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { line: 0, detail });
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad(format!("invalid optimizer settings {:?}", self.adam));
        }
        let w = self.weights;
        if [w.rec, w.per, w.adv, self.lambda_gp].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.data_dir.is_none() && self.pairs == 0 {
            return bad("pairs must be positive".into());
        }
        if self.disc_widths.is_empty() || self.perceptual_widths.is_empty() {
            return bad("disc_widths and perceptual_widths must be non-empty".into());
        }
        Ok(())
    }
}
