//! Plain-text run configuration: `key = value` lines with `#` comments.
//! Keys mirror the component configs with dotted prefixes (`train.lr`,
//! `pdt.branch_channels`, `data.n_identities`, `mmd.placement`,
//! `backbone.seed`); every key has a default and unknown keys are
//! rejected.

use crate::block::PdtConfig;
use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::losses::{BandwidthMode, MmdConfig};
use crate::trainer::{Supervision, TrainConfig};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub pdt: PdtConfig,
    /// seed for PDT weight initialization
    pub pdt_seed: u64,
    pub data: SynthSpec,
    pub backbone_seed: u64,
    pub embed_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            pdt: PdtConfig::default(),
            pdt_seed: 7,
            data: SynthSpec::default(),
            backbone_seed: 5,
            embed_dim: 64,
        }
    }
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train.lr" => self.train.lr = parse_f64(key, value)?,
            "train.beta1" => self.train.beta1 = parse_f64(key, value)?,
            "train.beta2" => self.train.beta2 = parse_f64(key, value)?,
            "train.eps" => self.train.eps = parse_f64(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(key, value)?,
            "train.margin" => self.train.margin = parse_f64(key, value)?,
            "train.seed" => self.train.seed = parse_u64(key, value)?,
            "train.supervision" => self.train.supervision = Supervision::parse(value)?,
            "train.genuine_fraction" => self.train.genuine_fraction = parse_f64(key, value)?,
            "pdt.branch_channels" => self.pdt.branch_channels = parse_usize(key, value)?,
            "pdt.cbam_reduction" => self.pdt.cbam_reduction = parse_usize(key, value)?,
            "pdt.spatial_kernel" => self.pdt.spatial_kernel = parse_usize(key, value)?,
            "pdt.pool_kernel" => self.pdt.pool_kernel = parse_usize(key, value)?,
            "pdt.seed" => self.pdt_seed = parse_u64(key, value)?,
            "data.n_identities" => self.data.n_identities = parse_usize(key, value)?,
            "data.samples_per_identity" => self.data.samples_per_identity = parse_usize(key, value)?,
            "data.image_size" => self.data.image_size = parse_usize(key, value)?,
            "data.blob_count" => self.data.blob_count = parse_usize(key, value)?,
            "data.noise_sigma" => self.data.noise_sigma = parse_f64(key, value)?,
            "data.seed" => self.data.seed = parse_u64(key, value)?,
            "mmd.bandwidth_mode" => {
                self.train.mmd.bandwidth_mode = match value {
                    "median_heuristic" => BandwidthMode::MedianHeuristic,
                    "fixed" => BandwidthMode::Fixed,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected median_heuristic or fixed, got '{value}'"
                        )))
                    }
                }
            }
            "mmd.fixed_sigma" => self.train.mmd.fixed_sigma = parse_f64(key, value)?,
            "mmd.placement" => {
                self.train.mmd.placement = crate::losses::MmdPlacement::parse(value)?
            }
            "backbone.seed" => self.backbone_seed = parse_u64(key, value)?,
            "backbone.embed_dim" => self.embed_dim = parse_usize(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.pdt.validate()?;
        self.data.validate()?;
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "backbone.embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// The effective configuration, echoable into an output directory and
    /// parseable back into an identical `RunConfig`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "train.lr = {}", self.train.lr);
        let _ = writeln!(s, "train.beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "train.beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "train.eps = {}", self.train.eps);
        let _ = writeln!(s, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "train.margin = {}", self.train.margin);
        let _ = writeln!(s, "train.seed = {}", self.train.seed);
        let _ = writeln!(s, "train.supervision = {}", self.train.supervision.as_str());
        let _ = writeln!(s, "train.genuine_fraction = {}", self.train.genuine_fraction);
        let _ = writeln!(s, "pdt.branch_channels = {}", self.pdt.branch_channels);
        let _ = writeln!(s, "pdt.cbam_reduction = {}", self.pdt.cbam_reduction);
        let _ = writeln!(s, "pdt.spatial_kernel = {}", self.pdt.spatial_kernel);
        let _ = writeln!(s, "pdt.pool_kernel = {}", self.pdt.pool_kernel);
        let _ = writeln!(s, "pdt.seed = {}", self.pdt_seed);
        let _ = writeln!(s, "data.n_identities = {}", self.data.n_identities);
        let _ = writeln!(s, "data.samples_per_identity = {}", self.data.samples_per_identity);
        let _ = writeln!(s, "data.image_size = {}", self.data.image_size);
        let _ = writeln!(s, "data.blob_count = {}", self.data.blob_count);
        let _ = writeln!(s, "data.noise_sigma = {}", self.data.noise_sigma);
        let _ = writeln!(s, "data.seed = {}", self.data.seed);
        let _ = writeln!(
            s,
            "mmd.bandwidth_mode = {}",
            match self.train.mmd.bandwidth_mode {
                BandwidthMode::MedianHeuristic => "median_heuristic",
                BandwidthMode::Fixed => "fixed",
            }
        );
        let _ = writeln!(s, "mmd.fixed_sigma = {}", self.train.mmd.fixed_sigma);
        let _ = writeln!(s, "mmd.placement = {}", self.train.mmd.placement.as_str());
        let _ = writeln!(s, "backbone.seed = {}", self.backbone_seed);
        let _ = writeln!(s, "backbone.embed_dim = {}", self.embed_dim);
        s
    }

    pub fn echo(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("config.txt");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn mmd(&self) -> MmdConfig {
        self.train.mmd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
        // empty text = all defaults
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "
            # experiment overrides
            train.lr = 0.01   # bigger step
            data.n_identities = 12
            train.supervision = mmd_op
        ";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.data.n_identities, 12);
        assert_eq!(cfg.train.supervision, Supervision::MmdOp);
        assert_eq!(cfg.train.epochs, 20); // untouched default
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let err = RunConfig::parse("train.momentum = 0.9").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("train.momentum"), "{err}");

        assert!(matches!(RunConfig::parse("just text"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("train.lr = fast"), Err(Error::Config(_))));
        // values must satisfy component invariants too
        assert!(matches!(RunConfig::parse("train.batch_size = 1"), Err(Error::Config(_))));
    }
}
