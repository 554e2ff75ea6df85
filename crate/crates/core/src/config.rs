//! Flat `key = value` configuration files for the whole pipeline.

use std::path::Path;

use crate::emma::EmmaConfig;
use crate::error::{Error, Result};
use crate::motion::{Coupling, DeltaTMode, MotionConfig, Similarity};
use crate::tracker::TrackerConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub motion: MotionConfig,
    pub emma: EmmaConfig,
    pub tracker: TrackerConfig,
}

/// Every key accepted by [`PipelineConfig::apply`].
pub const KEYS: &[&str] = &[
    "lambda_reg",
    "pyramid_levels",
    "iters_per_level",
    "step_size",
    "squaring_steps",
    "gradient_sigma",
    "delta_t_max",
    "delta_t_mode",
    "coupling",
    "similarity",
    "lncc_radius",
    "emma_k",
    "emma_iters",
    "emma_patch",
    "exemplar_size",
    "search_size",
    "label_sigma",
    "prior_sigma",
    "prior_weight",
    "dpn_levels",
    "dpn_fuse_level",
    "use_dpn",
    "template_update_rate",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse `{value}`")))
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::InvalidConfig(format!("{key}: expected one of {}, got `{value}`", names.join("|")))
        })
}

impl PipelineConfig {
    /// Sets one key. `seed` drives both the tracker and the seed selection.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.motion;
        let t = &mut self.tracker;
        match key {
            "lambda_reg" => m.lambda_reg = num(key, value)?,
            "pyramid_levels" => m.pyramid_levels = num(key, value)?,
            "iters_per_level" => m.iters_per_level = num(key, value)?,
            "step_size" => m.step_size = num(key, value)?,
            "squaring_steps" => m.squaring_steps = num(key, value)?,
            "gradient_sigma" => m.gradient_sigma = num(key, value)?,
            "delta_t_max" => m.delta_t_max = num(key, value)?,
            "delta_t_mode" => {
                m.delta_t_mode = choice(
                    key,
                    value,
                    &[("fixed", DeltaTMode::Fixed), ("uniform", DeltaTMode::UniformRandom)],
                )?
            }
            "coupling" => {
                m.coupling = choice(
                    key,
                    value,
                    &[("complete", Coupling::Complete), ("partial", Coupling::Partial)],
                )?
            }
            "similarity" => {
                let radius = match m.similarity {
                    Similarity::Lncc { radius } => radius,
                    Similarity::Ssd => 2,
                };
                m.similarity = choice(
                    key,
                    value,
                    &[("ssd", Similarity::Ssd), ("lncc", Similarity::Lncc { radius })],
                )?
            }
            "lncc_radius" => {
                let radius = num(key, value)?;
                m.similarity = Similarity::Lncc { radius };
            }
            "emma_k" => self.emma.k = num(key, value)?,
            "emma_iters" => self.emma.iterations = num(key, value)?,
            "emma_patch" => self.emma.descriptor_patch = num(key, value)?,
            "exemplar_size" => t.exemplar_size = num(key, value)?,
            "search_size" => t.search_size = num(key, value)?,
            "label_sigma" => t.label_sigma = num(key, value)?,
            "prior_sigma" => t.prior_sigma = num(key, value)?,
            "prior_weight" => t.prior_weight = num(key, value)?,
            "dpn_levels" => t.dpn_levels = num(key, value)?,
            "dpn_fuse_level" => t.dpn_fuse_level = num(key, value)?,
            "use_dpn" => t.use_dpn = num(key, value)?,
            "template_update_rate" => t.template_update_rate = num(key, value)?,
            "seed" => {
                let s: u64 = num(key, value)?;
                t.seed = s;
                self.emma.seed = s;
            }
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            cfg.apply(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidConfig(message) => Error::Parse { line: i + 1, message },
                e => e,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.emma.validate()?;
        self.tracker.validate()
    }
}
