//! Experiment settings and the `key=value` config file format.

use std::path::Path;

use super::PipelineError;
use crate::forest::ForestParams;

/// Where the per-segment fixation energy comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FixationSource {
    /// Raw counts of fixations detected in the subjects' gaze logs.
    Human,
    /// `maps/<algorithm>/<image-id>.pgm`.
    Map(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Number of top-scored segments averaged into a map.
    pub k: usize,
    pub train_fraction: f64,
    pub n_folds: usize,
    pub fixation_source: FixationSource,
    /// When set, energy maps get a centered Gaussian prior with σ = this × width.
    pub center_bias_sigma: Option<f64>,
    pub seed: u64,
    pub forest: ForestParams,
    /// Threshold turning a composed map into a final mask.
    pub mask_threshold: f64,
    /// Candidates considered by the best-segment oracle.
    pub first_n: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 20,
            train_fraction: 0.4,
            n_folds: 10,
            fixation_source: FixationSource::Human,
            center_bias_sigma: None,
            seed: 0,
            forest: ForestParams::default(),
            mask_threshold: 0.5,
            first_n: 200,
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, PipelineError> {
    v.parse()
        .map_err(|_| bad(line, format!("{key}: cannot parse {v:?}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| bad(line, format!("expected key=value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "k" => cfg.k = num(line, key, value)?,
                "train_fraction" => cfg.train_fraction = num(line, key, value)?,
                "n_folds" => cfg.n_folds = num(line, key, value)?,
                "fixation_source" => {
                    cfg.fixation_source = match value {
                        "human" => FixationSource::Human,
                        "" => return Err(bad(line, "empty fixation_source")),
                        alg => FixationSource::Map(alg.strip_prefix("map:").unwrap_or(alg).to_string()),
                    }
                }
                "center_bias_sigma" => {
                    cfg.center_bias_sigma = match value {
                        "none" | "off" => None,
                        v => Some(num(line, key, v)?),
                    }
                }
                "seed" => cfg.seed = num(line, key, value)?,
                "n_trees" => cfg.forest.n_trees = num(line, key, value)?,
                "mtry" => cfg.forest.mtry = num(line, key, value)?,
                "min_leaf" => cfg.forest.min_leaf = num(line, key, value)?,
                "max_depth" => {
                    cfg.forest.max_depth = match value {
                        "none" | "0" => None,
                        v => Some(num(line, key, v)?),
                    }
                }
                "bootstrap" => cfg.forest.bootstrap = num(line, key, value)?,
                "mask_threshold" => cfg.mask_threshold = num(line, key, value)?,
                "first_n" => cfg.first_n = num(line, key, value)?,
                other => return Err(bad(line, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: &str| Err(PipelineError::InvalidParameter(m.to_string()));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)");
        }
        if self.n_folds == 0 {
            return fail("n_folds must be at least 1");
        }
        if self.center_bias_sigma.is_some_and(|s| !(s > 0.0)) {
            return fail("center_bias_sigma must be positive");
        }
        if self.forest.n_trees == 0 || self.forest.mtry == 0 || self.forest.min_leaf == 0 {
            return fail("n_trees, mtry and min_leaf must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return fail("mask_threshold must lie in [0, 1]");
        }
        if self.first_n == 0 {
            return fail("first_n must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.k, cfg.train_fraction, cfg.n_folds), (20, 0.4, 10));
        assert_eq!(cfg.forest.n_trees, 30);
        assert_eq!(ExperimentConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn parse_overrides() {
        let cfg = ExperimentConfig::parse(
            "# comment\nk = 10\nfixation_source=map:gbvs\ncenter_bias_sigma=0.3 # trailing\nmax_depth=none\nbootstrap=false\nseed=7\n",
        )
        .unwrap();
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.fixation_source, FixationSource::Map("gbvs".into()));
        assert_eq!(cfg.center_bias_sigma, Some(0.3));
        assert_eq!(cfg.forest.max_depth, None);
        assert!(!cfg.forest.bootstrap);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn parse_errors() {
        for text in ["k", "k=abc", "nope=1", "k=0", "train_fraction=1.5", "center_bias_sigma=-1"] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
        match ExperimentConfig::parse("k=1\n\nbogus=2") {
            Err(PipelineError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
