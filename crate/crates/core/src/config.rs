//! Run configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{Method, MethodContext, DEFAULT_LABELED_FRACTION};
use crate::dataset::NormScope;
use crate::ensemble::{FuseOptions, Mode, DEFAULT_REG};
use crate::error::{FuseError, Result};
use crate::metrics::{EvalOptions, KValue};
use crate::tci::{PairSet, ThresholdOptions, DEFAULT_CLIP_DELTA, DEFAULT_MAX_SWEEPS};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    pub manifest: Option<PathBuf>,
    pub records: Option<PathBuf>,
    /// Selections file written by `run` and read by `eval`.
    pub selections: Option<PathBuf>,
    /// JSON report written by `eval`.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Pass@1 from the first response only.
    pub pass1_literal: bool,
    /// JCI-MLE with the alternative coefficient form.
    pub eq9_compat: bool,
    /// TCI statistic over pairs that exclude the third index instead of
    /// pairs below it.
    pub tci_index_alt: bool,
    /// Min-max normalize over the whole batch instead of per query.
    pub global_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub methods: Vec<Method>,
    pub clip_delta: f64,
    pub reg: f64,
    pub max_sweeps: usize,
    pub ks: Vec<KValue>,
    pub seed: u64,
    pub labeled_fraction: f64,
    /// Worker threads; 0 uses every core. Never affects results.
    pub workers: usize,
    /// Include per-response scores in the selections file.
    pub emit_scores: bool,
    pub io: IoPaths,
    pub flags: Flags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Query,
            methods: Method::ALL.to_vec(),
            clip_delta: DEFAULT_CLIP_DELTA,
            reg: DEFAULT_REG,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            ks: KValue::defaults(),
            seed: 0,
            labeled_fraction: DEFAULT_LABELED_FRACTION,
            workers: 0,
            emit_scores: true,
            io: IoPaths::default(),
            flags: Flags::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FuseError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_delta > 0.0) {
            return Err(FuseError::Config(format!("clip_delta must be positive, got {}", self.clip_delta)));
        }
        if !(self.reg >= 0.0) {
            return Err(FuseError::Config(format!("reg must be nonnegative, got {}", self.reg)));
        }
        if self.max_sweeps == 0 {
            return Err(FuseError::Config("max_sweeps must be at least 1".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(FuseError::Config("labeled_fraction must be in (0, 1]".into()));
        }
        if self.methods.is_empty() {
            return Err(FuseError::Config("no methods requested".into()));
        }
        Ok(())
    }

    pub fn fuse_options(&self) -> FuseOptions {
        FuseOptions {
            mode: self.mode,
            thresholds: ThresholdOptions {
                clip_delta: self.clip_delta,
                max_sweeps: self.max_sweeps,
                pairs: if self.flags.tci_index_alt {
                    PairSet::ExcludeThird
                } else {
                    PairSet::Below
                },
            },
            reg: self.reg,
        }
    }

    pub fn method_context(&self) -> MethodContext {
        MethodContext {
            fuse: self.fuse_options(),
            labeled_fraction: self.labeled_fraction,
            seed: self.seed,
            printed_jci_form: self.flags.eq9_compat,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            pass1_literal: self.flags.pass1_literal,
        }
    }

    pub fn norm_scope(&self) -> NormScope {
        if self.flags.global_norm {
            NormScope::Global
        } else {
            NormScope::PerBlock
        }
    }

    /// SHA-256 over every setting that can change results (paths and worker
    /// count excluded).
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.io = IoPaths::default();
        semantic.workers = 0;
        let json = serde_json::to_string(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn required_path<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| FuseError::Config(format!("no {what} path given")))
    }
}
