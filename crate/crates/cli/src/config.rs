//! Declarative pipeline configuration. Precedence, lowest first: built-in
//! defaults, the TOML file given by `--config`, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vidrep::classify::{KernelKind, DEFAULT_C_GRID, DEFAULT_SIGMA_GRID};
use vidrep::encode::{EncoderKind, NormOrder};
use vidrep::eval::{FusionNorm, PairGrouping, DEFAULT_BINS};
use vidrep::experiment::ExperimentConfig;
use vidrep::synth::SynthConfig;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub pca: PcaConfig,
    pub kmeans: ClusterConfig,
    pub gmm: ClusterConfig,
    pub encode: EncodeConfig,
    pub spp: SppSection,
    pub pq: PqConfig,
    pub svm: SvmConfig,
    pub eval: EvalConfig,
    pub fusion: FusionConfig,
    pub simstats: SimstatsConfig,
    pub synth: SynthConfig,
    pub ablate: AblateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub dim: usize,
    pub whiten: bool,
    pub eps: f64,
    /// Cap on training rows, sampled with the seed; 0 keeps all.
    pub max_frames: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            dim: 256,
            whiten: false,
            eps: vidrep::preprocess::DEFAULT_WHITEN_EPS,
            max_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub max_frames: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 256,
            max_iter: 100,
            tol: 1e-6,
            max_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    pub method: EncoderKind,
    pub knn: usize,
    pub ssr: bool,
    pub intra: bool,
    pub l2: bool,
    pub norm_order: NormOrder,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            method: EncoderKind::Vlad,
            knn: 5,
            ssr: true,
            intra: true,
            l2: true,
            norm_order: NormOrder::IntraThenSsr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SppSection {
    pub enabled: bool,
    pub levels: Vec<usize>,
}

impl Default for SppSection {
    fn default() -> Self {
        SppSection {
            enabled: true,
            levels: vidrep::lcd::SppConfig::default().levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqConfig {
    pub b: usize,
    pub m: u32,
    pub max_iter: usize,
}

impl Default for PqConfig {
    fn default() -> Self {
        PqConfig { b: 4, m: 8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Linear,
    ExpChi2,
    Rbf,
}

impl Kernel {
    pub fn kind(self) -> Option<KernelKind> {
        match self {
            Kernel::Linear => None,
            Kernel::ExpChi2 => Some(KernelKind::ExpChi2),
            Kernel::Rbf => Some(KernelKind::Rbf),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    pub sigma: f64,
    pub folds: usize,
    pub c_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub gap_tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: Kernel::Linear,
            c: 1.0,
            sigma: 1.0,
            folds: 5,
            c_grid: DEFAULT_C_GRID.to_vec(),
            sigma_grid: DEFAULT_SIGMA_GRID.to_vec(),
            gap_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// 11-point interpolated AP instead of the non-interpolated mean.
    pub interpolated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub norm: FusionNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimstatsConfig {
    pub bins: usize,
    pub grouping: PairGrouping,
}

impl Default for SimstatsConfig {
    fn default() -> Self {
        SimstatsConfig {
            bins: DEFAULT_BINS,
            grouping: PairGrouping::WithinEvent,
        }
    }
}

/// One-axis-at-a-time sweeps around `base`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub base: ExperimentConfig,
    pub pca_dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub knns: Vec<usize>,
    pub ssr: Vec<bool>,
    pub intra: Vec<bool>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            threads: 0,
            pca: PcaConfig::default(),
            kmeans: ClusterConfig::default(),
            gmm: ClusterConfig {
                tol: 1e-5,
                ..ClusterConfig::default()
            },
            encode: EncodeConfig::default(),
            spp: SppSection::default(),
            pq: PqConfig::default(),
            svm: SvmConfig::default(),
            eval: EvalConfig::default(),
            fusion: FusionConfig::default(),
            simstats: SimstatsConfig::default(),
            synth: SynthConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))
            .context("loading configuration")?;
        Ok(cfg)
    }

    /// Checks every knob against the preconditions of the module that uses it.
    pub fn validate(&self) -> Result<(), UsageError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(UsageError(format!("{name} must be positive, got {v}")))
            }
        };
        let nonzero = |name: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(UsageError(format!("{name} must be at least 1")))
            }
        };
        nonzero("pca.dim", self.pca.dim)?;
        positive("pca.eps", self.pca.eps)?;
        nonzero("kmeans.k", self.kmeans.k)?;
        nonzero("kmeans.max_iter", self.kmeans.max_iter)?;
        nonzero("gmm.k", self.gmm.k)?;
        nonzero("gmm.max_iter", self.gmm.max_iter)?;
        positive("gmm.tol", self.gmm.tol)?;
        if !(self.kmeans.tol.is_finite() && self.kmeans.tol >= 0.0) {
            return Err(UsageError(format!("kmeans.tol must be non-negative, got {}", self.kmeans.tol)));
        }
        nonzero("encode.knn", self.encode.knn)?;
        if self.spp.levels.is_empty() || self.spp.levels.contains(&0) {
            return Err(UsageError(format!("spp.levels must be positive, got {:?}", self.spp.levels)));
        }
        nonzero("pq.b", self.pq.b)?;
        if !(1..=vidrep::pq::MAX_BITS).contains(&self.pq.m) {
            return Err(UsageError(format!("pq.m must be in 1..={}, got {}", vidrep::pq::MAX_BITS, self.pq.m)));
        }
        nonzero("pq.max_iter", self.pq.max_iter)?;
        positive("svm.c", self.svm.c)?;
        positive("svm.sigma", self.svm.sigma)?;
        positive("svm.gap_tol", self.svm.gap_tol)?;
        if self.svm.folds < 2 {
            return Err(UsageError(format!("svm.folds must be at least 2, got {}", self.svm.folds)));
        }
        if self.svm.c_grid.is_empty() || self.svm.sigma_grid.is_empty() {
            return Err(UsageError("svm grids must not be empty".into()));
        }
        for &c in &self.svm.c_grid {
            positive("svm.c_grid entry", c)?;
        }
        for &s in &self.svm.sigma_grid {
            positive("svm.sigma_grid entry", s)?;
        }
        nonzero("simstats.bins", self.simstats.bins)?;
        self.synth.validate().map_err(|e| UsageError(format!("synth: {e}")))?;
        self.ablate.base.validate().map_err(|e| UsageError(format!("ablate.base: {e}")))?;
        Ok(())
    }
}
