//! Run configuration. Values resolve as flags > environment > file > defaults;
//! the binary applies flags after [`RunConfig::load`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::SvmParams;
use crate::contrast::{TripletSpec, DEFAULT_MARGIN};
use crate::data::{LabelMap, Schema, Transform};
use crate::error::{Error, Result};
use crate::lot::{ReferenceMethod, ReferenceParams, SolverConfig};
use crate::ot::{ExactParams, SinkhornParams};
use crate::simgen::{CohortSpec, TreatmentSpec};

pub const ENV_OUTPUT_DIR: &str = "LOTCYTO_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "LOTCYTO_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Embedding worker threads; 0 uses every core.
    pub workers: usize,
    pub input: InputConfig,
    pub labels: Option<LabelMap>,
    pub reference: ReferenceConfig,
    pub solver: SolverSection,
    pub svm: SvmConfig,
    pub cocluster: CoclusterConfig,
    pub signatures: SignatureConfig,
    pub contrast: ContrastConfig,
    pub generate: GenerateConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("lotcyto_out"),
            workers: 0,
            input: InputConfig::default(),
            labels: None,
            reference: ReferenceConfig::default(),
            solver: SolverSection::default(),
            svm: SvmConfig::default(),
            cocluster: CoclusterConfig::default(),
            signatures: SignatureConfig::default(),
            contrast: ContrastConfig::default(),
            generate: GenerateConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub cells: Option<PathBuf>,
    pub meta_columns: Vec<String>,
    pub marker_columns: Vec<String>,
    pub delimiter: char,
    pub transforms: BTreeMap<String, Transform>,
    /// Columns whose value tuple identifies one sample.
    pub group_by: Vec<String>,
    pub label_column: Option<String>,
    pub exclude: Option<ExcludeConfig>,
    /// Z-score every marker over all cells before grouping.
    pub standardize: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            cells: None,
            meta_columns: Vec::new(),
            marker_columns: Vec::new(),
            delimiter: ',',
            transforms: BTreeMap::new(),
            group_by: Vec::new(),
            label_column: None,
            exclude: None,
            standardize: false,
        }
    }
}

impl InputConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            meta_columns: self.meta_columns.clone(),
            marker_columns: self.marker_columns.clone(),
            delimiter: self.delimiter,
            transforms: self.transforms.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcludeConfig {
    pub column: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub m: usize,
    pub method: ReferenceMethod,
    pub seed: u64,
    pub max_pool: Option<usize>,
    /// Reuse a saved reference instead of building one.
    pub path: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let p = ReferenceParams::default();
        ReferenceConfig {
            m: p.m,
            method: p.method,
            seed: p.seed,
            max_pool: p.max_pool,
            path: None,
        }
    }
}

impl ReferenceConfig {
    pub fn params(&self) -> ReferenceParams {
        ReferenceParams {
            m: self.m,
            method: self.method,
            seed: self.seed,
            max_pool: self.max_pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Sinkhorn,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub relative_epsilon: f64,
    pub max_iter: usize,
    pub tol_marginal: f64,
    pub max_size: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            kind: SolverKind::Sinkhorn,
            relative_epsilon: SinkhornParams::DEFAULT_RELATIVE_EPSILON,
            max_iter: 10_000,
            tol_marginal: 1e-7,
            max_size: ExactParams::default().max_size,
        }
    }
}

impl SolverSection {
    pub fn solver(&self) -> SolverConfig {
        match self.kind {
            SolverKind::Sinkhorn => SolverConfig::Sinkhorn {
                relative_epsilon: self.relative_epsilon,
                max_iter: self.max_iter,
                tol_marginal: self.tol_marginal,
            },
            SolverKind::Exact => SolverConfig::Exact {
                max_size: self.max_size,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    /// When nonempty, C is chosen from this grid by cross-validation on the training split.
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let p = SvmParams::default();
        SvmConfig {
            c: p.c,
            c_grid: Vec::new(),
            cv_folds: 5,
            test_fraction: 0.2,
            seed: 0,
            tol: p.tol,
            max_iter: p.max_iter,
            standardize: false,
        }
    }
}

impl SvmConfig {
    pub fn params(&self) -> SvmParams {
        SvmParams {
            c: self.c,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoclusterConfig {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
}

impl Default for CoclusterConfig {
    fn default() -> Self {
        CoclusterConfig { k: 7, l: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    pub enabled: bool,
    pub fdr: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            enabled: true,
            fdr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub block_columns: Vec<String>,
    pub treatment_column: String,
    pub control_label: String,
    pub triplets: Vec<TripletSpec>,
    pub margin: f64,
    /// Score components to project onto.
    pub components: usize,
    pub bicluster_k: usize,
    pub bicluster_l: usize,
    pub seed: u64,
    pub histogram_bins: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            block_columns: vec!["Patient".into(), "Culture".into(), "Replicate".into()],
            treatment_column: "Treatment".into(),
            control_label: "DMSO".into(),
            triplets: Vec::new(),
            margin: DEFAULT_MARGIN,
            components: 2,
            bicluster_k: 10,
            bicluster_l: 8,
            seed: 0,
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GenerateMode {
    #[default]
    Cohort,
    /// Control / single / combination treatment blocks for contrast analysis.
    Treatments,
    Barycenter,
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub mode: GenerateMode,
    pub cohort: CohortSpec,
    pub treatments: TreatmentSpec,
    /// Embeddings CSV and its reference, for barycenter and interpolation.
    pub embeddings: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub key_columns: usize,
    /// Key strings (`v1|v2|...`) of the embeddings to combine; empty selects all.
    pub samples: Vec<String>,
    /// Barycenter weights; empty means uniform.
    pub weights: Vec<f64>,
    pub t: Vec<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            mode: GenerateMode::Cohort,
            cohort: CohortSpec::gaussian_shift(5, 20, 200, 1.0, 3.0, 0),
            treatments: TreatmentSpec::standard(5, 8, 2, 200, 0),
            embeddings: None,
            reference: None,
            key_columns: 1,
            samples: Vec::new(),
            weights: Vec::new(),
            t: vec![0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub cohort: CohortSpec,
    /// Each seed replaces the cohort seed and the split seed.
    pub seeds: Vec<u64>,
    pub m: usize,
    pub mp: Option<MpSimulation>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            cohort: CohortSpec::gaussian_shift(5, 20, 200, 1.0, 3.0, 0),
            seeds: (0..5).collect(),
            m: 50,
            mp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpSimulation {
    pub b: usize,
    pub p: usize,
    pub trials: usize,
    /// Spike covariance strength as a multiple of √(p/B); 0 disables the spiked runs.
    pub spike: f64,
    pub seed: u64,
}

impl Default for MpSimulation {
    fn default() -> Self {
        MpSimulation {
            b: 100,
            p: 2000,
            trials: 20,
            spike: 10.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the file if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| e.context(format!("parsing {}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = var(ENV_OUTPUT_DIR).filter(|s| !s.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(w) = var(ENV_WORKERS).filter(|s| !s.is_empty()) {
            self.workers = w
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_WORKERS}={w} is not a worker count")))?;
        }
        Ok(())
    }
}
