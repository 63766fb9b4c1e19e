//! Experiment configuration: file formats (TOML or JSON, one schema) and
//! validation. Every run is fully determined by a config plus a master seed.

use anyhow::{bail, Context, Result};
use dropcast_core::{ControlConfig, Partition, SolverChoice, SquareMatrix};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A closed interval scanned with a fixed number of grid points.
/// `subdivisions = 1` degenerates to the single point `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub subdivisions: usize,
}

impl RangeSpec {
    pub fn new(min: f64, max: f64, subdivisions: usize) -> Self {
        RangeSpec {
            min,
            max,
            subdivisions,
        }
    }

    /// Grid points, ascending. One point sits at `min` when
    /// `subdivisions == 1`, otherwise the interval endpoints are included.
    pub fn points(&self) -> Vec<f64> {
        if self.subdivisions == 1 {
            return vec![self.min];
        }
        let span = self.max - self.min;
        (0..self.subdivisions)
            .map(|i| self.min + span * i as f64 / (self.subdivisions - 1) as f64)
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            bail!("{what}: endpoints must be finite");
        }
        if self.min < 0.0 || self.max < self.min {
            bail!("{what}: need 0 <= min <= max, got [{}, {}]", self.min, self.max);
        }
        if self.subdivisions < 1 {
            bail!("{what}: subdivisions must be >= 1");
        }
        Ok(())
    }
}

/// Per-cell policy: an adaptive controller, or no alteration at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSpec {
    /// The literal string "control": cascades run unaltered.
    Baseline(String),
    /// Adaptive per-step dropout with these parameters.
    Controlled(ControlConfig),
}

impl ControlSpec {
    pub fn baseline() -> Self {
        ControlSpec::Baseline("control".to_string())
    }

    pub fn as_config(&self) -> Option<&ControlConfig> {
        match self {
            ControlSpec::Baseline(_) => None,
            ControlSpec::Controlled(c) => Some(c),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ControlSpec::Baseline(s) if s == "control" => Ok(()),
            ControlSpec::Baseline(s) => {
                bail!("unknown control spec {s:?}; use \"control\" or a config table")
            }
            ControlSpec::Controlled(c) => c.validate().map_err(Into::into),
        }
    }
}

/// Full description of a synthetic sweep: the network family, the scanned
/// diagonal/off-diagonal perturbation grid, and the per-cell policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub partition_sizes: Vec<usize>,
    pub base_matrix: Vec<Vec<f64>>,
    #[serde(default = "default_x_range")]
    pub x_range: RangeSpec,
    #[serde(default = "default_y_range")]
    pub y_range: RangeSpec,
    #[serde(default = "default_trials")]
    pub trials_per_cell: usize,
    #[serde(default = "default_control")]
    pub control: ControlSpec,
    /// Cascade seeds drawn uniformly without replacement per trial.
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    /// Master seed; every cell and trial derives its generator from it.
    #[serde(default)]
    pub master_seed: u64,
}

fn default_x_range() -> RangeSpec {
    RangeSpec::new(0.0, 0.01, 10)
}

fn default_y_range() -> RangeSpec {
    RangeSpec::new(0.0, 0.001, 10)
}

fn default_trials() -> usize {
    20
}

fn default_control() -> ControlSpec {
    ControlSpec::baseline()
}

fn default_n_seeds() -> usize {
    10
}

impl SyntheticConfig {
    /// The balanced two-class configuration at desk-scale defaults:
    /// 10x10 grid, 20 trials per cell.
    pub fn balanced_two_class() -> Self {
        SyntheticConfig {
            partition_sizes: vec![500, 500],
            base_matrix: vec![vec![0.01, 0.002], vec![0.002, 0.01]],
            x_range: default_x_range(),
            y_range: default_y_range(),
            trials_per_cell: default_trials(),
            control: ControlSpec::baseline(),
            n_seeds: default_n_seeds(),
            master_seed: 0,
        }
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::from_sizes(&self.partition_sizes).map_err(Into::into)
    }

    pub fn base(&self) -> Result<SquareMatrix> {
        SquareMatrix::from_rows(self.base_matrix.clone()).map_err(Into::into)
    }

    pub fn validate(&self) -> Result<()> {
        let partition = self.partition().context("partition_sizes")?;
        let base = self.base().context("base_matrix")?;
        if base.k() != partition.num_classes() {
            bail!(
                "base_matrix is {0}x{0} but there are {1} classes",
                base.k(),
                partition.num_classes()
            );
        }
        if !base.is_probability_matrix() {
            bail!("base_matrix entries must lie in [0, 1]");
        }
        self.x_range.validate("x_range")?;
        self.y_range.validate("y_range")?;
        if self.trials_per_cell < 1 {
            bail!("trials_per_cell must be >= 1");
        }
        if self.n_seeds < 1 || self.n_seeds > partition.n_total() {
            bail!(
                "n_seeds must be in [1, {}], got {}",
                partition.n_total(),
                self.n_seeds
            );
        }
        self.control.validate()?;
        Ok(())
    }

    /// Switch to the full-fidelity grid: 50x50 cells, 50 trials per cell.
    pub fn at_full_scale(mut self) -> Self {
        self.x_range.subdivisions = 50;
        self.y_range.subdivisions = 50;
        self.trials_per_cell = 50;
        self
    }
}

/// Ground-truth description for fabricating a labeled cascade corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetGenConfig {
    pub partition_sizes: Vec<usize>,
    pub base_matrix: Vec<Vec<f64>>,
    /// Diagonal boost applied to the true-content matrix (mirrored as a
    /// penalty on the false-content one).
    #[serde(default = "default_gen_x")]
    pub x: f64,
    /// Off-diagonal boost applied to the false-content matrix.
    #[serde(default = "default_gen_y")]
    pub y: f64,
    #[serde(default = "default_gen_cascades")]
    pub cascades: usize,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_gen_x() -> f64 {
    0.005
}

fn default_gen_y() -> f64 {
    0.0005
}

fn default_gen_cascades() -> usize {
    500
}

impl DatasetGenConfig {
    pub fn balanced_two_class() -> Self {
        DatasetGenConfig {
            partition_sizes: vec![500, 500],
            base_matrix: vec![vec![0.01, 0.002], vec![0.002, 0.01]],
            x: default_gen_x(),
            y: default_gen_y(),
            cascades: default_gen_cascades(),
            n_seeds: default_n_seeds(),
            master_seed: 0,
        }
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::from_sizes(&self.partition_sizes).map_err(Into::into)
    }

    pub fn base(&self) -> Result<SquareMatrix> {
        SquareMatrix::from_rows(self.base_matrix.clone()).map_err(Into::into)
    }

    pub fn validate(&self) -> Result<()> {
        let partition = self.partition()?;
        let base = self.base()?;
        if base.k() != partition.num_classes() {
            bail!("base_matrix size does not match the number of classes");
        }
        if self.cascades == 0 {
            bail!("cascades must be >= 1");
        }
        if self.n_seeds < 1 || self.n_seeds > partition.n_total() {
            bail!("n_seeds out of range");
        }
        Ok(())
    }
}

/// Parse a config file as TOML or JSON depending on extension; files
/// without a known extension are tried as TOML first, then JSON.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "json" => {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
        "toml" => {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
        _ => toml::from_str(&text)
            .map_err(anyhow::Error::from)
            .or_else(|toml_err| {
                serde_json::from_str(&text).map_err(|json_err| {
                    anyhow::anyhow!(
                        "{} parses as neither TOML ({toml_err}) nor JSON ({json_err})",
                        path.display()
                    )
                })
            }),
    }
}

/// Parse a partition file: JSON `{"sizes":[...]}` for contiguous classes
/// or `{"class_of":[...]}` for arbitrary memberships.
pub fn load_partition(path: &Path) -> Result<Partition> {
    #[derive(Deserialize)]
    struct PartitionFile {
        #[serde(default)]
        sizes: Option<Vec<usize>>,
        #[serde(default)]
        class_of: Option<Vec<usize>>,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading partition {}", path.display()))?;
    let parsed: PartitionFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match (parsed.sizes, parsed.class_of) {
        (Some(sizes), None) => Partition::from_sizes(&sizes).map_err(Into::into),
        (None, Some(class_of)) => Partition::from_class_of(class_of).map_err(Into::into),
        (Some(_), Some(_)) => bail!("partition file has both \"sizes\" and \"class_of\""),
        (None, None) => bail!("partition file needs \"sizes\" or \"class_of\""),
    }
}

/// Parse a block-matrix file: JSON `{"block":[[...],...]}`.
pub fn load_block(path: &Path) -> Result<SquareMatrix> {
    #[derive(Deserialize)]
    struct BlockFile {
        block: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading block matrix {}", path.display()))?;
    let parsed: BlockFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    SquareMatrix::from_rows(parsed.block).map_err(Into::into)
}

/// A named control policy for the pipeline's comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    pub spec: ControlSpec,
}

impl NamedPolicy {
    pub fn baseline() -> Self {
        NamedPolicy {
            name: "control".into(),
            spec: ControlSpec::baseline(),
        }
    }

    pub fn controlled(alpha: f64, lambda: f64, solver: SolverChoice, seed: u64) -> Self {
        NamedPolicy {
            name: format!("alpha={alpha},lambda={lambda}"),
            spec: ControlSpec::Controlled(ControlConfig {
                alpha,
                lambda,
                solver,
                max_steps: 200,
                seed,
            }),
        }
    }
}
