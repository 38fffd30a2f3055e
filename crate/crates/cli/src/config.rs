use std::path::{Path, PathBuf};

use lingscrub_core::encoding::CvConfig;
use lingscrub_core::removal::LabelEncoding;
use lingscrub_core::synth::SynthConfig;
use lingscrub_core::temporal::{FirConfig, LanczosConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// One `.fmat` per layer, in layer order.
    pub features: Vec<PathBuf>,
    pub labels: PathBuf,
    pub timeline: PathBuf,
    /// One `.fmat` per subject; the subject id is the file stem.
    pub responses: Vec<PathBuf>,
    /// Voxel-to-parcel CSV.
    pub atlas: PathBuf,
    /// Optional ROI grouping JSON; the built-in language ROIs otherwise.
    pub rois: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalMethod {
    #[default]
    Ridge,
    Inlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemovalConfig {
    /// Tasks to remove; empty means every task in the labels file.
    pub tasks: Vec<String>,
    pub lambda: f64,
    pub encoding: LabelEncoding,
    pub intercept: bool,
    pub method: RemovalMethod,
    pub inlp_iterations: usize,
    /// Class count of the random-label control property.
    pub random_classes: usize,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            tasks: Vec::new(),
            lambda: 0.0,
            encoding: LabelEncoding::Scalar,
            intercept: true,
            method: RemovalMethod::Ridge,
            inlp_iterations: 10,
            random_classes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbingConfig {
    pub test_fraction: f64,
    /// Probe penalty; 1/n_train when absent.
    pub l2: Option<f64>,
}

impl Default for ProbingConfig {
    fn default() -> Self {
        ProbingConfig {
            test_fraction: 0.25,
            l2: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub lanczos: LanczosConfig,
    pub fir: FirConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub q: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { q: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub removal: RemovalConfig,
    #[serde(default)]
    pub probing: ProbingConfig,
    #[serde(default)]
    pub temporal: TemporalConfig,
    #[serde(default)]
    pub encoding: CvConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// Set a dotted key (`encoding.lambda_grid`) in a JSON tree. The value is
/// parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::validation(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(PipelineError::validation(format!("empty key segment in {key:?}")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(PipelineError::validation(format!(
                    "cannot set {key}: {part:?} is inside a non-object value"
                )))
            }
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

impl PipelineConfig {
    /// Parse `text`, apply overrides, and resolve relative paths against `base`.
    pub fn from_json(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut tree: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: PipelineConfig = serde_json::from_value(tree)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, overrides, base)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        paths.features.iter_mut().for_each(join);
        paths.responses.iter_mut().for_each(join);
        join(&mut paths.labels);
        join(&mut paths.timeline);
        join(&mut paths.atlas);
        if let Some(r) = paths.rois.as_mut() {
            join(r);
        }
        join(&mut self.output_dir);
    }

    /// Parameter checks that need no file access.
    pub fn check_parameters(&self) -> Result<()> {
        let q = self.stats.q;
        if !(q > 0.0 && q < 1.0) {
            return Err(PipelineError::validation(format!("stats.q must be in (0, 1), got {q}")));
        }
        let f = self.probing.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(PipelineError::validation("probing.test_fraction must be in (0, 1)"));
        }
        if self.probing.l2.is_some_and(|l| !(l > 0.0)) {
            return Err(PipelineError::validation("probing.l2 must be positive"));
        }
        if !(self.removal.lambda >= 0.0 && self.removal.lambda.is_finite()) {
            return Err(PipelineError::validation("removal.lambda must be non-negative"));
        }
        if self.removal.random_classes < 2 {
            return Err(PipelineError::validation("removal.random_classes must be at least 2"));
        }
        if self.removal.method == RemovalMethod::Inlp && self.removal.inlp_iterations == 0 {
            return Err(PipelineError::validation("removal.inlp_iterations must be positive"));
        }
        if self.temporal.fir.delays.is_empty() || !(self.temporal.fir.tr_seconds > 0.0) {
            return Err(PipelineError::validation("temporal.fir needs delays and a positive TR"));
        }
        if self.temporal.lanczos.lobes == 0 {
            return Err(PipelineError::validation("temporal.lanczos.lobes must be positive"));
        }
        self.encoding.validate()?;
        Ok(())
    }

    /// Parameter checks plus existence of every referenced input file.
    pub fn check(&self) -> Result<()> {
        self.check_parameters()?;
        let p = &self.paths;
        if p.features.is_empty() {
            return Err(PipelineError::validation("paths.features lists no layers"));
        }
        if p.responses.is_empty() {
            return Err(PipelineError::validation("paths.responses lists no subjects"));
        }
        let mut all: Vec<&PathBuf> = p.features.iter().chain(&p.responses).collect();
        all.extend([&p.labels, &p.timeline, &p.atlas]);
        all.extend(p.rois.iter());
        for f in all {
            if !f.is_file() {
                return Err(PipelineError::validation(format!("input file {} does not exist", f.display())));
            }
        }
        Ok(())
    }
}
