//! The seven analysis stages, executed in dependency order with manifest-based
//! skipping.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lingscrub_core::annotation::{chance_rate, random_property_labels};
use lingscrub_core::data::{
    load_atlas, load_labels, load_matrix, load_timeline, save_matrix, validate_shape, AtlasMap,
    DatasetShape, FeatureMatrix, LabelTable, Matrix, ResponseMatrix, UnitKind, DEFAULT_SUB_ROIS,
};
use lingscrub_core::encoding::{cross_validated_alignment_many, AlignmentResult, Condition};
use lingscrub_core::probing::{probe_accuracy, stratified_split};
use lingscrub_core::removal::{fit_multiple_regressor, inlp_remove, residualize_columns, RemovalOptions};
use lingscrub_core::seed::{derive_indexed, derive_seed};
use lingscrub_core::stats::{
    layer_trend_correlation, parcel_aggregate, roi_aggregate, significance_report, voxel_trend_map,
    whole_brain_trend, SignificanceRow, TrendInput,
};
use lingscrub_core::temporal::{fir_expand, lanczos_downsample, zscore_features};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{PipelineConfig, RemovalMethod};
use crate::error::{PipelineError, Result};
use crate::manifest::{is_current, read_manifest, write_manifest, InputHasher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Validate,
    Remove,
    Probe,
    Align,
    Encode,
    Stats,
    Trend,
}

impl Stage {
    /// Topological order.
    pub const ALL: [Stage; 7] = [
        Stage::Validate,
        Stage::Remove,
        Stage::Probe,
        Stage::Align,
        Stage::Encode,
        Stage::Stats,
        Stage::Trend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Remove => "remove",
            Stage::Probe => "probe",
            Stage::Align => "align",
            Stage::Encode => "encode",
            Stage::Stats => "stats",
            Stage::Trend => "trend",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Validate => &[],
            Stage::Remove => &[Stage::Validate],
            Stage::Probe | Stage::Align => &[Stage::Remove],
            Stage::Encode => &[Stage::Align],
            Stage::Stats => &[Stage::Encode],
            Stage::Trend => &[Stage::Probe, Stage::Encode],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::validation(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Shapes recorded by the validate stage for the stages after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub layers: Vec<u32>,
    pub words: usize,
    pub dims: usize,
    pub tasks: Vec<String>,
    pub removal_tasks: Vec<String>,
    pub subjects: Vec<String>,
    pub trs: usize,
    pub voxels: usize,
}

impl DatasetInfo {
    /// Removal conditions in reporting order.
    pub fn conditions(&self) -> Vec<Condition> {
        self.removal_tasks
            .iter()
            .map(|t| Condition::After(t.clone()))
            .chain([Condition::AfterAll, Condition::RandomBaseline])
            .collect()
    }

    /// `before` followed by the removal conditions.
    pub fn all_conditions(&self) -> Vec<Condition> {
        std::iter::once(Condition::Before).chain(self.conditions()).collect()
    }
}

/// File stem used for a condition's matrices.
pub fn condition_file(c: &Condition) -> String {
    match c {
        Condition::Before => "before".to_string(),
        Condition::After(t) => format!("after-{t}"),
        Condition::AfterAll => "after_all".to_string(),
        Condition::RandomBaseline => "random_baseline".to_string(),
    }
}

pub fn layer_dir(layer: u32) -> String {
    format!("layer_{layer:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub layer: u32,
    pub task: String,
    pub condition: String,
    pub accuracy: f64,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRow {
    pub subject: String,
    pub layer: u32,
    pub condition: String,
    pub voxel: usize,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSummary {
    pub subject: String,
    pub layer: u32,
    pub condition: String,
    pub mean_r: f64,
    pub fold_mean_r: Vec<f64>,
    pub chosen_lambdas: Vec<Vec<f64>>,
    pub undefined_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCsvRow {
    pub layer: u32,
    pub condition: String,
    pub family: String,
    pub subjects: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub t: f64,
    pub p: f64,
    pub degenerate: bool,
    pub significant: bool,
}

#[derive(Debug, Serialize)]
struct RemovalSidecar<'a> {
    task: &'a str,
    layer: u32,
    method: RemovalMethod,
    lambda: f64,
    encoding: lingscrub_core::removal::LabelEncoding,
    intercept: bool,
    identity_residual_norm: Option<f64>,
}

pub const PROBE_CSV: &str = "probing.csv";
pub const ENCODE_CSV: &str = "encoding.csv";
pub const ENCODE_SUMMARY: &str = "summary.json";
pub const SIGNIFICANCE_CSV: &str = "significance.csv";
pub const TREND_ROI_CSV: &str = "trend_roi.csv";
pub const TREND_SUB_ROI_CSV: &str = "trend_sub_roi.csv";
pub const VOXEL_TREND_CSV: &str = "voxel_trend.csv";
pub const LAYER_DELTAS_CSV: &str = "layer_deltas.csv";
const DATASET_JSON: &str = "dataset.json";

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn load_feature(path: &Path) -> Result<FeatureMatrix> {
    Ok(load_matrix(path)?.into_feature()?)
}

fn load_response(path: &Path) -> Result<ResponseMatrix> {
    Ok(load_matrix(path)?.into_response()?)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingStage(stage.name()))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| PipelineError::MissingStage(stage))?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_records(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Label columns removed under a condition.
fn removal_columns<'a>(
    c: &'a Condition,
    info: &DatasetInfo,
    labels: &'a LabelTable,
    random: &'a [usize],
) -> Result<Vec<&'a [usize]>> {
    Ok(match c {
        Condition::After(t) => vec![labels.column_by_name(t)?],
        Condition::AfterAll => info
            .removal_tasks
            .iter()
            .map(|t| labels.column_by_name(t))
            .collect::<std::result::Result<_, _>>()?,
        Condition::RandomBaseline => vec![random],
        Condition::Before => Vec::new(),
    })
}

pub struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    hashes: HashMap<Stage, String>,
    file_hashes: HashMap<PathBuf, String>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Pipeline {
            cfg,
            hashes: HashMap::new(),
            file_hashes: HashMap::new(),
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.output_dir.join(stage.name())
    }

    fn parameters(&self, stage: Stage) -> Value {
        let c = self.cfg;
        match stage {
            Stage::Validate => json!({ "removal_tasks": c.removal.tasks }),
            Stage::Remove => json!({ "removal": c.removal, "seed": c.seed }),
            Stage::Probe => json!({ "probing": c.probing, "seed": c.seed }),
            Stage::Align => json!({ "temporal": c.temporal }),
            Stage::Encode => json!({ "encoding": c.encoding }),
            Stage::Stats => json!({ "stats": c.stats }),
            Stage::Trend => json!({}),
        }
    }

    fn input_files(&self, stage: Stage) -> Vec<PathBuf> {
        let p = &self.cfg.paths;
        match stage {
            Stage::Validate => {
                let mut v: Vec<PathBuf> = p.features.iter().chain(&p.responses).cloned().collect();
                v.extend([p.labels.clone(), p.timeline.clone(), p.atlas.clone()]);
                v.extend(p.rois.iter().cloned());
                v
            }
            Stage::Remove => p.features.iter().chain([&p.labels]).cloned().collect(),
            Stage::Probe => vec![p.labels.clone()],
            Stage::Align => vec![p.timeline.clone()],
            Stage::Encode => p.responses.clone(),
            Stage::Stats => Vec::new(),
            Stage::Trend => std::iter::once(p.atlas.clone()).chain(p.rois.iter().cloned()).collect(),
        }
    }

    fn file_hash(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.file_hashes.get(path) {
            return Ok(h.clone());
        }
        let mut h = InputHasher::new("file", &Value::Null);
        h.file(path)?;
        let digest = h.finish();
        self.file_hashes.insert(path.to_path_buf(), digest.clone());
        Ok(digest)
    }

    /// Hash of everything `stage` depends on, including its upstream stages.
    pub fn expected_hash(&mut self, stage: Stage) -> Result<String> {
        if let Some(h) = self.hashes.get(&stage) {
            return Ok(h.clone());
        }
        let mut parts = Vec::new();
        for up in stage.upstream() {
            parts.push(self.expected_hash(*up)?);
        }
        for f in self.input_files(stage) {
            parts.push(self.file_hash(&f)?);
        }
        let mut h = InputHasher::new(stage.name(), &self.parameters(stage));
        for p in &parts {
            h.text(p);
        }
        let digest = h.finish();
        self.hashes.insert(stage, digest.clone());
        Ok(digest)
    }

    /// Run `stages` in dependency order. Upstream stages not requested must
    /// already have current outputs.
    pub fn run(&mut self, stages: &[Stage]) -> Result<RunSummary> {
        self.cfg.check()?;
        let mut wanted: Vec<Stage> = stages.to_vec();
        wanted.sort();
        wanted.dedup();
        let mut summary = RunSummary::default();
        for stage in wanted {
            for &up in stage.upstream() {
                let expected = self.expected_hash(up)?;
                let fresh = read_manifest(&self.stage_dir(up)).is_some_and(|m| m.inputs_hash == expected)
                    && is_current(&self.stage_dir(up), &expected, &self.parameters(up));
                if !fresh {
                    return Err(PipelineError::MissingStage(up.name()));
                }
            }
            let hash = self.expected_hash(stage)?;
            let params = self.parameters(stage);
            let dir = self.stage_dir(stage);
            if is_current(&dir, &hash, &params) {
                summary.skipped.push(stage);
                continue;
            }
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
            let outputs = match stage {
                Stage::Validate => self.validate(&dir)?,
                Stage::Remove => self.remove(&dir)?,
                Stage::Probe => self.probe(&dir)?,
                Stage::Align => self.align(&dir)?,
                Stage::Encode => self.encode(&dir)?,
                Stage::Stats => self.stats(&dir)?,
                Stage::Trend => self.trend(&dir)?,
            };
            write_manifest(&dir, hash, params, outputs)?;
            summary.executed.push(stage);
        }
        Ok(summary)
    }

    fn dataset_info(&self) -> Result<DatasetInfo> {
        read_json(&self.stage_dir(Stage::Validate).join(DATASET_JSON), Stage::Validate)
    }

    fn labels(&self) -> Result<LabelTable> {
        Ok(load_labels(&self.cfg.paths.labels)?)
    }

    fn atlas(&self) -> Result<AtlasMap> {
        Ok(load_atlas(&self.cfg.paths.atlas, self.cfg.paths.rois.as_deref())?)
    }

    fn validate(&self, dir: &Path) -> Result<Vec<String>> {
        let p = &self.cfg.paths;
        let labels = self.labels()?;
        let timeline = load_timeline(&p.timeline)?;
        let mut shape = DatasetShape {
            label_words: labels.words(),
            timeline_words: timeline.len(),
            max_onset_seconds: timeline.onsets().last().copied().unwrap_or(0.0),
            min_onset_seconds: timeline.onsets().first().copied().unwrap_or(0.0),
            ..DatasetShape::default()
        };
        for f in &p.features {
            let m = load_feature(f)?;
            shape.features.push((m.layer_index(), m.rows(), m.cols(), m.unit_kind()));
        }
        for r in &p.responses {
            let m = load_response(r)?;
            let tr = self.cfg.temporal.fir.tr_seconds;
            shape.responses.push((m.subject_id().to_string(), m.trs(), m.voxels(), tr));
        }
        let mut report = validate_shape(&shape);
        let atlas = self.atlas()?;
        let voxels = shape.responses.first().map_or(0, |r| r.2);
        if atlas.voxels() != voxels {
            report
                .issues
                .push(format!("atlas has {} voxels, responses have {voxels}", atlas.voxels()));
        }
        let mut subjects: Vec<&str> = shape.responses.iter().map(|r| r.0.as_str()).collect();
        subjects.sort_unstable();
        if subjects.windows(2).any(|w| w[0] == w[1]) {
            report.issues.push("duplicate subject ids".to_string());
        }
        let removal_tasks = if self.cfg.removal.tasks.is_empty() {
            labels.task_names().to_vec()
        } else {
            self.cfg.removal.tasks.clone()
        };
        for t in &removal_tasks {
            if labels.task_index(t).is_none() {
                report.issues.push(format!("removal task {t} not in labels"));
            }
        }
        write_json(&dir.join("report.json"), &report)?;
        if !report.is_ok() {
            return Err(PipelineError::Validation(format!(
                "dataset validation failed: {}",
                report.issues.join("; ")
            )));
        }
        let mut layers: Vec<u32> = shape.features.iter().map(|f| f.0).collect();
        layers.sort_unstable();
        let info = DatasetInfo {
            layers,
            words: labels.words(),
            dims: shape.features[0].2,
            tasks: labels.task_names().to_vec(),
            removal_tasks,
            subjects: shape.responses.iter().map(|r| r.0.clone()).collect(),
            trs: shape.responses[0].1,
            voxels,
        };
        write_json(&dir.join(DATASET_JSON), &info)?;
        Ok(vec!["report.json".into(), DATASET_JSON.into()])
    }

    fn layer_files(&self) -> Result<BTreeMap<u32, PathBuf>> {
        let mut out = BTreeMap::new();
        for p in &self.cfg.paths.features {
            let m = load_feature(p)?;
            out.insert(m.layer_index(), p.clone());
        }
        Ok(out)
    }

    fn random_labels(&self, info: &DatasetInfo) -> Result<Vec<usize>> {
        Ok(random_property_labels(
            info.words,
            self.cfg.removal.random_classes,
            derive_seed(self.cfg.seed, "random_baseline"),
        )?)
    }

    /// Fit the configured remover on `fit_rows` (all rows when `None`) and
    /// apply it to every row. The identity residual is reported only for a
    /// full-sample ridge fit.
    fn apply_removal(
        &self,
        w: &FeatureMatrix,
        columns: &[&[usize]],
        fit_rows: Option<&[usize]>,
    ) -> Result<(FeatureMatrix, Option<f64>)> {
        let rc = &self.cfg.removal;
        let subset = |m: &FeatureMatrix| -> Result<FeatureMatrix> {
            Ok(match fit_rows {
                Some(rows) => FeatureMatrix::new(m.values().select_rows(rows), m.layer_index(), m.unit_kind())?,
                None => m.clone(),
            })
        };
        let pick = |col: &[usize]| -> Vec<usize> {
            match fit_rows {
                Some(rows) => rows.iter().map(|&i| col[i]).collect(),
                None => col.to_vec(),
            }
        };
        match rc.method {
            RemovalMethod::Ridge => {
                let opts = RemovalOptions {
                    lambda: rc.lambda,
                    encoding: rc.encoding,
                    intercept: rc.intercept,
                };
                let fit_cols: Vec<Vec<usize>> = columns.iter().map(|c| pick(c)).collect();
                let fit_refs: Vec<&[usize]> = fit_cols.iter().map(Vec::as_slice).collect();
                let model = fit_multiple_regressor(&fit_refs, &subset(w)?, &opts)?;
                let res = residualize_columns(w, columns, &model)?;
                let id = match fit_rows {
                    None => Some(res.identity_residual(columns)?),
                    Some(_) => None,
                };
                Ok((res.residuals, id))
            }
            RemovalMethod::Inlp => {
                let mut cur = w.clone();
                for col in columns {
                    let p = inlp_remove(&subset(&cur)?, &pick(col), rc.inlp_iterations)?.projection;
                    cur = cur.with_values(cur.values() * &p)?;
                }
                Ok((cur, None))
            }
        }
    }

    fn remove(&self, dir: &Path) -> Result<Vec<String>> {
        let info = self.dataset_info()?;
        let labels = self.labels()?;
        let rc = &self.cfg.removal;
        let random = self.random_labels(&info)?;
        let files = self.layer_files()?;
        let conditions = info.conditions();
        let per_layer: Vec<Result<Vec<String>>> = files
            .par_iter()
            .map(|(&layer, path)| -> Result<Vec<String>> {
                let w = load_feature(path)?;
                let ldir = dir.join(layer_dir(layer));
                fs::create_dir_all(&ldir)?;
                let mut outputs = Vec::new();
                for c in &conditions {
                    let columns = removal_columns(c, &info, &labels, &random)?;
                    let (residual, identity) = self.apply_removal(&w, &columns, None)?;
                    let stem = condition_file(c);
                    save_matrix(&Matrix::Feature(residual), &ldir.join(format!("{stem}.fmat")))?;
                    let task = match c {
                        Condition::After(t) => t.as_str(),
                        Condition::AfterAll => "all",
                        _ => "random_baseline",
                    };
                    write_json(
                        &ldir.join(format!("{stem}.json")),
                        &RemovalSidecar {
                            task,
                            layer,
                            method: rc.method,
                            lambda: rc.lambda,
                            encoding: rc.encoding,
                            intercept: rc.intercept,
                            identity_residual_norm: identity,
                        },
                    )?;
                    outputs.push(format!("{}/{stem}.fmat", layer_dir(layer)));
                    outputs.push(format!("{}/{stem}.json", layer_dir(layer)));
                }
                Ok(outputs)
            })
            .collect();
        let mut outputs = Vec::new();
        for r in per_layer {
            outputs.extend(r?);
        }
        Ok(outputs)
    }

    /// Word-level features for a layer and condition.
    fn word_features(&self, files: &BTreeMap<u32, PathBuf>, layer: u32, c: &Condition) -> Result<FeatureMatrix> {
        match c {
            Condition::Before => load_feature(&files[&layer]),
            _ => {
                let p = self
                    .stage_dir(Stage::Remove)
                    .join(layer_dir(layer))
                    .join(format!("{}.fmat", condition_file(c)));
                load_feature(&p)
            }
        }
    }

    fn probe(&self, dir: &Path) -> Result<Vec<String>> {
        let info = self.dataset_info()?;
        let labels = self.labels()?;
        let files = self.layer_files()?;
        let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..labels.tasks())
            .map(|t| {
                stratified_split(
                    labels.column(t),
                    self.cfg.probing.test_fraction,
                    derive_indexed(self.cfg.seed, "probe-split", t as u64),
                )
            })
            .collect();
        let jobs: Vec<(u32, Condition)> = info
            .layers
            .iter()
            .flat_map(|&l| info.all_conditions().into_iter().map(move |c| (l, c)))
            .collect();
        let random = self.random_labels(&info)?;
        // Removal is refitted on the probe's training rows so that held-out
        // words never inform the removed directions.
        let results: Vec<Result<Vec<ProbeRow>>> = jobs
            .par_iter()
            .map(|(layer, c)| -> Result<Vec<ProbeRow>> {
                let w = load_feature(&files[layer])?;
                let columns = removal_columns(c, &info, &labels, &random)?;
                let mut rows = Vec::new();
                for (t, task) in labels.task_names().iter().enumerate() {
                    let y = labels.column(t);
                    let (train, test) = &splits[t];
                    let x = match c {
                        Condition::Before => w.clone(),
                        _ => self.apply_removal(&w, &columns, Some(train))?.0,
                    };
                    let condition = match c {
                        Condition::Before => "before".to_string(),
                        Condition::After(p) if p == task => "after".to_string(),
                        Condition::After(p) => format!("after_other:{p}"),
                        other => other.to_string(),
                    };
                    let accuracy = probe_accuracy(x.values(), y, train, test, self.cfg.probing.l2)?;
                    let test_y: Vec<usize> = test.iter().map(|&i| y[i]).collect();
                    rows.push(ProbeRow {
                        layer: *layer,
                        task: task.clone(),
                        condition,
                        accuracy,
                        chance: chance_rate(&test_y),
                    });
                }
                Ok(rows)
            })
            .collect();
        let mut rows = Vec::new();
        for r in results {
            rows.extend(r?);
        }
        write_csv(&dir.join(PROBE_CSV), &rows)?;
        Ok(vec![PROBE_CSV.into()])
    }

    fn align(&self, dir: &Path) -> Result<Vec<String>> {
        let info = self.dataset_info()?;
        let files = self.layer_files()?;
        let timeline = load_timeline(&self.cfg.paths.timeline)?;
        let tc = &self.cfg.temporal;
        let jobs: Vec<(u32, Condition)> = info
            .layers
            .iter()
            .flat_map(|&l| info.all_conditions().into_iter().map(move |c| (l, c)))
            .collect();
        let results: Vec<Result<(String, Value)>> = jobs
            .par_iter()
            .map(|(layer, c)| -> Result<(String, Value)> {
                let w = self.word_features(&files, *layer, c)?;
                let down = lanczos_downsample(&w, &timeline, info.trs, tc.fir.tr_seconds, &tc.lanczos)?;
                let (centered, _) = zscore_features(&down.features)?;
                let fir = fir_expand(&centered, &tc.fir)?;
                let (z, constant) = zscore_features(&fir)?;
                let z = FeatureMatrix::new(z.into_values(), *layer, UnitKind::Tr)?;
                let rel = format!("{}/{}.fmat", layer_dir(*layer), condition_file(c));
                let path = dir.join(&rel);
                fs::create_dir_all(path.parent().expect("has layer dir"))?;
                save_matrix(&Matrix::Feature(z), &path)?;
                let note = json!({
                    "layer": layer,
                    "condition": c.to_string(),
                    "empty_trs": down.empty_trs,
                    "constant_columns": constant.len(),
                });
                Ok((rel, note))
            })
            .collect();
        let mut outputs = Vec::new();
        let mut notes = Vec::new();
        for r in results {
            let (rel, note) = r?;
            outputs.push(rel);
            notes.push(note);
        }
        write_json(&dir.join("summary.json"), &notes)?;
        outputs.push("summary.json".into());
        Ok(outputs)
    }

    fn encode(&self, dir: &Path) -> Result<Vec<String>> {
        let info = self.dataset_info()?;
        let responses: Vec<ResponseMatrix> = self
            .cfg
            .paths
            .responses
            .par_iter()
            .map(|p| load_response(p))
            .collect::<Result<_>>()?;
        let ys: Vec<&ResponseMatrix> = responses.iter().collect();
        let align_dir = self.stage_dir(Stage::Align);
        let jobs: Vec<(u32, Condition)> = info
            .layers
            .iter()
            .flat_map(|&l| info.all_conditions().into_iter().map(move |c| (l, c)))
            .collect();
        let results: Vec<Result<Vec<AlignmentResult>>> = jobs
            .par_iter()
            .map(|(layer, c)| -> Result<Vec<AlignmentResult>> {
                let path = align_dir.join(layer_dir(*layer)).join(format!("{}.fmat", condition_file(c)));
                let x = load_feature(&path)?;
                let res = cross_validated_alignment_many(&x, &ys, &self.cfg.encoding)?;
                Ok(res
                    .into_iter()
                    .map(|r| AlignmentResult {
                        layer: *layer,
                        ..r.with_condition(c.clone())
                    })
                    .collect())
            })
            .collect();
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for r in results {
            for a in r? {
                for (v, r) in a.per_voxel_r.iter().enumerate() {
                    rows.push(EncodeRow {
                        subject: a.subject_id.clone(),
                        layer: a.layer,
                        condition: a.condition.to_string(),
                        voxel: v,
                        r: *r,
                    });
                }
                summary.push(EncodeSummary {
                    subject: a.subject_id.clone(),
                    layer: a.layer,
                    condition: a.condition.to_string(),
                    mean_r: a.per_subject_mean,
                    fold_mean_r: a.fold_mean_r.clone(),
                    chosen_lambdas: a.chosen_lambda.clone(),
                    undefined_voxels: a.undefined_voxels,
                });
            }
        }
        write_csv(&dir.join(ENCODE_CSV), &rows)?;
        write_json(&dir.join(ENCODE_SUMMARY), &summary)?;
        Ok(vec![ENCODE_CSV.into(), ENCODE_SUMMARY.into()])
    }

    fn stats(&self, dir: &Path) -> Result<Vec<String>> {
        let summary: Vec<EncodeSummary> =
            read_json(&self.stage_dir(Stage::Encode).join(ENCODE_SUMMARY), Stage::Encode)?;
        let rows = significance_rows(&summary, self.cfg.stats.q)?;
        write_csv(&dir.join(SIGNIFICANCE_CSV), &rows)?;
        Ok(vec![SIGNIFICANCE_CSV.into()])
    }

    fn trend(&self, dir: &Path) -> Result<Vec<String>> {
        let info = self.dataset_info()?;
        let atlas = self.atlas()?;
        let probes: Vec<ProbeRow> = read_csv(&self.stage_dir(Stage::Probe).join(PROBE_CSV), "probe")?;
        let enc: Vec<EncodeRow> = read_csv(&self.stage_dir(Stage::Encode).join(ENCODE_CSV), "encode")?;
        let tables = trend_tables(&info, &atlas, &probes, &enc)?;
        tables.write(dir)?;
        Ok(vec![
            TREND_ROI_CSV.into(),
            TREND_SUB_ROI_CSV.into(),
            VOXEL_TREND_CSV.into(),
            LAYER_DELTAS_CSV.into(),
        ])
    }
}

/// Paired tests of every removal condition against `before`. Property
/// removals form one FDR family; the random-label control is its own family.
pub fn significance_rows(summary: &[EncodeSummary], q: f64) -> Result<Vec<SignificanceCsvRow>> {
    let to_result = |s: &EncodeSummary| -> Result<AlignmentResult> {
        Ok(AlignmentResult {
            subject_id: s.subject.clone(),
            layer: s.layer,
            condition: s.condition.parse()?,
            per_voxel_r: Vec::new(),
            per_subject_mean: s.mean_r,
            fold_mean_r: Vec::new(),
            chosen_lambda: Vec::new(),
            undefined_voxels: s.undefined_voxels,
        })
    };
    let all: Vec<AlignmentResult> = summary.iter().map(to_result).collect::<Result<_>>()?;
    let (before, after): (Vec<AlignmentResult>, Vec<AlignmentResult>) =
        all.into_iter().partition(|r| r.condition == Condition::Before);
    let (control, property): (Vec<AlignmentResult>, Vec<AlignmentResult>) =
        after.into_iter().partition(|r| r.condition == Condition::RandomBaseline);
    let mut rows = Vec::new();
    for (family, group) in [("property", property), ("control", control)] {
        if group.is_empty() {
            continue;
        }
        let report = significance_report(&before, &group, q)?;
        rows.extend(report.rows.into_iter().map(|r: SignificanceRow| SignificanceCsvRow {
            layer: r.layer,
            condition: r.condition.to_string(),
            family: family.to_string(),
            subjects: r.subjects,
            mean_before: r.mean_before,
            mean_after: r.mean_after,
            t: r.t,
            p: r.p,
            degenerate: r.degenerate,
            significant: r.significant,
        }));
    }
    Ok(rows)
}

/// Outputs of the trend stage, as CSV-ready string records.
pub struct TrendTables {
    pub roi_header: Vec<String>,
    pub roi_rows: Vec<Vec<String>>,
    pub sub_roi_rows: Vec<Vec<String>>,
    pub voxel_rows: Vec<Vec<String>>,
    pub delta_rows: Vec<Vec<String>>,
}

impl TrendTables {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let h = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        write_records(&dir.join(TREND_ROI_CSV), &self.roi_header, &self.roi_rows)?;
        write_records(&dir.join(TREND_SUB_ROI_CSV), &h(&["task", "roi", "parcel", "r"]), &self.sub_roi_rows)?;
        write_records(&dir.join(VOXEL_TREND_CSV), &h(&["task", "voxel", "parcel", "r"]), &self.voxel_rows)?;
        write_records(
            &dir.join(LAYER_DELTAS_CSV),
            &h(&["task", "layer", "delta_decode", "delta_align"]),
            &self.delta_rows,
        )?;
        Ok(())
    }
}

/// Layer-trend correlations for every removed task that is also probed:
/// whole brain, per ROI, per sub-ROI parcel and per voxel.
pub fn trend_tables(
    info: &DatasetInfo,
    atlas: &AtlasMap,
    probes: &[ProbeRow],
    enc: &[EncodeRow],
) -> Result<TrendTables> {
    let accuracy = |layer: u32, task: &str, condition: &str| -> Result<f64> {
        probes
            .iter()
            .find(|r| r.layer == layer && r.task == task && r.condition == condition)
            .map(|r| r.accuracy)
            .ok_or_else(|| PipelineError::validation(format!("no probe result for {task} {condition} layer {layer}")))
    };
    // r[(condition, layer)][subject][voxel]
    let mut r: HashMap<(&str, u32), BTreeMap<&str, Vec<Option<f64>>>> = HashMap::new();
    for row in enc {
        if row.voxel >= info.voxels {
            return Err(PipelineError::validation(format!("voxel {} outside {}", row.voxel, info.voxels)));
        }
        r.entry((row.condition.as_str(), row.layer))
            .or_default()
            .entry(row.subject.as_str())
            .or_insert_with(|| vec![None; info.voxels])[row.voxel] = row.r;
    }
    // subject-mean voxel deltas, undefined where no subject has both values
    let voxel_delta = |layer: u32, condition: &str| -> Result<Vec<Option<f64>>> {
        let missing = || PipelineError::validation(format!("no encoding results for {condition} layer {layer}"));
        let before = r.get(&("before", layer)).ok_or_else(missing)?;
        let after = r.get(&(condition, layer)).ok_or_else(missing)?;
        Ok((0..info.voxels)
            .map(|v| {
                let (sum, n) = before.iter().fold((0.0, 0usize), |(s, n), (subj, rb)| {
                    match (rb[v], after.get(subj).and_then(|ra| ra[v])) {
                        (Some(b), Some(a)) => (s + b - a, n + 1),
                        _ => (s, n),
                    }
                });
                (n > 0).then(|| sum / n as f64)
            })
            .collect())
    };

    let rois: Vec<String> = atlas.roi_names().map(String::from).collect();
    let mut roi_header = vec!["task".to_string()];
    roi_header.extend(rois.iter().cloned());
    roi_header.push("whole_brain".to_string());
    let mut tables = TrendTables {
        roi_header,
        roi_rows: Vec::new(),
        sub_roi_rows: Vec::new(),
        voxel_rows: Vec::new(),
        delta_rows: Vec::new(),
    };

    for task in info.removal_tasks.iter().filter(|t| info.tasks.contains(t)) {
        let condition = Condition::After(task.clone()).to_string();
        let mut decode = Vec::with_capacity(info.layers.len());
        let mut per_layer = Vec::with_capacity(info.layers.len());
        for &layer in &info.layers {
            decode.push(accuracy(layer, task, "before")? - accuracy(layer, task, "after")?);
            per_layer.push(voxel_delta(layer, &condition)?);
        }
        let trend_of = |series: Vec<Option<f64>>| -> Result<Option<f64>> {
            match series.into_iter().collect::<Option<Vec<f64>>>() {
                Some(delta_align) => Ok(layer_trend_correlation(&TrendInput {
                    delta_decode: decode.clone(),
                    delta_align,
                })?),
                None => Ok(None),
            }
        };
        let mut row = vec![task.clone()];
        for roi in &rois {
            let series = per_layer.iter().map(|d| roi_aggregate(d, atlas, roi).ok()).collect();
            row.push(fmt_opt(trend_of(series)?));
        }
        row.push(fmt_opt(whole_brain_trend(&decode, &per_layer)?));
        tables.roi_rows.push(row);

        for (roi, parcels) in DEFAULT_SUB_ROIS {
            for parcel in parcels {
                let series = per_layer.iter().map(|d| parcel_aggregate(d, atlas, parcel).ok()).collect();
                tables.sub_roi_rows.push(vec![
                    task.clone(),
                    roi.to_string(),
                    parcel.to_string(),
                    fmt_opt(trend_of(series)?),
                ]);
            }
        }

        for (v, value) in voxel_trend_map(&decode, &per_layer)?.into_iter().enumerate() {
            tables.voxel_rows.push(vec![
                task.clone(),
                v.to_string(),
                atlas.parcel_of(v).to_string(),
                fmt_opt(value),
            ]);
        }

        let whole: Vec<Option<f64>> = per_layer.iter().map(|d| mean_of(d)).collect();
        for ((layer, d), a) in info.layers.iter().zip(&decode).zip(whole) {
            tables
                .delta_rows
                .push(vec![task.clone(), layer.to_string(), d.to_string(), fmt_opt(a)]);
        }
    }
    Ok(tables)
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let (s, n) = values.iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Run the given stages for a configuration.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunSummary> {
    Pipeline::new(cfg).run(stages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_is_topological() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for up in s.upstream() {
                assert!(Stage::ALL.iter().position(|x| x == up).unwrap() < i);
            }
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("report".parse::<Stage>().is_err());
    }

    #[test]
    fn condition_files_are_distinct() {
        let info = DatasetInfo {
            layers: vec![1],
            words: 1,
            dims: 1,
            tasks: vec!["A".into(), "B".into()],
            removal_tasks: vec!["A".into(), "B".into()],
            subjects: vec![],
            trs: 1,
            voxels: 1,
        };
        let mut names: Vec<String> = info.all_conditions().iter().map(condition_file).collect();
        assert_eq!(names, ["before", "after-A", "after-B", "after_all", "random_baseline"]);
        names.dedup();
        assert_eq!(names.len(), 5);
    }

    fn summary(subject: &str, layer: u32, condition: &str, mean_r: f64) -> EncodeSummary {
        EncodeSummary {
            subject: subject.into(),
            layer,
            condition: condition.into(),
            mean_r,
            fold_mean_r: vec![],
            chosen_lambdas: vec![],
            undefined_voxels: 0,
        }
    }

    #[test]
    fn control_family_is_corrected_separately() {
        let mut s = Vec::new();
        for (i, subj) in ["a", "b", "c", "d"].iter().enumerate() {
            let base = 0.3 + 0.01 * i as f64;
            s.push(summary(subj, 1, "before", base));
            s.push(summary(subj, 1, "after:X", base - 0.1 - 0.001 * (i * i) as f64));
            s.push(summary(subj, 1, "random_baseline", base + if i % 2 == 0 { 1e-3 } else { -2e-3 }));
        }
        let rows = significance_rows(&s, 0.05).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].condition.as_str(), rows[0].family.as_str()), ("after:X", "property"));
        assert!(rows[0].significant);
        assert_eq!(rows[1].family, "control");
        assert!(!rows[1].significant);
    }
}
