//! Writes a synthetic dataset in the interchange formats, with a pipeline
//! config pointing at it.

use std::fs;
use std::path::{Path, PathBuf};

use lingscrub_core::data::{atlas_to_csv, save_labels, save_matrix, save_timeline, Matrix};
use lingscrub_core::synth::{generate_dataset, SynthConfig};
use serde_json::json;

use crate::config::{Paths, PipelineConfig};
use crate::error::Result;
use crate::manifest::{is_current, write_manifest, InputHasher};

pub const DATASET_CONFIG: &str = "pipeline.json";

/// Generate into `cfg.output_dir` and return the path of the written
/// pipeline config. The top-level seed drives generation. Skips work when
/// an identical dataset is already present.
pub fn write_synth_dataset(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    let synth = SynthConfig {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    synth.validate()?;
    // the written pipeline config inherits every other section, so all of it
    // is part of the identity
    let params = json!({ "synth": synth, "pipeline": cfg });
    let hash = InputHasher::new("synth", &params).finish();
    let config_path = dir.join(DATASET_CONFIG);
    if is_current(dir, &hash, &params) {
        return Ok(config_path);
    }
    fs::create_dir_all(dir)?;
    let ds = generate_dataset(&synth)?;

    let mut outputs = Vec::new();
    let mut paths = Paths::default();
    for f in &ds.features {
        let name = format!("layer_{:02}.fmat", f.layer_index());
        save_matrix(&Matrix::Feature(f.clone()), &dir.join(&name))?;
        paths.features.push(name.clone().into());
        outputs.push(name);
    }
    for r in &ds.responses {
        let name = format!("{}.fmat", r.subject_id());
        save_matrix(&Matrix::Response(r.clone()), &dir.join(&name))?;
        paths.responses.push(name.clone().into());
        outputs.push(name);
    }
    save_labels(&ds.labels, &dir.join("labels.tsv"))?;
    save_timeline(&ds.timeline, &dir.join("timeline.tsv"))?;
    fs::write(dir.join("atlas.csv"), atlas_to_csv(&ds.atlas))?;
    paths.labels = "labels.tsv".into();
    paths.timeline = "timeline.tsv".into();
    paths.atlas = "atlas.csv".into();
    outputs.extend(["labels.tsv", "timeline.tsv", "atlas.csv"].map(String::from));

    let pipeline = PipelineConfig {
        paths,
        output_dir: "run".into(),
        synth,
        ..cfg.clone()
    };
    fs::write(&config_path, serde_json::to_string_pretty(&pipeline)? + "\n")?;
    outputs.push(DATASET_CONFIG.into());
    write_manifest(dir, hash, params, outputs)?;
    Ok(config_path)
}

/// Output directory of a pipeline run on a dataset written by
/// [`write_synth_dataset`].
pub fn synth_run_dir(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("run")
}
