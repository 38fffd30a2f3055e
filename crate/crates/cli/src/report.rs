//! Report tables assembled from finished stage outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::pipeline::{
    fmt_opt, read_csv, ProbeRow, SignificanceCsvRow, PROBE_CSV, SIGNIFICANCE_CSV, TREND_ROI_CSV,
    TREND_SUB_ROI_CSV, VOXEL_TREND_CSV,
};

pub const REPORT_DIR: &str = "report";
pub const PROBING_TABLE: &str = "probing_table.csv";
pub const ALIGNMENT_BY_LAYER: &str = "alignment_by_layer.csv";

#[derive(Debug, Serialize)]
struct AlignmentRow<'a> {
    layer: u32,
    condition: &'a str,
    family: &'a str,
    mean_before: f64,
    mean_after: f64,
    t: f64,
    p: f64,
    significant: bool,
}

fn copy_from(stage: &'static str, src: &Path, dst: &Path) -> Result<()> {
    if !src.is_file() {
        return Err(PipelineError::MissingStage(stage));
    }
    fs::copy(src, dst)?;
    Ok(())
}

/// Write the report tables under `<output_dir>/report` and return their paths.
pub fn emit_report(output_dir: &Path) -> Result<Vec<PathBuf>> {
    let out = output_dir.join(REPORT_DIR);
    fs::create_dir_all(&out)?;

    // before/after accuracy per layer and task
    let probes: Vec<ProbeRow> = read_csv(&output_dir.join("probe").join(PROBE_CSV), "probe")?;
    let mut w = csv::Writer::from_path(out.join(PROBING_TABLE))?;
    w.write_record(["layer", "task", "chance", "before", "after"])?;
    for b in probes.iter().filter(|r| r.condition == "before") {
        let after = probes
            .iter()
            .find(|r| r.layer == b.layer && r.task == b.task && r.condition == "after")
            .map(|r| r.accuracy);
        w.write_record([
            b.layer.to_string(),
            b.task.clone(),
            b.chance.to_string(),
            b.accuracy.to_string(),
            fmt_opt(after),
        ])?;
    }
    w.flush()?;

    let sig: Vec<SignificanceCsvRow> = read_csv(&output_dir.join("stats").join(SIGNIFICANCE_CSV), "stats")?;
    let mut w = csv::Writer::from_path(out.join(ALIGNMENT_BY_LAYER))?;
    for r in &sig {
        w.serialize(AlignmentRow {
            layer: r.layer,
            condition: &r.condition,
            family: &r.family,
            mean_before: r.mean_before,
            mean_after: r.mean_after,
            t: r.t,
            p: r.p,
            significant: r.significant,
        })?;
    }
    w.flush()?;

    let trend = output_dir.join("trend");
    for f in [TREND_ROI_CSV, TREND_SUB_ROI_CSV, VOXEL_TREND_CSV] {
        copy_from("trend", &trend.join(f), &out.join(f))?;
    }
    Ok([PROBING_TABLE, ALIGNMENT_BY_LAYER, TREND_ROI_CSV, TREND_SUB_ROI_CSV, VOXEL_TREND_CSV]
        .iter()
        .map(|f| out.join(f))
        .collect())
}
