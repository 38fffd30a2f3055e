//! Voxel-to-parcel maps and ROI groupings over the Glasser parcellation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Language ROIs and their parcels, in reporting order.
pub const DEFAULT_ROIS: [(&str, &[&str]); 8] = [
    ("AG", &["PFm", "PGs", "PGi", "TPOJ2", "TPOJ3"]),
    ("ATL", &["STSda", "STSva", "STGa", "TE1a", "TE2a", "TGv", "TGd"]),
    ("PTL", &["A4", "A5", "STSdp", "STSvp", "PSL", "STV", "TPOJ1"]),
    ("IFG", &["44", "45", "IFJa", "IFSp"]),
    ("MFG", &["55b"]),
    ("IFGOrb", &["a47r", "p47r", "a9-46v"]),
    ("PCC", &["31pv", "31pd", "PCV", "7m", "23", "RSC"]),
    ("dmPFC", &["9m", "10d", "d32"]),
];

/// Sub-regions used for the finer-grained trend analysis, grouped by parent ROI.
pub const DEFAULT_SUB_ROIS: [(&str, &[&str]); 4] = [
    ("AG", &["PFm", "PGi", "PGs"]),
    ("ATL", &["STGa", "STSda"]),
    ("PTL", &["STSdp", "A5", "TPOJ1", "PSL", "STV", "SFL"]),
    ("IFG", &["44", "45", "IFJa", "IFSp"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtlasMap {
    voxel_to_parcel: Vec<String>,
    roi_groups: Vec<(String, Vec<String>)>,
}

fn known_parcels() -> BTreeSet<&'static str> {
    DEFAULT_ROIS
        .iter()
        .chain(DEFAULT_SUB_ROIS.iter())
        .flat_map(|(_, ps)| ps.iter().copied())
        .collect()
}

pub fn default_roi_groups() -> Vec<(String, Vec<String>)> {
    DEFAULT_ROIS
        .iter()
        .map(|(roi, ps)| (roi.to_string(), ps.iter().map(|p| p.to_string()).collect()))
        .collect()
}

impl AtlasMap {
    /// `roi_groups` of `None` (or empty) selects the default language ROIs.
    /// A parcel is known if some voxel carries it or it belongs to a default group.
    pub fn new(
        voxel_to_parcel: Vec<String>,
        roi_groups: Option<Vec<(String, Vec<String>)>>,
    ) -> Result<Self> {
        let roi_groups = match roi_groups {
            Some(g) if !g.is_empty() => g,
            _ => default_roi_groups(),
        };
        let present: BTreeSet<&str> = voxel_to_parcel.iter().map(String::as_str).collect();
        let builtin = known_parcels();
        for (roi, parcels) in &roi_groups {
            if parcels.is_empty() {
                return Err(Error::invalid(format!("ROI {roi} has no parcels")));
            }
            for p in parcels {
                if !present.contains(p.as_str()) && !builtin.contains(p.as_str()) {
                    return Err(Error::UnknownParcel(p.clone()));
                }
            }
        }
        Ok(AtlasMap {
            voxel_to_parcel,
            roi_groups,
        })
    }

    pub fn voxels(&self) -> usize {
        self.voxel_to_parcel.len()
    }

    pub fn parcel_of(&self, voxel: usize) -> &str {
        &self.voxel_to_parcel[voxel]
    }

    pub fn roi_groups(&self) -> &[(String, Vec<String>)] {
        &self.roi_groups
    }

    pub fn roi_names(&self) -> impl Iterator<Item = &str> {
        self.roi_groups.iter().map(|(n, _)| n.as_str())
    }

    pub fn roi_parcels(&self, roi: &str) -> Result<&[String]> {
        self.roi_groups
            .iter()
            .find(|(n, _)| n == roi)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::UnknownRoi(roi.to_string()))
    }

    /// Voxel indices whose parcel belongs to `roi`, ascending.
    pub fn roi_voxels(&self, roi: &str) -> Result<Vec<usize>> {
        let parcels: BTreeSet<&str> = self.roi_parcels(roi)?.iter().map(String::as_str).collect();
        Ok(self
            .voxel_to_parcel
            .iter()
            .enumerate()
            .filter(|(_, p)| parcels.contains(p.as_str()))
            .map(|(v, _)| v)
            .collect())
    }

    pub fn parcel_voxels(&self, parcel: &str) -> Vec<usize> {
        self.voxel_to_parcel
            .iter()
            .enumerate()
            .filter(|(_, p)| *p == parcel)
            .map(|(v, _)| v)
            .collect()
    }
}

/// Parse `voxel_index,parcel_name` rows. A header line is allowed if its
/// first cell is not an integer.
pub fn parse_voxel_csv(text: &str) -> Result<Vec<String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((idx, parcel)) = line.split_once(',') else {
            return Err(Error::Parse {
                what: "atlas",
                line: i + 1,
                detail: "expected voxel_index,parcel_name".into(),
            });
        };
        let idx: usize = match idx.trim().parse() {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    what: "atlas",
                    line: i + 1,
                    detail: format!("bad voxel index {idx:?}"),
                })
            }
        };
        if map.insert(idx, parcel.trim().to_string()).is_some() {
            return Err(Error::Parse {
                what: "atlas",
                line: i + 1,
                detail: format!("duplicate voxel index {idx}"),
            });
        }
    }
    for (expected, v) in map.keys().enumerate() {
        if *v != expected {
            return Err(Error::Parse {
                what: "atlas",
                line: 0,
                detail: format!("voxel {expected} has no parcel"),
            });
        }
    }
    Ok(map.into_values().collect())
}

/// Parse a JSON object mapping ROI name to a parcel list.
pub fn parse_roi_json(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let groups: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "roi json",
            line: e.line(),
            detail: e.to_string(),
        })?;
    Ok(groups.into_iter().collect())
}

pub fn load_atlas(voxel_csv: &Path, roi_json: Option<&Path>) -> Result<AtlasMap> {
    let text = fs::read_to_string(voxel_csv).map_err(|e| Error::io(voxel_csv, e))?;
    let voxels = parse_voxel_csv(&text)?;
    let groups = match roi_json {
        Some(p) => parse_roi_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    AtlasMap::new(voxels, Some(groups))
}

pub fn atlas_to_csv(atlas: &AtlasMap) -> String {
    let mut out = String::from("voxel_index,parcel_name\n");
    for (v, p) in atlas.voxel_to_parcel.iter().enumerate() {
        out.push_str(&format!("{v},{p}\n"));
    }
    out
}
