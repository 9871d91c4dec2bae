//! File formats: delimited matrices, NIfTI-1 volumes, subset files and
//! JSON outputs.

pub mod matrix;
pub mod nifti;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterReport;
use crate::error::{Error, Result};
use crate::model::{Coord, VolumeGeometry, VoxelSubset};

pub use matrix::{read_matrix, read_table, write_matrix, write_table};
pub use nifti::{read_contrasts, read_mask, read_nifti, read_volume_in_mask, write_volume_f32};

/// A subset file: either a bare JSON list of voxel indices, or an object
/// with `indices` or `coords` (`[[x, y, z], ...]` or `[{x, y, z}, ...]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubsetFile {
    Indices(Vec<usize>),
    Object {
        #[serde(default)]
        indices: Vec<usize>,
        #[serde(default)]
        coords: Vec<CoordEntry>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoordEntry {
    Array([usize; 3]),
    Object(Coord),
}

impl From<CoordEntry> for Coord {
    fn from(c: CoordEntry) -> Coord {
        match c {
            CoordEntry::Array(a) => a.into(),
            CoordEntry::Object(c) => c,
        }
    }
}

impl SubsetFile {
    /// Resolves to a subset over `m` voxels; coordinates need `geometry`.
    pub fn resolve(&self, m: usize, geometry: Option<&VolumeGeometry>) -> Result<VoxelSubset> {
        let (indices, coords): (Vec<usize>, &[CoordEntry]) = match self {
            SubsetFile::Indices(i) => (i.clone(), &[]),
            SubsetFile::Object { indices, coords } => (indices.clone(), coords),
        };
        let mut all = indices;
        if !coords.is_empty() {
            let g = geometry.ok_or_else(|| Error::invalid("subset lists coordinates but no geometry was given"))?;
            let s = g.subset_from_coords(coords.iter().map(|&c| Coord::from(c)))?;
            all.extend(s.iter());
        }
        if all.is_empty() {
            return Err(Error::EmptySubset);
        }
        VoxelSubset::new(all, m)
    }
}

pub fn read_subset(path: impl AsRef<Path>, m: usize, geometry: Option<&VolumeGeometry>) -> Result<VoxelSubset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SubsetFile = serde_json::from_str(&text)?;
    file.resolve(m, geometry)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Nifti,
    Csv,
}

impl std::str::FromStr for MapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti" | "nii" => Ok(MapFormat::Nifti),
            "csv" => Ok(MapFormat::Csv),
            _ => Err(Error::invalid(format!("unknown map format '{s}'"))),
        }
    }
}

/// Writes the per-voxel TDP bound of `report`: a float32 NIfTI image on the
/// geometry's grid, or CSV rows `x,y,z,tdp` over in-mask voxels.
pub fn write_tdp_map(
    report: &ClusterReport,
    geometry: &VolumeGeometry,
    path: impl AsRef<Path>,
    format: MapFormat,
) -> Result<()> {
    let m = geometry.m();
    if let Some(bad) = report
        .clusters
        .iter()
        .flat_map(|c| c.subset.indices().last())
        .find(|&&i| i >= m)
    {
        return Err(Error::DimensionMismatch(format!(
            "report voxel {bad} lies outside a geometry with m = {m}"
        )));
    }
    let values = report.tdp_map(m);
    match format {
        MapFormat::Nifti => write_volume_f32(path, geometry, &values),
        MapFormat::Csv => {
            let path = path.as_ref();
            let io = |e| Error::io(path, e);
            let mut text = String::from("x,y,z,tdp\n");
            for (i, v) in values.iter().enumerate() {
                let c = geometry.coord_of(i);
                text.push_str(&format!("{},{},{},{}\n", c.x, c.y, c.z, v));
            }
            std::fs::write(path, text).map_err(io)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_file_shapes() {
        let g = VolumeGeometry::full([2, 2, 1]).unwrap();
        let a: SubsetFile = serde_json::from_str("[3, 1, 1]").unwrap();
        assert_eq!(a.resolve(4, None).unwrap().indices(), &[1, 3]);
        let b: SubsetFile = serde_json::from_str(r#"{"coords": [[1, 1, 0], {"x": 0, "y": 0, "z": 0}]}"#).unwrap();
        assert_eq!(b.resolve(4, Some(&g)).unwrap().indices(), &[0, 3]);
        assert!(b.resolve(4, None).is_err());
        let empty: SubsetFile = serde_json::from_str("[]").unwrap();
        assert!(matches!(empty.resolve(4, None), Err(Error::EmptySubset)));
        let out: SubsetFile = serde_json::from_str(r#"{"coords": [[5, 0, 0]]}"#).unwrap();
        assert!(out.resolve(4, Some(&g)).is_err());
    }
}
