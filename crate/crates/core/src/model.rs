//! Shared domain types: the voxel grid, subject contrast matrices, voxel
//! subsets and the TDP result record.
//!
//! Voxels are addressed by a compact index `0..m` that enumerates in-mask
//! voxels in scan order (x fastest, then y, then z). Every matrix in the
//! crate is dense over this compact index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A voxel coordinate on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Coord { x, y, z }
    }
}

impl From<[usize; 3]> for Coord {
    fn from(c: [usize; 3]) -> Self {
        Coord::new(c[0], c[1], c[2])
    }
}

const OUTSIDE: u32 = u32::MAX;

/// Grid dimensions plus the brain mask, with maps between linear grid
/// positions and compact voxel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeGeometry {
    dims: [usize; 3],
    mask: Vec<bool>,
    index_of: Vec<u32>,
    coord_of: Vec<usize>,
}

impl VolumeGeometry {
    /// Builds the index maps for `mask`, laid out with x varying fastest.
    pub fn new(dims: [usize; 3], mask: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        let len = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("grid too large"))?;
        if mask.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries but dims {:?} need {}",
                mask.len(),
                dims,
                len
            )));
        }
        if len >= OUTSIDE as usize {
            return Err(Error::invalid("grid too large"));
        }
        let mut index_of = vec![OUTSIDE; len];
        let mut coord_of = Vec::new();
        for (linear, &inside) in mask.iter().enumerate() {
            if inside {
                index_of[linear] = coord_of.len() as u32;
                coord_of.push(linear);
            }
        }
        if coord_of.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(VolumeGeometry {
            dims,
            mask,
            index_of,
            coord_of,
        })
    }

    /// A geometry whose mask covers the whole grid.
    pub fn full(dims: [usize; 3]) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![true; len])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of in-mask voxels.
    pub fn m(&self) -> usize {
        self.coord_of.len()
    }

    pub fn grid_len(&self) -> usize {
        self.mask.len()
    }

    pub fn linear(&self, c: Coord) -> Option<usize> {
        let [nx, ny, nz] = self.dims;
        (c.x < nx && c.y < ny && c.z < nz).then(|| c.x + nx * (c.y + ny * c.z))
    }

    pub fn coord(&self, linear: usize) -> Coord {
        let [nx, ny, _] = self.dims;
        Coord::new(linear % nx, (linear / nx) % ny, linear / (nx * ny))
    }

    /// Compact index of an in-mask linear position.
    pub fn index_of_linear(&self, linear: usize) -> Option<usize> {
        match self.index_of.get(linear) {
            Some(&i) if i != OUTSIDE => Some(i as usize),
            _ => None,
        }
    }

    pub fn index_of(&self, c: Coord) -> Option<usize> {
        self.linear(c).and_then(|l| self.index_of_linear(l))
    }

    pub fn linear_of(&self, index: usize) -> usize {
        self.coord_of[index]
    }

    pub fn coord_of(&self, index: usize) -> Coord {
        self.coord(self.coord_of[index])
    }

    /// Subset of the in-mask voxels at `coords`, sorted and deduplicated.
    pub fn subset_from_coords<I>(&self, coords: I) -> Result<VoxelSubset>
    where
        I: IntoIterator<Item = Coord>,
    {
        let indices = coords
            .into_iter()
            .map(|c| self.index_of(c).ok_or(Error::OutOfMask { x: c.x, y: c.y, z: c.z }))
            .collect::<Result<Vec<_>>>()?;
        VoxelSubset::new(indices, self.m())
    }

    /// Every in-mask voxel.
    pub fn full_subset(&self) -> VoxelSubset {
        VoxelSubset {
            indices: (0..self.m()).collect(),
        }
    }

    /// Scatters a compact per-voxel vector onto the grid, filling voxels
    /// outside the mask with `background`.
    pub fn scatter<T: Copy>(&self, values: &[T], background: T) -> Result<Vec<T>> {
        if values.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} in-mask voxels",
                values.len(),
                self.m()
            )));
        }
        let mut grid = vec![background; self.grid_len()];
        for (&linear, &v) in self.coord_of.iter().zip(values) {
            grid[linear] = v;
        }
        Ok(grid)
    }
}

/// Per-subject contrast maps, one row per subject and one column per voxel.
#[derive(Debug, Clone)]
pub struct SubjectContrasts {
    data: Vec<f64>,
    subjects: usize,
    voxels: usize,
    geometry: Option<VolumeGeometry>,
    subject_ids: Vec<String>,
}

impl SubjectContrasts {
    /// `data` is row-major `subjects x voxels`.
    pub fn new(data: Vec<f64>, subjects: usize, voxels: usize) -> Result<Self> {
        if subjects < 2 {
            return Err(Error::invalid(format!("need at least 2 subjects, got {subjects}")));
        }
        if voxels == 0 {
            return Err(Error::invalid("need at least one voxel"));
        }
        if data.len() != subjects * voxels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {subjects} x {voxels} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at subject {}, voxel {}",
                pos / voxels,
                pos % voxels
            )));
        }
        let subject_ids = (1..=subjects).map(|j| format!("s{j}")).collect();
        Ok(SubjectContrasts {
            data,
            subjects,
            voxels,
            geometry: None,
            subject_ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let voxels = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != voxels) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} values, expected {voxels}",
                rows[bad].len()
            )));
        }
        Self::new(rows.concat(), rows.len(), voxels)
    }

    pub fn with_geometry(mut self, geometry: VolumeGeometry) -> Result<Self> {
        if geometry.m() != self.voxels {
            return Err(Error::DimensionMismatch(format!(
                "geometry has {} in-mask voxels, data has {}",
                geometry.m(),
                self.voxels
            )));
        }
        self.geometry = Some(geometry);
        Ok(self)
    }

    pub fn with_subject_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.subjects {
            return Err(Error::DimensionMismatch(format!(
                "{} subject ids for {} subjects",
                ids.len(),
                self.subjects
            )));
        }
        self.subject_ids = ids;
        Ok(self)
    }

    /// Number of subjects (J).
    pub fn subjects(&self) -> usize {
        self.subjects
    }

    /// Number of voxels (m).
    pub fn voxels(&self) -> usize {
        self.voxels
    }

    pub fn row(&self, subject: usize) -> &[f64] {
        &self.data[subject * self.voxels..(subject + 1) * self.voxels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn geometry(&self) -> Option<&VolumeGeometry> {
        self.geometry.as_ref()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Keeps only the listed subjects, in the given order.
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(subjects.len() * self.voxels);
        let mut ids = Vec::with_capacity(subjects.len());
        for &s in subjects {
            if s >= self.subjects {
                return Err(Error::invalid(format!("subject {s} out of range")));
            }
            data.extend_from_slice(self.row(s));
            ids.push(self.subject_ids[s].clone());
        }
        let mut out = Self::new(data, subjects.len(), self.voxels)?.with_subject_ids(ids)?;
        out.geometry = self.geometry.clone();
        Ok(out)
    }

    /// Voxel-major copy: `voxels x subjects`, each voxel's values contiguous.
    pub(crate) fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for s in 0..self.subjects {
            for (v, &x) in self.row(s).iter().enumerate() {
                t[v * self.subjects + s] = x;
            }
        }
        t
    }
}

/// A nonempty-or-empty set of compact voxel indices, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoxelSubset {
    indices: Vec<usize>,
}

impl VoxelSubset {
    /// Sorts and deduplicates `indices`; every index must be `< m`.
    pub fn new(mut indices: Vec<usize>, m: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!("voxel index {bad} out of range for m = {m}")));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(VoxelSubset { indices })
    }

    /// Wraps indices already known to be strictly increasing.
    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        VoxelSubset { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn is_subset_of(&self, other: &VoxelSubset) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }
}

/// Lower confidence bound on the number of active voxels in a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdpResult {
    /// The bound on the number of true discoveries.
    pub lower_bound: usize,
    /// Subset size.
    pub size: usize,
    /// The `u` attaining the maximum (smallest such `u`).
    pub argmax_u: usize,
}

impl TdpResult {
    /// Lower bound on the true discovery proportion, `lower_bound / size`.
    pub fn tdp(&self) -> f64 {
        self.lower_bound as f64 / self.size as f64
    }
}
