//! Supra-threshold clusters on the voxel grid and their TDP bounds.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bound::{tdp_lower_bound, CriticalVector};
use crate::error::{Error, Result};
use crate::model::{Coord, TdpResult, VolumeGeometry, VoxelSubset};

/// Voxel neighbourhood: shared faces (6), faces or edges (18), or any
/// contact (26).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// Neighbour offsets that come earlier in scan order (x fastest).
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    let backward = dz < 0 || (dz == 0 && dy < 0) || (dz == 0 && dy == 0 && dx < 0);
                    if nonzero >= 1 && nonzero <= self.max_nonzero() && backward {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6, 18 or 26, got {v}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("connectivity must be 6, 18 or 26, got '{s}'")))?;
        Connectivity::try_from(v)
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

fn check_map(stat_map: &[f64], geometry: &VolumeGeometry) -> Result<()> {
    if stat_map.len() != geometry.m() {
        return Err(Error::DimensionMismatch(format!(
            "statistic map has {} values, geometry has {} in-mask voxels",
            stat_map.len(),
            geometry.m()
        )));
    }
    Ok(())
}

/// Connected components of `{i : stat_i > z}` (restricted to `within` when
/// given), largest first, ties broken by smallest voxel index.
fn components(
    stat_map: &[f64],
    geometry: &VolumeGeometry,
    z: f64,
    connectivity: Connectivity,
    within: Option<&VoxelSubset>,
) -> Result<Vec<VoxelSubset>> {
    check_map(stat_map, geometry)?;
    if z.is_nan() {
        return Err(Error::invalid("threshold is NaN"));
    }
    let m = geometry.m();
    let mut active = vec![false; m];
    match within {
        Some(s) => {
            for i in s.iter() {
                if i >= m {
                    return Err(Error::IndexOutOfRange { index: i, m });
                }
                active[i] = stat_map[i] > z;
            }
        }
        None => {
            for (a, &v) in active.iter_mut().zip(stat_map) {
                *a = v > z;
            }
        }
    }
    let [nx, ny, nz] = geometry.dims();
    let offsets = connectivity.backward_offsets();
    let mut uf = UnionFind::new(m);
    for i in (0..m).filter(|&i| active[i]) {
        let c = geometry.coord_of(i);
        for off in &offsets {
            let x = c.x as isize + off[0];
            let y = c.y as isize + off[1];
            let zc = c.z as isize + off[2];
            if x < 0 || y < 0 || zc < 0 || x >= nx as isize || y >= ny as isize || zc >= nz as isize {
                continue;
            }
            let neighbour = Coord::new(x as usize, y as usize, zc as usize);
            if let Some(j) = geometry.index_of(neighbour) {
                if active[j] {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in (0..m).filter(|&i| active[i]) {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(out.into_iter().map(VoxelSubset::from_sorted).collect())
}

/// Clusters of voxels with statistic strictly above `z`.
pub fn threshold_clusters(
    stat_map: &[f64],
    geometry: &VolumeGeometry,
    z: f64,
    connectivity: Connectivity,
) -> Result<Vec<VoxelSubset>> {
    components(stat_map, geometry, z, connectivity, None)
}

/// Clusters above `z_higher` formed inside `parent` only.
pub fn drill_down(
    parent: &VoxelSubset,
    stat_map: &[f64],
    geometry: &VolumeGeometry,
    z_higher: f64,
    connectivity: Connectivity,
) -> Result<Vec<VoxelSubset>> {
    if parent.is_empty() {
        return Err(Error::EmptySubset);
    }
    components(stat_map, geometry, z_higher, connectivity, Some(parent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// 1-based position in the report.
    pub id: usize,
    pub subset: VoxelSubset,
    pub tdp: TdpResult,
    pub peak_coord: Coord,
    pub peak_stat: f64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.subset.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub clusters: Vec<Cluster>,
}

/// Attaches bounds and peaks to each subset, keeping the given order.
pub fn build_report(
    subsets: Vec<VoxelSubset>,
    observed_p: &[f64],
    critical: &CriticalVector,
    stat_map: &[f64],
    geometry: &VolumeGeometry,
    threshold: f64,
    connectivity: Connectivity,
) -> Result<ClusterReport> {
    check_map(stat_map, geometry)?;
    if observed_p.len() != stat_map.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} p-values for {} statistics",
            observed_p.len(),
            stat_map.len()
        )));
    }
    let clusters = subsets
        .into_iter()
        .enumerate()
        .map(|(k, subset)| {
            let tdp = tdp_lower_bound(&subset, observed_p, critical)?;
            let (peak, peak_stat) =
                subset
                    .iter()
                    .map(|i| (i, stat_map[i].abs()))
                    .fold(
                        (usize::MAX, f64::NEG_INFINITY),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            Ok(Cluster {
                id: k + 1,
                peak_coord: geometry.coord_of(peak),
                peak_stat,
                subset,
                tdp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterReport {
        threshold,
        connectivity,
        clusters,
    })
}

impl ClusterReport {
    /// Per-voxel TDP bound: each voxel carries its cluster's bound, 0 elsewhere.
    pub fn tdp_map(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for c in &self.clusters {
            let t = c.tdp.tdp();
            for i in c.subset.iter() {
                out[i] = t;
            }
        }
        out
    }

    pub fn to_json(&self, geometry: &VolumeGeometry, include_voxels: bool) -> ReportJson {
        ReportJson {
            schema_version: crate::SCHEMA_VERSION,
            threshold: self.threshold,
            connectivity: self.connectivity,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterJson {
                    id: c.id,
                    size: c.size(),
                    tdp_lower_bound: c.tdp.lower_bound,
                    tdp: c.tdp.tdp(),
                    argmax_u: c.tdp.argmax_u,
                    peak: c.peak_coord,
                    peak_stat: c.peak_stat,
                    voxels: include_voxels.then(|| c.subset.iter().map(|i| geometry.coord_of(i)).collect()),
                })
                .collect(),
        }
    }
}

/// Serialized form of a [`ClusterReport`]. `tdp` equals
/// `tdp_lower_bound / size`; consumers wanting exact values should use the
/// two integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub schema_version: u32,
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub clusters: Vec<ClusterJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterJson {
    pub id: usize,
    pub size: usize,
    pub tdp_lower_bound: usize,
    pub tdp: f64,
    pub argmax_u: usize,
    pub peak: Coord,
    pub peak_stat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxels: Option<Vec<Coord>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use std::collections::VecDeque;

    fn grid(dims: [usize; 3]) -> VolumeGeometry {
        VolumeGeometry::full(dims).unwrap()
    }

    fn map_with(g: &VolumeGeometry, hot: &[[usize; 3]]) -> Vec<f64> {
        let mut v = vec![0.0; g.m()];
        for &c in hot {
            v[g.index_of(c.into()).unwrap()] = 5.0;
        }
        v
    }

    #[test]
    fn face_neighbours_join() {
        let g = grid([3, 3, 3]);
        let map = map_with(&g, &[[0, 0, 0], [1, 0, 0]]);
        let c = threshold_clusters(&map, &g, 3.2, Connectivity::Six).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 2);
    }

    #[test]
    fn diagonal_neighbours_depend_on_connectivity() {
        let g = grid([3, 3, 3]);
        let map = map_with(&g, &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(threshold_clusters(&map, &g, 3.2, Connectivity::Six).unwrap().len(), 2);
        assert_eq!(
            threshold_clusters(&map, &g, 3.2, Connectivity::Eighteen).unwrap().len(),
            1
        );
        let corner = map_with(&g, &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(
            threshold_clusters(&corner, &g, 3.2, Connectivity::Eighteen)
                .unwrap()
                .len(),
            2
        );
        assert_eq!(
            threshold_clusters(&corner, &g, 3.2, Connectivity::TwentySix)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn threshold_is_strict() {
        let g = grid([2, 1, 1]);
        let c = threshold_clusters(&[3.2, 3.3], &g, 3.2, Connectivity::TwentySix).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].indices(), &[1]);
        assert!(threshold_clusters(&[1.0, 1.0], &g, 3.2, Connectivity::Six)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ordering_by_size_then_index() {
        let g = grid([7, 1, 1]);
        let map = [5.0, 0.0, 5.0, 5.0, 0.0, 5.0, 0.0];
        let c = threshold_clusters(&map, &g, 1.0, Connectivity::Six).unwrap();
        let got: Vec<&[usize]> = c.iter().map(|s| s.indices()).collect();
        assert_eq!(got, vec![&[2usize, 3][..], &[0][..], &[5][..]]);
    }

    #[test]
    fn masked_voxels_break_clusters() {
        let g = VolumeGeometry::new([3, 1, 1], vec![true, false, true]).unwrap();
        let c = threshold_clusters(&[5.0, 5.0], &g, 1.0, Connectivity::TwentySix).unwrap();
        assert_eq!(c.len(), 2);
    }

    fn flood_fill(map: &[f64], dims: [usize; 3], z: f64, conn: usize) -> Vec<Vec<usize>> {
        let [nx, ny, nz] = dims;
        let mut seen = vec![false; map.len()];
        let mut out = Vec::new();
        for start in 0..map.len() {
            if seen[start] || map[start] <= z {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                let (x, y, zz) = (v % nx, (v / nx) % ny, v / (nx * ny));
                for w in 0..map.len() {
                    let (a, b, c) = (w % nx, (w / nx) % ny, w / (nx * ny));
                    let d = [a.abs_diff(x), b.abs_diff(y), c.abs_diff(zz)];
                    if d.iter().any(|&e| e > 1) || w == v {
                        continue;
                    }
                    let dist2 = d.iter().sum::<usize>();
                    let ok = match conn {
                        6 => dist2 == 1,
                        18 => dist2 <= 2,
                        _ => true,
                    };
                    if ok && !seen[w] && map[w] > z {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        let _ = nz;
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    #[test]
    fn matches_flood_fill_oracle() {
        let dims = [10, 10, 10];
        let g = grid(dims);
        let mut r = rng::seeded(31);
        for trial in 0..6 {
            let map: Vec<f64> = (0..1000).map(|_| r.random_range(-3.0..3.0)).collect();
            let z = [0.5, 1.0, 2.0][trial % 3];
            for (conn, c) in [
                (6, Connectivity::Six),
                (18, Connectivity::Eighteen),
                (26, Connectivity::TwentySix),
            ] {
                let ours: Vec<Vec<usize>> = threshold_clusters(&map, &g, z, c)
                    .unwrap()
                    .into_iter()
                    .map(|s| s.indices().to_vec())
                    .collect();
                assert_eq!(ours, flood_fill(&map, dims, z, conn), "conn {conn} z {z}");
            }
        }
    }

    #[test]
    fn partition_property() {
        let g = grid([6, 5, 4]);
        let mut r = rng::seeded(32);
        for _ in 0..20 {
            let map: Vec<f64> = (0..g.m()).map(|_| r.random_range(-2.0..4.0)).collect();
            let clusters = threshold_clusters(&map, &g, 1.0, Connectivity::Eighteen).unwrap();
            let mut all: Vec<usize> = clusters.iter().flat_map(|s| s.iter()).collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..g.m()).filter(|&i| map[i] > 1.0).collect();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn drill_down_nests() {
        let g = grid([8, 8, 8]);
        let mut r = rng::seeded(33);
        let map: Vec<f64> = (0..g.m()).map(|_| r.random_range(0.0..6.0)).collect();
        let parents = threshold_clusters(&map, &g, 2.0, Connectivity::TwentySix).unwrap();
        let parent = &parents[0];
        let kids = drill_down(parent, &map, &g, 4.0, Connectivity::TwentySix).unwrap();
        assert!(!kids.is_empty());
        for k in &kids {
            assert!(k.is_subset_of(parent));
        }
        let lo = parent.iter().map(|i| map[i]).fold(f64::INFINITY, f64::min);
        let same = drill_down(parent, &map, &g, lo - 1.0, Connectivity::TwentySix).unwrap();
        assert_eq!(same.len(), 1);
        assert_eq!(&same[0], parent);
        let hi = parent.iter().map(|i| map[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!(drill_down(parent, &map, &g, hi, Connectivity::TwentySix)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn report_basics() {
        let g = grid([4, 1, 1]);
        let map = [5.0, -6.0, 0.0, 4.0];
        let p = [0.001, 0.5, 0.9, 0.2];
        let l = CriticalVector::custom(vec![0.01, 0.02, 0.03, 0.04]).unwrap();
        let subsets = threshold_clusters(&map, &g, 3.0, Connectivity::Six).unwrap();
        let rep = build_report(subsets, &p, &l, &map, &g, 3.0, Connectivity::Six).unwrap();
        assert_eq!(rep.clusters.len(), 2);
        assert_eq!(rep.clusters[0].tdp.lower_bound, 1);
        // Singleton with p > l_1.
        assert_eq!(rep.clusters[1].tdp.lower_bound, 0);
        assert_eq!(rep.clusters[1].peak_coord, Coord::new(3, 0, 0));
        let json = serde_json::to_value(rep.to_json(&g, false)).unwrap();
        assert!(json["clusters"][0].get("voxels").is_none());
        assert_eq!(json["connectivity"], 6);
        let map_vals = rep.tdp_map(4);
        assert_eq!(map_vals, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn peak_uses_absolute_value_and_scan_order() {
        let g = grid([3, 1, 1]);
        let l = CriticalVector::custom(vec![0.1; 3]).unwrap();
        let s = VoxelSubset::new(vec![0, 1, 2], 3).unwrap();
        let rep = build_report(vec![s], &[0.5; 3], &l, &[4.0, -4.0, 2.0], &g, 1.0, Connectivity::Six).unwrap();
        assert_eq!(rep.clusters[0].peak_coord, Coord::new(0, 0, 0));
        assert_eq!(rep.clusters[0].peak_stat, 4.0);
    }

    #[test]
    fn empty_report_is_valid_json() {
        let g = grid([2, 2, 2]);
        let l = CriticalVector::custom(vec![0.1; 8]).unwrap();
        let rep = build_report(vec![], &[0.5; 8], &l, &[0.0; 8], &g, 3.2, Connectivity::default()).unwrap();
        let text = serde_json::to_string(&rep.to_json(&g, true)).unwrap();
        let back: ReportJson = serde_json::from_str(&text).unwrap();
        assert!(back.clusters.is_empty());
        assert_eq!(back.connectivity, Connectivity::TwentySix);
        assert_eq!(rep.tdp_map(8), vec![0.0; 8]);
    }

    #[test]
    fn connectivity_parsing() {
        assert_eq!("18".parse::<Connectivity>().unwrap(), Connectivity::Eighteen);
        assert!("7".parse::<Connectivity>().is_err());
        assert!(serde_json::from_str::<Connectivity>("8").is_err());
    }
}
