#![allow(dead_code)]

use std::path::{Path, PathBuf};

use permtdp::io::matrix::write_matrix;
use permtdp::io::nifti::{write_nifti, Datatype, Endian};
use permtdp::{Analysis, AnalysisConfig, FamilySpec, PermutationScheme, SubjectContrasts, VolumeGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIMS: [usize; 3] = [8, 8, 4];
pub const SUBJECTS: usize = 14;

/// Mask: everything except the x = 0 face.
pub fn geometry() -> VolumeGeometry {
    let mask = (0..DIMS.iter().product::<usize>()).map(|k| k % DIMS[0] != 0).collect();
    VolumeGeometry::new(DIMS, mask).unwrap()
}

/// Value of subject `s` at grid position `(x, y, z)`: a strong blob in one
/// corner, a weaker core inside it, noise elsewhere.
pub fn volume_data(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(SUBJECTS * DIMS.iter().product::<usize>());
    for _ in 0..SUBJECTS {
        for z in 0..DIMS[2] {
            for y in 0..DIMS[1] {
                for x in 0..DIMS[0] {
                    let blob = if (1..5).contains(&x) && y < 4 && z < 3 {
                        1.5
                    } else {
                        0.0
                    };
                    let core = if (1..3).contains(&x) && y < 2 && z < 2 {
                        1.5
                    } else {
                        0.0
                    };
                    out.push(blob + core + rng.random_range(-1.0..1.0));
                }
            }
        }
    }
    out
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry();
        let grid = volume_data(3);
        let mut dims4 = DIMS.to_vec();
        dims4.push(SUBJECTS);
        write_nifti(
            dir.path().join("copes.nii"),
            &dims4,
            &grid,
            Datatype::F32,
            Endian::Little,
        )
        .unwrap();
        let mask: Vec<f64> = g.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        write_nifti(dir.path().join("mask.nii"), &DIMS, &mask, Datatype::U8, Endian::Little).unwrap();
        // The same data as a subjects x in-mask-voxels matrix, after the
        // float32 round trip the NIfTI file imposes.
        let n = g.grid_len();
        let rows: Vec<Vec<f64>> = (0..SUBJECTS)
            .map(|s| (0..g.m()).map(|i| grid[s * n + g.linear_of(i)] as f32 as f64).collect())
            .collect();
        write_matrix(
            dir.path().join("copes.csv"),
            &SubjectContrasts::from_rows(&rows).unwrap(),
        )
        .unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    /// The analysis the commands should reproduce.
    pub fn analysis(&self, w: usize, seed: u64, alpha: f64) -> Analysis {
        let c = permtdp::io::read_contrasts(self.path("copes.nii"), Some(&geometry())).unwrap();
        let config = AnalysisConfig {
            scheme: PermutationScheme::sign_flip(w, seed),
            alternative: Default::default(),
            family: FamilySpec::simes(),
            alpha,
        };
        Analysis::run(&c, config).unwrap()
    }
}

pub fn str_path(p: &Path) -> &str {
    p.to_str().unwrap()
}
