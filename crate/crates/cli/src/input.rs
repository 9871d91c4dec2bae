//! Loading analysis inputs from files; shared by the commands and the service.

use std::path::Path;

use permtdp::io::{read_contrasts, read_mask, read_matrix};
use permtdp::{PermutationScheme, SubjectContrasts};

use crate::error::{CliError, CliResult};

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}

/// Reads subject contrasts from a delimited matrix (subjects in rows) or a
/// 4-D NIfTI volume (subjects along the fourth axis). A mask restricts NIfTI
/// data to its nonzero voxels and attaches geometry to matrix data.
pub fn load_contrasts(data: &Path, mask: Option<&Path>) -> CliResult<SubjectContrasts> {
    let geometry = mask.map(read_mask).transpose()?;
    if is_nifti(data) {
        return Ok(read_contrasts(data, geometry.as_ref())?);
    }
    let contrasts = read_matrix(data)?;
    match geometry {
        Some(g) => Ok(contrasts.with_geometry(g)?),
        None => Ok(contrasts),
    }
}

/// Parses group labels (1 or 2, one per subject) separated by commas or
/// whitespace.
pub fn parse_labels(text: &str) -> CliResult<Vec<u8>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "1" => Ok(1),
            "2" => Ok(2),
            other => Err(CliError::usage(format!("group label '{other}' is not 1 or 2"))),
        })
        .collect()
}

pub fn read_labels(path: &Path) -> CliResult<Vec<u8>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    parse_labels(&text)
}

/// Sign flips without labels, label shuffles with them.
pub fn scheme(labels: Option<Vec<u8>>, w: usize, seed: u64) -> PermutationScheme {
    match labels {
        Some(l) => PermutationScheme::group_label(l, w, seed),
        None => PermutationScheme::sign_flip(w, seed),
    }
}
