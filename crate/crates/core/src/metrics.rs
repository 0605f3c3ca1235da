//! Reconstruction error measures between clean, filtered and reference data.
//!
//! Per-point terms are computed in parallel and summed sequentially in point
//! order, so the results equal a straightforward serial evaluation.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::index::NeighborIndex;
use crate::mesh::{TriangleBvh, TriangleMesh};

pub const DEFAULT_MSE_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub mse: f64,
    pub p2f: Option<f64>,
    pub per_point_mse: Option<Vec<f64>>,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cd={:.9e} mse={:.9e}", self.cd, self.mse)?;
        if let Some(p2f) = self.p2f {
            write!(f, " p2f={p2f:.9e}")?;
        }
        Ok(())
    }
}

fn non_empty(cloud: &PointCloud, what: &str) -> Result<()> {
    if cloud.is_empty() {
        Err(Error::invalid(format!("{what} cloud is empty")))
    } else {
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean over clean points of the mean squared distance to their `m` nearest
/// filtered points, with the per-clean-point values.
pub fn mse_metric(clean: &PointCloud, filtered: &PointCloud, m: usize) -> Result<(f64, Vec<f64>)> {
    non_empty(clean, "clean")?;
    non_empty(filtered, "filtered")?;
    if m == 0 || m > filtered.len() {
        return Err(Error::invalid(format!(
            "neighbor count {m} outside 1..={}",
            filtered.len()
        )));
    }
    let index = NeighborIndex::from_cloud(filtered)?;
    let per_point = clean
        .positions()
        .par_iter()
        .map(|p| {
            let nn = index.k_nearest_with_dist2(p, m)?;
            Ok(nn.iter().map(|&(_, d2)| d2).sum::<f64>() / m as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((mean(&per_point), per_point))
}

fn mean_nearest_dist2(from: &[Vec3], to: &NeighborIndex) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|p| to.nearest(p).1).collect();
    mean(&d)
}

/// Symmetric Chamfer distance in squared-distance units.
pub fn chamfer(clean: &PointCloud, filtered: &PointCloud) -> Result<f64> {
    non_empty(clean, "clean")?;
    non_empty(filtered, "filtered")?;
    let clean_index = NeighborIndex::from_cloud(clean)?;
    let filtered_index = NeighborIndex::from_cloud(filtered)?;
    Ok(mean_nearest_dist2(clean.positions(), &filtered_index)
        + mean_nearest_dist2(filtered.positions(), &clean_index))
}

/// Mean distance from the filtered points to the mesh surface.
pub fn p2f(filtered: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    non_empty(filtered, "filtered")?;
    let bvh = TriangleBvh::build(mesh)?;
    let d: Vec<f64> = filtered.positions().par_iter().map(|p| bvh.distance(p)).collect();
    Ok(mean(&d))
}

/// All metrics; `p2f` only when a reference mesh is given.
pub fn evaluate(
    clean: &PointCloud,
    filtered: &PointCloud,
    mesh: Option<&TriangleMesh>,
    m: usize,
) -> Result<MetricReport> {
    let (mse, per_point) = mse_metric(clean, filtered, m)?;
    Ok(MetricReport {
        cd: chamfer(clean, filtered)?,
        mse,
        p2f: mesh.map(|mesh| p2f(filtered, mesh)).transpose()?,
        per_point_mse: Some(per_point),
    })
}

/// Writes `x y z error` lines, one per clean point.
pub fn save_per_point_errors(clean: &PointCloud, errors: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if errors.len() != clean.len() {
        return Err(Error::invalid(format!(
            "{} errors for {} points",
            errors.len(),
            clean.len()
        )));
    }
    let mut out = String::new();
    for (p, e) in clean.positions().iter().zip(errors) {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z, e);
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
