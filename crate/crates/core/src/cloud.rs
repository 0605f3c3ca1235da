//! Point clouds and their plain-text file format.
//!
//! One point per line, whitespace separated: `x y z` or `x y z nx ny nz`.
//! Lines starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `|n| - 1` for a normal to count as unit length.
pub const UNIT_NORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        check_finite(&positions)?;
        Ok(Self {
            positions,
            normals: None,
        })
    }

    pub fn with_normals(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        check_finite(&positions)?;
        if normals.len() != positions.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} positions",
                normals.len(),
                positions.len()
            )));
        }
        if let Some((i, n)) = normals
            .iter()
            .enumerate()
            .find(|(_, n)| !((n.norm() - 1.0).abs() <= UNIT_NORMAL_TOL))
        {
            return Err(Error::invalid(format!(
                "normal {i} has length {} (expected unit)",
                n.norm()
            )));
        }
        Ok(Self {
            positions,
            normals: Some(normals),
        })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Same positions, normals dropped.
    pub fn without_normals(&self) -> Self {
        Self {
            positions: self.positions.clone(),
            normals: None,
        }
    }

    pub fn into_positions(self) -> Vec<Vec3> {
        self.positions
    }
}

fn check_finite(positions: &[Vec3]) -> Result<()> {
    match positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::Numeric(format!("point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

/// Axis-aligned bounding box as `(min, max)` corners.
pub fn bounding_box(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().skip(1).fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Length of the diagonal of the axis-aligned bounding box of `points`.
pub fn points_diagonal(points: &[Vec3]) -> Result<f64> {
    let (lo, hi) = bounding_box(points)
        .ok_or_else(|| Error::EmptyInput("bounding box of an empty point set".into()))?;
    Ok((hi - lo).norm())
}

pub fn bbox_diagonal(cloud: &PointCloud) -> Result<f64> {
    points_diagonal(cloud.positions())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_cloud(&text, path)
}

pub(crate) fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("invalid number {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(parse_err(
                lineno,
                format!("expected 3 or 6 columns, found {}", values.len()),
            ));
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {c} columns like the first record, found {}", values.len()),
                ))
            }
            _ => {}
        }
        positions.push(Vec3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vec3::new(values[3], values[4], values[5]));
        }
    }

    match columns {
        None => Err(Error::EmptyInput(format!("{} contains no points", path.display()))),
        Some(3) => PointCloud::new(positions),
        Some(_) => PointCloud::with_normals(positions, normals),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cloud(cloud)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.positions().iter().enumerate() {
        // 17 significant digits round-trip f64 exactly.
        let _ = write!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
        if let Some(normals) = cloud.normals() {
            let n = normals[i];
            let _ = write!(out, " {:.16e} {:.16e} {:.16e}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}
