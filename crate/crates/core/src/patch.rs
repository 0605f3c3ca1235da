//! Patch extraction and canonicalization.
//!
//! A patch around a noisy query point is translated so the query sits at the
//! origin, scaled by `1 / r`, and rotated into its principal frame: the
//! smallest-variance axis goes to `z`, the middle one to `x`. The noisy patch
//! is then resampled to a fixed size (random subset or origin padding).

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::index::NeighborIndex;

/// Relative eigenvalue gap below which the principal frame is ambiguous.
pub const EIGEN_TIE_TOL: f64 = 1e-12;

pub const DEFAULT_PATCH_SIZE: usize = 500;
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct RawPatchPair {
    pub center: Vec3,
    pub noisy_points: Vec<Vec3>,
    pub clean_points: Vec<Vec3>,
    pub clean_normals: Vec<Vec3>,
    pub radius: f64,
}

/// A fixed-size noisy patch in its canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPatch {
    pub points: Vec<Vec3>,
    pub pad_count: usize,
    /// World-to-canonical rotation (after translation and scaling).
    pub rotation: Matrix3<f64>,
    pub radius: f64,
    pub center: Vec3,
    /// The principal frame was ambiguous and `rotation` fell back to identity.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPatchPair {
    pub noisy: CanonicalPatch,
    pub clean_points: Vec<Vec3>,
    pub clean_normals: Vec<Vec3>,
}

impl CanonicalPatch {
    pub fn patch_size(&self) -> usize {
        self.points.len()
    }

    /// World point to canonical frame.
    pub fn to_canonical(&self, p: &Vec3) -> Vec3 {
        self.rotation * ((p - self.center) / self.radius)
    }
}

/// Gathers the noisy and clean neighborhoods of `noisy[center_index]`.
pub fn extract_patch_pair(
    noisy: &PointCloud,
    clean: &PointCloud,
    center_index: usize,
    r: f64,
    noisy_index: &NeighborIndex,
    clean_index: &NeighborIndex,
) -> Result<RawPatchPair> {
    let normals = clean
        .normals()
        .ok_or_else(|| Error::invalid("clean cloud has no normals"))?;
    if !(r > 0.0) {
        return Err(Error::invalid(format!("patch radius must be positive, got {r}")));
    }
    let center = *noisy
        .positions()
        .get(center_index)
        .ok_or_else(|| Error::invalid(format!("center index {center_index} out of range")))?;

    let clean_ids = clean_index.radius_neighbors(&center, r)?;
    if clean_ids.is_empty() {
        return Err(Error::DegeneratePatch(format!(
            "no clean points within {r} of noisy point {center_index}"
        )));
    }
    let noisy_points = noisy_index
        .radius_neighbors(&center, r)?
        .into_iter()
        .map(|i| noisy.positions()[i])
        .collect();
    Ok(RawPatchPair {
        center,
        noisy_points,
        clean_points: clean_ids.iter().map(|&i| clean.positions()[i]).collect(),
        clean_normals: clean_ids.iter().map(|&i| normals[i]).collect(),
        radius: r,
    })
}

/// Orientation of an eigenvector: positive first moment of the points along
/// it, falling back to the third moment and finally to the largest component.
fn orient(v: Vec3, points: &[Vec3]) -> Vec3 {
    let proj: Vec<f64> = points.iter().map(|p| v.dot(p)).collect();
    let scale: f64 = proj.iter().map(|x| x.abs()).sum();
    let first: f64 = proj.iter().sum();
    if first.abs() > 1e-9 * scale {
        return if first > 0.0 { v } else { -v };
    }
    let scale3: f64 = proj.iter().map(|x| x.abs().powi(3)).sum();
    let third: f64 = proj.iter().map(|x| x.powi(3)).sum();
    if third.abs() > 1e-9 * scale3 {
        return if third > 0.0 { v } else { -v };
    }
    let k = v.iamax();
    if v[k] >= 0.0 {
        v
    } else {
        -v
    }
}

/// Rotation taking the smallest principal axis of `points` (second moments
/// about the origin) to `z` and the middle axis to `x`.
///
/// Fails with [`Error::DegenerateGeometry`] for fewer than three points or a
/// spectrum with tied eigenvalues.
pub fn pca_rotation(points: &[Vec3]) -> Result<Matrix3<f64>> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{} points cannot define a principal frame",
            points.len()
        )));
    }
    let cov = points
        .iter()
        .fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose())
        / points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let [lo, mid, hi] = order.map(|i| eig.eigenvalues[i]);
    if !(hi > 0.0) || mid - lo <= EIGEN_TIE_TOL * hi || hi - mid <= EIGEN_TIE_TOL * hi {
        return Err(Error::DegenerateGeometry(format!(
            "tied covariance spectrum ({lo:e}, {mid:e}, {hi:e})"
        )));
    }
    let z_axis = orient(eig.eigenvectors.column(order[0]).into_owned(), points);
    let x_axis = orient(eig.eigenvectors.column(order[1]).into_owned(), points);
    let y_axis = z_axis.cross(&x_axis);
    Ok(Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        z_axis.transpose(),
    ]))
}

/// Canonical frame and fixed-size resampling of a noisy neighborhood.
///
/// `neighbors` are world positions within `radius` of `center`. Tied spectra
/// fall back to the identity rotation and set `degenerate`.
pub fn canonicalize_noisy<R: Rng + ?Sized>(
    neighbors: &[Vec3],
    center: &Vec3,
    radius: f64,
    patch_size: usize,
    rng: &mut R,
) -> CanonicalPatch {
    let local: Vec<Vec3> = neighbors.iter().map(|p| (p - center) / radius).collect();
    let (rotation, degenerate) = match pca_rotation(&local) {
        Ok(r) => (r, false),
        Err(_) => (Matrix3::identity(), true),
    };
    let rotated: Vec<Vec3> = local.iter().map(|p| rotation * p).collect();

    let mut points = subsample(rotated, patch_size, rng);
    let pad_count = patch_size - points.len();
    points.resize(patch_size, Vec3::zeros());
    CanonicalPatch {
        points,
        pad_count,
        rotation,
        radius,
        center: *center,
        degenerate,
    }
}

/// Uniform subset of at most `n` items, kept in their original order.
fn subsample<T: Copy, R: Rng + ?Sized>(items: Vec<T>, n: usize, rng: &mut R) -> Vec<T> {
    if items.len() <= n {
        return items;
    }
    let mut picked = sample(rng, items.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i]).collect()
}

/// Maps a raw patch pair into the canonical frame of its noisy patch.
pub fn canonicalize<R: Rng + ?Sized>(
    raw: &RawPatchPair,
    patch_size: usize,
    rng: &mut R,
) -> Result<CanonicalPatchPair> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    if raw.clean_points.is_empty() {
        return Err(Error::DegeneratePatch("empty clean patch".into()));
    }
    if raw.clean_points.len() != raw.clean_normals.len() {
        return Err(Error::invalid("clean normals and points differ in length"));
    }
    let noisy = canonicalize_noisy(&raw.noisy_points, &raw.center, raw.radius, patch_size, rng);
    let clean: Vec<(Vec3, Vec3)> = raw
        .clean_points
        .iter()
        .zip(&raw.clean_normals)
        .map(|(p, n)| (noisy.to_canonical(p), noisy.rotation * n))
        .collect();
    let (clean_points, clean_normals) = subsample(clean, patch_size, rng).into_iter().unzip();
    Ok(CanonicalPatchPair {
        noisy,
        clean_points,
        clean_normals,
    })
}

/// World-space displacement `r * R^T * d` for a canonical displacement `d`.
pub fn decanonicalize_displacement(d: &Vec3, patch: &CanonicalPatch) -> Vec3 {
    patch.rotation.transpose() * d * patch.radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::TAU)).into_inner()
    }

    /// Anisotropic blob: variances 1 (x), 4 (y), 0.04 (z) about the origin.
    fn blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0) * 1.0,
                    rng.random_range(-1.0..1.0) * 2.0,
                    rng.random_range(-1.0..1.0) * 0.2,
                ) + Vec3::new(0.05, 0.1, 0.02)
            })
            .collect()
    }

    fn assert_proper(r: &Matrix3<f64>) {
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn planar_points_rotate_onto_xy() {
        let mut g = rng(1);
        let q = random_rotation(&mut g);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| q * Vec3::new(g.random_range(-1.0..1.0), 0.5 * g.random_range(-1.0..1.0), 0.0))
            .collect();
        let r = pca_rotation(&pts).unwrap();
        assert_proper(&r);
        for p in &pts {
            assert!((r * p).z.abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_input_gives_identity() {
        // Symmetric grid with variances y > x > z: axes already canonical.
        let mut pts = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                for k in -1..=1 {
                    pts.push(Vec3::new(i as f64, 2.0 * j as f64, 0.1 * k as f64));
                }
            }
        }
        let r = pca_rotation(&pts).unwrap();
        assert_proper(&r);
        assert!((r - Matrix3::identity()).amax() < 1e-12, "{r}");
    }

    #[test]
    fn degenerate_spectra_rejected() {
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(pca_rotation(&line), Err(Error::DegenerateGeometry(_))));
        let two = [Vec3::x(), Vec3::y()];
        assert!(matches!(pca_rotation(&two), Err(Error::DegenerateGeometry(_))));
        // Axis-aligned cross: three equal second moments.
        let cross = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
        assert!(pca_rotation(&cross).is_err());
    }

    #[test]
    fn rotation_equivariance() {
        let mut g = rng(3);
        for _ in 0..100 {
            let pts = blob(&mut g, 60);
            let q = random_rotation(&mut g);
            let moved: Vec<Vec3> = pts.iter().map(|p| q * p).collect();
            let r0 = pca_rotation(&pts).unwrap();
            let r1 = pca_rotation(&moved).unwrap();
            assert_proper(&r1);
            for (p, m) in pts.iter().zip(&moved) {
                assert!((r0 * p - r1 * m).amax() < 1e-6);
            }
        }
    }

    fn raw_pair(g: &mut ChaCha8Rng, n_noisy: usize) -> RawPatchPair {
        let center = Vec3::new(1.0, -2.0, 0.5);
        let r = 0.3;
        let mut noisy = vec![center];
        while noisy.len() < n_noisy {
            let p = center + Vec3::new(g.random_range(-0.3..0.3), g.random_range(-0.3..0.3), g.random_range(-0.05..0.05));
            if (p - center).norm() < r {
                noisy.push(p);
            }
        }
        let clean: Vec<Vec3> = noisy.iter().map(|p| Vec3::new(p.x, p.y, center.z + 0.01)).collect();
        RawPatchPair {
            center,
            noisy_points: noisy,
            clean_normals: vec![Vec3::z(); clean.len()],
            clean_points: clean,
            radius: r,
        }
    }

    #[test]
    fn center_maps_to_origin_and_points_lie_in_unit_ball() {
        let mut g = rng(4);
        let raw = raw_pair(&mut g, 40);
        let c = canonicalize(&raw, 64, &mut g).unwrap();
        assert_eq!(c.noisy.points[0], Vec3::zeros());
        assert_eq!(c.noisy.pad_count, 24);
        assert!(c.noisy.points[..40].iter().all(|p| p.norm() < 1.0));
        assert!(c.noisy.points[40..].iter().all(|p| *p == Vec3::zeros()));
        assert_proper(&c.noisy.rotation);
        for n in &c.clean_normals {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_patch_is_padded() {
        let raw = RawPatchPair {
            center: Vec3::zeros(),
            noisy_points: vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.01)],
            clean_points: vec![Vec3::zeros()],
            clean_normals: vec![Vec3::z()],
            radius: 1.0,
        };
        let c = canonicalize(&raw, 5, &mut rng(5)).unwrap();
        assert_eq!(c.noisy.pad_count, 2);
        assert_eq!(&c.noisy.points[3..], &[Vec3::zeros(), Vec3::zeros()]);
    }

    #[test]
    fn large_patch_is_a_subset() {
        let mut g = rng(6);
        let raw = raw_pair(&mut g, 100);
        let c = canonicalize(&raw, 50, &mut g).unwrap();
        assert_eq!(c.noisy.points.len(), 50);
        assert_eq!(c.noisy.pad_count, 0);
        let all: Vec<Vec3> = raw.noisy_points.iter().map(|p| c.noisy.to_canonical(p)).collect();
        for p in &c.noisy.points {
            assert!(all.iter().any(|q| q == p));
        }
        assert!(c.clean_points.len() <= 50);

        // Same stream, same subset.
        let a = canonicalize(&raw, 50, &mut rng(77)).unwrap();
        let b = canonicalize(&raw, 50, &mut rng(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decanonicalize_examples() {
        let mut g = rng(7);
        let mut patch = canonicalize(&raw_pair(&mut g, 30), 32, &mut g).unwrap().noisy;
        assert_eq!(decanonicalize_displacement(&Vec3::zeros(), &patch), Vec3::zeros());
        for _ in 0..20 {
            let d = Vec3::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0), g.random_range(-1.0..1.0));
            let w = decanonicalize_displacement(&d, &patch);
            assert!((w.norm() - patch.radius * d.norm()).abs() < 1e-9);
        }
        patch.rotation = Matrix3::identity();
        patch.radius = 2.0;
        assert_eq!(
            decanonicalize_displacement(&Vec3::new(0.5, 0.0, 0.0), &patch),
            Vec3::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn frame_round_trip() {
        let mut g = rng(8);
        let raw = raw_pair(&mut g, 30);
        let c = canonicalize(&raw, 32, &mut g).unwrap();
        for (p, q) in raw.clean_points.iter().zip(&c.clean_points) {
            let back = c.noisy.center + decanonicalize_displacement(q, &c.noisy);
            assert!((back - p).amax() < 1e-9);
        }
    }

    #[test]
    fn extract_examples() {
        let one = PointCloud::with_normals(vec![Vec3::new(1.0, 1.0, 1.0)], vec![Vec3::z()]).unwrap();
        let idx = NeighborIndex::from_cloud(&one).unwrap();
        let raw = extract_patch_pair(&one.without_normals(), &one, 0, 0.1, &idx, &idx).unwrap();
        assert_eq!(raw.noisy_points.len(), 1);
        assert_eq!(raw.clean_points.len(), 1);

        let far = PointCloud::with_normals(vec![Vec3::new(5.0, 0.0, 0.0)], vec![Vec3::z()]).unwrap();
        let noisy = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        let res = extract_patch_pair(
            &noisy,
            &far,
            0,
            1e-3,
            &NeighborIndex::from_cloud(&noisy).unwrap(),
            &NeighborIndex::from_cloud(&far).unwrap(),
        );
        assert!(matches!(res, Err(Error::DegeneratePatch(_))));

        let bare = far.without_normals();
        let res = extract_patch_pair(
            &noisy,
            &bare,
            0,
            10.0,
            &NeighborIndex::from_cloud(&noisy).unwrap(),
            &NeighborIndex::from_cloud(&bare).unwrap(),
        );
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn extract_matches_brute_force_membership() {
        let mut g = rng(9);
        let pts = |g: &mut ChaCha8Rng, n| -> Vec<Vec3> {
            (0..n).map(|_| Vec3::new(g.random(), g.random(), g.random())).collect()
        };
        let noisy = PointCloud::new(pts(&mut g, 500)).unwrap();
        let clean_pos = pts(&mut g, 400);
        let clean = PointCloud::with_normals(clean_pos.clone(), vec![Vec3::y(); 400]).unwrap();
        let ni = NeighborIndex::from_cloud(&noisy).unwrap();
        let ci = NeighborIndex::from_cloud(&clean).unwrap();
        for i in (0..500).step_by(25) {
            let r = 0.2;
            let c = noisy.positions()[i];
            let raw = extract_patch_pair(&noisy, &clean, i, r, &ni, &ci).unwrap();
            let want_n: Vec<Vec3> = noisy.positions().iter().filter(|p| (*p - c).norm() < r).copied().collect();
            let want_c: Vec<Vec3> = clean_pos.iter().filter(|p| (*p - c).norm() < r).copied().collect();
            assert_eq!(raw.noisy_points, want_n);
            assert_eq!(raw.clean_points, want_c);
            assert!(raw.noisy_points.contains(&c));
        }
    }
}
