//! Point-wise filtering of a noisy cloud with a trained network.
//!
//! Every point is moved by the network's displacement for its canonical
//! patch, mapped back to world space. A pass reads one frozen snapshot of the
//! cloud, and several passes can be chained.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;

use crate::cloud::{bbox_diagonal, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::index::NeighborIndex;
use crate::nn::{NetworkParams, Precision, Real};
use crate::patch::{canonicalize_noisy, decanonicalize_displacement, CanonicalPatch};
use crate::rng::stream;

/// Patches per network call.
const INFER_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub iterations: usize,
    pub patch_size: usize,
    pub radius_fraction: f64,
    /// Work is always split into fixed batches, so results never depend on
    /// the worker count.
    pub deterministic: bool,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            patch_size: 500,
            radius_fraction: 0.05,
            deterministic: true,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be at least 1"));
        }
        if !(self.radius_fraction > 0.0 && self.radius_fraction.is_finite()) {
            return Err(Error::invalid("radius fraction must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Filtered,
    /// Tied principal axes; the identity frame was used.
    Degenerate,
    /// No neighbors inside the patch radius; the point was left in place.
    Isolated,
}

/// Per-point warnings summed over all passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterSummary {
    pub points: usize,
    pub iterations: usize,
    pub degenerate: usize,
    pub isolated: usize,
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "points={} iterations={} degenerate_patches={} isolated_points={}",
            self.points, self.iterations, self.degenerate, self.isolated
        )
    }
}

fn noisy_patch(
    points: &[Vec3],
    index: &NeighborIndex,
    i: usize,
    radius: f64,
    patch_size: usize,
    seed: u64,
    iteration: usize,
) -> Result<Option<CanonicalPatch>> {
    let center = points[i];
    let mut neighbors: Vec<Vec3> = index
        .radius_neighbors(&center, radius)?
        .into_iter()
        .map(|j| index.points()[j])
        .collect();
    if neighbors.is_empty() {
        return Ok(None);
    }
    // Ordering by distance and seeding by the neighbor count keep the chosen
    // subset independent of both the input order and rigid motions.
    neighbors.sort_by_cached_key(|p| {
        let e = p - center;
        (e.norm_squared().to_bits(), p.x.to_bits(), p.y.to_bits(), p.z.to_bits())
    });
    let key = [iteration as u64, neighbors.len() as u64];
    let mut rng = stream(seed, &key);
    Ok(Some(canonicalize_noisy(&neighbors, &center, radius, patch_size, &mut rng)))
}

fn apply<T: Real>(patch: &CanonicalPatch, displacement: &[T]) -> Vec3 {
    let d = Vec3::from_fn(|c, _| displacement[c].to_f64().expect("finite"));
    patch.center + decanonicalize_displacement(&d, patch)
}

/// Filters `noisy[i]` against `index` with patch radius `radius`.
pub fn filter_point<T: Real>(
    params: &NetworkParams<T>,
    noisy: &PointCloud,
    index: &NeighborIndex,
    i: usize,
    radius: f64,
    config: &FilterConfig,
) -> Result<(Vec3, PointStatus)> {
    let points = noisy.positions();
    if i >= points.len() {
        return Err(Error::invalid(format!("point index {i} out of range")));
    }
    let Some(patch) = noisy_patch(points, index, i, radius, config.patch_size, config.seed, 0)? else {
        return Ok((points[i], PointStatus::Isolated));
    };
    let d = params.forward_patch(&patch.points)?;
    let status = if patch.degenerate {
        PointStatus::Degenerate
    } else {
        PointStatus::Filtered
    };
    Ok((patch.center + decanonicalize_displacement(&d, &patch), status))
}

/// Runs `config.iterations` filtering passes. The patch radius comes from the
/// input cloud's diagonal and stays fixed; the neighbor index is rebuilt from
/// the current cloud before each pass.
pub fn filter_cloud(
    params: &NetworkParams,
    noisy: &PointCloud,
    config: &FilterConfig,
) -> Result<(PointCloud, FilterSummary)> {
    match config.precision {
        Precision::F32 => filter_cloud_with(&params.cast::<f32>(), noisy, config),
        Precision::F64 => filter_cloud_with(params, noisy, config),
    }
}

pub fn filter_cloud_with<T: Real>(
    params: &NetworkParams<T>,
    noisy: &PointCloud,
    config: &FilterConfig,
) -> Result<(PointCloud, FilterSummary)> {
    config.validate()?;
    if noisy.is_empty() {
        return Err(Error::EmptyInput("noisy cloud has no points".into()));
    }
    let radius = config.radius_fraction * bbox_diagonal(noisy)?;
    let mut summary = FilterSummary {
        points: noisy.len(),
        iterations: config.iterations,
        ..Default::default()
    };
    let mut current = noisy.positions().to_vec();
    for iteration in 0..config.iterations {
        let (next, statuses) = filter_pass(params, &current, radius, iteration, config)?;
        for s in statuses {
            match s {
                PointStatus::Degenerate => summary.degenerate += 1,
                PointStatus::Isolated => summary.isolated += 1,
                PointStatus::Filtered => {}
            }
        }
        current = next;
    }
    Ok((PointCloud::new(current)?, summary))
}

fn filter_pass<T: Real>(
    params: &NetworkParams<T>,
    points: &[Vec3],
    radius: f64,
    iteration: usize,
    config: &FilterConfig,
) -> Result<(Vec<Vec3>, Vec<PointStatus>)> {
    let index = NeighborIndex::build(points)?;
    let n = config.patch_size;
    let ids: Vec<usize> = (0..points.len()).collect();
    let batches = ids
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let patches = chunk
                .iter()
                .map(|&i| noisy_patch(points, &index, i, radius, n, config.seed, iteration))
                .collect::<Result<Vec<_>>>()?;
            let live: Vec<&CanonicalPatch> = patches.iter().flatten().collect();
            let out = if live.is_empty() {
                Array2::zeros((0, 3))
            } else {
                let input = Array2::from_shape_fn((live.len() * n, 3), |(r, c)| {
                    T::from_f64(live[r / n].points[r % n][c]).expect("representable")
                });
                params.forward_infer(input.view(), n)?
            };
            let mut row = 0;
            Ok(chunk
                .iter()
                .zip(&patches)
                .map(|(&i, patch)| match patch {
                    None => (points[i], PointStatus::Isolated),
                    Some(p) => {
                        let moved = apply(p, out.row(row).as_slice().expect("standard layout"));
                        row += 1;
                        let status = if p.degenerate {
                            PointStatus::Degenerate
                        } else {
                            PointStatus::Filtered
                        };
                        (moved, status)
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(batches.into_iter().flatten().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Architecture};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn arch() -> Architecture {
        Architecture::new(vec![8, 16], vec![8, 3]).unwrap()
    }

    fn trained_like(seed: u64) -> NetworkParams {
        let mut p = init_params(&arch(), seed).unwrap();
        let mut rng = stream(seed, &[9]);
        for l in p.encoder.iter_mut().chain(&mut p.decoder) {
            if let Some(bn) = &mut l.norm {
                bn.running_mean.mapv_inplace(|_| rng.random_range(-0.2..0.2));
                bn.running_var.mapv_inplace(|_| rng.random_range(0.1..0.5));
            }
        }
        p
    }

    fn blob(n: usize, seed: u64) -> PointCloud {
        let mut rng = stream(seed, &[]);
        let pts = (0..n)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                Vec3::new(u, 0.7 * v, 0.2 * (2.0 * u).sin() * v + rng.random_range(-0.02..0.02))
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn config() -> FilterConfig {
        FilterConfig {
            iterations: 1,
            patch_size: 24,
            radius_fraction: 0.15,
            precision: Precision::F64,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let mut p = trained_like(1);
        p.zero_output_layer();
        let cloud = blob(300, 2);
        let index = NeighborIndex::from_cloud(&cloud).unwrap();
        let (q, status) = filter_point(&p, &cloud, &index, 17, 0.3, &config()).unwrap();
        assert!((q - cloud.positions()[17]).norm() < 1e-7);
        assert_eq!(status, PointStatus::Filtered);
        let (out, summary) = filter_cloud(&p, &cloud, &config()).unwrap();
        assert_eq!(out.positions(), cloud.positions());
        assert_eq!(summary.isolated, 0);
    }

    #[test]
    fn displacement_is_bounded_by_the_radius() {
        let mut p = trained_like(4);
        p.decoder[1].bias.fill(50.0);
        let cloud = blob(200, 5);
        let cfg = config();
        let r = cfg.radius_fraction * bbox_diagonal(&cloud).unwrap();
        let (out, _) = filter_cloud(&p, &cloud, &cfg).unwrap();
        let mut max_move: f64 = 0.0;
        for (a, b) in out.positions().iter().zip(cloud.positions()) {
            max_move = max_move.max((a - b).norm());
        }
        assert!(max_move <= 3f64.sqrt() * r * (1.0 + 1e-12));
        assert!(max_move > 0.5 * r);
    }

    #[test]
    fn isolated_point_is_left_in_place() {
        let p = trained_like(6);
        let cloud = blob(50, 7);
        let far = PointCloud::new(vec![Vec3::new(10.0, 10.0, 10.0)]).unwrap();
        let index = NeighborIndex::from_cloud(&cloud).unwrap();
        let (q, status) = filter_point(&p, &far, &index, 0, 0.3, &config()).unwrap();
        assert_eq!(q, far.positions()[0]);
        assert_eq!(status, PointStatus::Isolated);
        assert!(filter_point(&p, &far, &index, 1, 0.3, &config()).is_err());
    }

    #[test]
    fn single_point_cloud_is_unchanged() {
        let p = trained_like(6);
        let one = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        let (out, summary) = filter_cloud(&p, &one, &config()).unwrap();
        assert_eq!(out.positions(), one.positions());
        assert_eq!(summary.isolated, 1);
    }

    #[test]
    fn cloud_filter_matches_point_filter_and_keeps_order() {
        let p = trained_like(8);
        let cloud = blob(150, 9);
        let cfg = config();
        let r = cfg.radius_fraction * bbox_diagonal(&cloud).unwrap();
        let (out, summary) = filter_cloud(&p, &cloud, &cfg).unwrap();
        assert_eq!(out.len(), cloud.len());
        assert_eq!(summary.points, 150);
        let index = NeighborIndex::from_cloud(&cloud).unwrap();
        for i in [0, 31, 149] {
            let (q, _) = filter_point(&p, &cloud, &index, i, r, &cfg).unwrap();
            assert!((q - out.positions()[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn passes_chain_and_are_deterministic() {
        let p = trained_like(10);
        let cloud = blob(120, 11);
        let two = FilterConfig {
            iterations: 2,
            ..config()
        };
        let (a, _) = filter_cloud(&p, &cloud, &two).unwrap();
        let (b, _) = filter_cloud(&p, &cloud, &two).unwrap();
        assert_eq!(a.positions(), b.positions());
        let (c, _) = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| filter_cloud(&p, &cloud, &two).unwrap());
        assert_eq!(a.positions(), c.positions());
        let (once, _) = filter_cloud(&p, &cloud, &config()).unwrap();
        assert_ne!(a.positions(), once.positions());
        assert_eq!(a.len(), cloud.len());
    }

    #[test]
    fn f32_inference_tracks_f64() {
        let p = trained_like(12);
        let cloud = blob(100, 13);
        let (a, _) = filter_cloud(&p, &cloud, &config()).unwrap();
        let (b, _) = filter_cloud(&p, &cloud, &FilterConfig { precision: Precision::F32, ..config() }).unwrap();
        for (u, v) in a.positions().iter().zip(b.positions()) {
            assert!((u - v).norm() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_config_and_empty_input() {
        let p = trained_like(1);
        let cloud = blob(10, 1);
        assert!(filter_cloud(&p, &cloud, &FilterConfig { iterations: 0, ..config() }).is_err());
        assert!(filter_cloud(&p, &cloud, &FilterConfig { radius_fraction: 0.0, ..config() }).is_err());
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(matches!(filter_cloud(&p, &empty, &config()), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn rigid_motion_equivariance(seed in 0u64..1000) {
            let p = trained_like(seed);
            let cloud = blob(200, seed + 1);
            let mut rng = stream(seed, &[5]);
            let axis = Unit::new_normalize(Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::TAU));
            let t = Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let moved = PointCloud::new(cloud.positions().iter().map(|x| rot * x + t).collect()).unwrap();
            // Same radius for both clouds; the axis-aligned box is not rotation invariant.
            let r = 0.3;
            let cfg = FilterConfig { patch_size: 8, ..config() };
            let a_index = NeighborIndex::from_cloud(&cloud).unwrap();
            let b_index = NeighborIndex::from_cloud(&moved).unwrap();
            for i in [3usize, 50, 120] {
                let (a, sa) = filter_point(&p, &cloud, &a_index, i, r, &cfg).unwrap();
                let (b, _) = filter_point(&p, &moved, &b_index, i, r, &cfg).unwrap();
                prop_assume!(sa == PointStatus::Filtered);
                prop_assert!((rot * a + t - b).norm() < 1e-5, "{:?}", (rot * a + t - b).norm());
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..1000) {
            let p = trained_like(seed);
            let cloud = blob(100, seed + 2);
            let mut order: Vec<usize> = (0..100).collect();
            order.shuffle(&mut stream(seed, &[6]));
            let permuted = PointCloud::new(order.iter().map(|&i| cloud.positions()[i]).collect()).unwrap();
            let cfg = FilterConfig { patch_size: 8, ..config() };
            let (a, _) = filter_cloud(&p, &cloud, &cfg).unwrap();
            let (b, _) = filter_cloud(&p, &permuted, &cfg).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert!((a.positions()[i] - b.positions()[k]).norm() < 1e-9);
            }
        }
    }
}
