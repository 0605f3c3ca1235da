//! Training objectives on a canonical patch pair.
//!
//! The noisy query sits at the canonical origin, so the filtered point is
//! the predicted displacement `d` itself. Every loss returns its value and
//! its exact gradient with respect to `d`.

use std::str::FromStr;

use crate::cloud::{points_diagonal, Vec3};
use crate::error::{Error, Result};
use crate::patch::CanonicalPatchPair;

/// Kernel widths at or below this use uniform spatial weights.
pub const DEGENERATE_KERNEL: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub eta: f64,
    pub sigma_n_degrees: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            eta: 0.97,
            sigma_n_degrees: 15.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.sigma_n_degrees > 0.0 && self.sigma_n_degrees < 90.0) {
            return Err(Error::invalid(format!(
                "sigma_n must lie in (0, 90) degrees, got {}",
                self.sigma_n_degrees
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    L2,
    ProjA,
    #[default]
    ProjB,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::ProjA => "proj_a",
            LossKind::ProjB => "proj_b",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "proj_a" => Ok(LossKind::ProjA),
            "proj_b" => Ok(LossKind::ProjB),
            other => Err(Error::invalid(format!(
                "unknown loss `{other}` (expected l2, proj_a or proj_b)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A loss value with its gradient with respect to `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub projection: f64,
    pub repulsion: f64,
    pub total: f64,
    /// Gradient of `total` with respect to `d`.
    pub grad: Vec3,
}

/// The clean side of a patch pair with its kernel width.
#[derive(Debug, Clone, Copy)]
pub struct CleanPatch<'a> {
    pub points: &'a [Vec3],
    pub normals: &'a [Vec3],
    pub sigma_p: f64,
}

impl<'a> CleanPatch<'a> {
    /// Uses the noisy patch size as `m`.
    pub fn from_pair(pair: &'a CanonicalPatchPair) -> Result<Self> {
        let sigma_p = sigma_p(&pair.clean_points, pair.noisy.patch_size())?;
        Self::new(&pair.clean_points, &pair.clean_normals, sigma_p)
    }

    pub fn new(points: &'a [Vec3], normals: &'a [Vec3], sigma_p: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("empty clean patch"));
        }
        if points.len() != normals.len() {
            return Err(Error::invalid("clean points and normals differ in length"));
        }
        Ok(Self {
            points,
            normals,
            sigma_p,
        })
    }
}

/// `4 * sqrt(diag / m)` with `diag` the bounding-box diagonal of the clean points.
pub fn sigma_p(clean_points: &[Vec3], m: usize) -> Result<f64> {
    if clean_points.is_empty() {
        return Err(Error::invalid("empty clean patch"));
    }
    if m == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    Ok(4.0 * (points_diagonal(clean_points)? / m as f64).sqrt())
}

pub fn spatial_weight(d: f64, sigma_p: f64) -> Result<f64> {
    if !(sigma_p > 0.0) {
        return Err(Error::invalid(format!("sigma_p must be positive, got {sigma_p}")));
    }
    Ok((-(d * d) / (sigma_p * sigma_p)).exp())
}

fn normal_denominator(sigma_n_degrees: f64) -> f64 {
    1.0 - sigma_n_degrees.to_radians().cos()
}

pub fn normal_weight(n_filtered: &Vec3, n_gt: &Vec3, sigma_n_degrees: f64) -> Result<f64> {
    for n in [n_filtered, n_gt] {
        if (n.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("normal {n:?} is not unit length")));
        }
    }
    Ok((-(1.0 - n_filtered.dot(n_gt)) / normal_denominator(sigma_n_degrees)).exp())
}

/// Index of the clean point nearest to `p`; ties go to the lowest index.
fn nearest(p: &Vec3, points: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Normal of the clean point nearest to `p`.
pub fn assign_filtered_normal(p: &Vec3, patch: &CleanPatch) -> Vec3 {
    patch.normals[nearest(p, patch.points).0]
}

/// Weighted mean of `|(p - p_j) . n_j|` with weights
/// `exp(-|p - p_j|^2 / sigma_p^2 + log_extra_j)`.
fn weighted_projection(p: &Vec3, patch: &CleanPatch, log_extra: impl Fn(usize) -> f64) -> Term {
    let uniform = patch.sigma_p <= DEGENERATE_KERNEL;
    let inv_s2 = if uniform { 0.0 } else { patch.sigma_p.powi(-2) };
    let logw: Vec<f64> = patch
        .points
        .iter()
        .enumerate()
        .map(|(j, q)| -(p - q).norm_squared() * inv_s2 + log_extra(j))
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut sum_w = 0.0;
    let mut sum_wa = 0.0;
    for (j, (q, n)) in patch.points.iter().zip(patch.normals).enumerate() {
        let w = (logw[j] - top).exp();
        sum_w += w;
        sum_wa += w * (p - q).dot(n).abs();
    }
    let value = sum_wa / sum_w;

    // dL/dp = sum_j [w_j sign(a_j) n_j + (|a_j| - L) dw_j/dp] / sum_w,
    // with dw_j/dp = -2 (p - p_j) w_j / sigma_p^2.
    let mut grad = Vec3::zeros();
    for (j, (q, n)) in patch.points.iter().zip(patch.normals).enumerate() {
        let w = (logw[j] - top).exp();
        let e = p - q;
        let a = e.dot(n);
        let sign = if a > 0.0 {
            1.0
        } else if a < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad += n * (w * sign) - e * (2.0 * inv_s2 * w * (a.abs() - value));
    }
    Term {
        value,
        grad: grad / sum_w,
    }
}

/// Projection loss with spatial weights only.
pub fn loss_proj_a(d: &Vec3, patch: &CleanPatch) -> Term {
    weighted_projection(d, patch, |_| 0.0)
}

/// Projection loss with spatial and normal weights. The filtered normal is
/// frozen, so it contributes no gradient.
pub fn loss_proj_b(d: &Vec3, patch: &CleanPatch, sigma_n_degrees: f64) -> Term {
    let n_bar = assign_filtered_normal(d, patch);
    let denom = normal_denominator(sigma_n_degrees);
    weighted_projection(d, patch, |j| -(1.0 - n_bar.dot(&patch.normals[j])) / denom)
}

/// Largest distance from `d` to a clean point.
pub fn loss_rep(d: &Vec3, points: &[Vec3]) -> Term {
    let mut far = (0, -1.0);
    for (j, q) in points.iter().enumerate() {
        let d2 = (d - q).norm_squared();
        if d2 > far.1 {
            far = (j, d2);
        }
    }
    let value = far.1.sqrt();
    let grad = if value > 0.0 {
        (d - points[far.0]) / value
    } else {
        Vec3::zeros()
    };
    Term { value, grad }
}

/// Squared distance from `d` to the nearest clean point.
pub fn loss_l2(d: &Vec3, points: &[Vec3]) -> Term {
    let (j, d2) = nearest(d, points);
    Term {
        value: d2,
        grad: (d - points[j]) * 2.0,
    }
}

/// `eta * L + (1 - eta) * L_rep` for the chosen data term `L`.
pub fn total_loss(d: &Vec3, patch: &CleanPatch, params: &LossParams, kind: LossKind) -> LossTerms {
    let proj = match kind {
        LossKind::L2 => loss_l2(d, patch.points),
        LossKind::ProjA => loss_proj_a(d, patch),
        LossKind::ProjB => loss_proj_b(d, patch, params.sigma_n_degrees),
    };
    let rep = loss_rep(d, patch.points);
    let eta = params.eta;
    LossTerms {
        projection: proj.value,
        repulsion: rep.value,
        total: eta * proj.value + (1.0 - eta) * rep.value,
        grad: proj.grad * eta + rep.grad * (1.0 - eta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::CanonicalPatch;
    use crate::rng::stream;
    use nalgebra::{Matrix3, Rotation3, Unit};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    fn random_patch(n: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>, Vec3) {
        let mut rng = stream(seed, &[]);
        let points = (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.6..0.6)))
            .collect();
        let normals = (0..n).map(|_| random_unit(&mut rng)).collect();
        let d = Vec3::from_fn(|_, _| rng.random_range(-0.4..0.4));
        (points, normals, d)
    }

    fn pair(points: Vec<Vec3>, normals: Vec<Vec3>, m: usize) -> CanonicalPatchPair {
        CanonicalPatchPair {
            noisy: CanonicalPatch {
                points: vec![Vec3::zeros(); m],
                pad_count: m,
                rotation: Matrix3::identity(),
                radius: 1.0,
                center: Vec3::zeros(),
                degenerate: false,
            },
            clean_points: points,
            clean_normals: normals,
        }
    }

    /// Direct evaluation of the weighted projection, without stabilization.
    fn oracle_projection(d: &Vec3, points: &[Vec3], normals: &[Vec3], sigma: f64, theta: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..points.len() {
            let e = d - points[j];
            let w = (-e.norm_squared() / (sigma * sigma)).exp() * theta[j];
            num += w * e.dot(&normals[j]).abs();
            den += w;
        }
        num / den
    }

    fn fd_grad(f: impl Fn(&Vec3) -> f64, d: &Vec3) -> Vec3 {
        let h = 1e-6;
        Vec3::from_fn(|i, _| {
            let mut a = *d;
            let mut b = *d;
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
    }

    fn assert_grad(analytic: &Vec3, numeric: &Vec3) {
        for i in 0..3 {
            let rel = (analytic[i] - numeric[i]).abs()
                / analytic[i].abs().max(numeric[i].abs()).max(1e-3);
            assert!(rel < 1e-6, "analytic {analytic:?} numeric {numeric:?}");
        }
    }

    #[test]
    fn sigma_p_examples() {
        let two = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        assert!((sigma_p(&two, 500).unwrap() - 4.0 * (2.0f64 / 500.0).sqrt()).abs() < 1e-15);
        assert!((sigma_p(&two, 500).unwrap() - 0.25298).abs() < 1e-5);
        assert_eq!(sigma_p(&[Vec3::new(0.1, 0.2, 0.3)], 500).unwrap(), 0.0);
        assert!((sigma_p(&two, 2).unwrap() - 4.0).abs() < 1e-15);
        assert!(sigma_p(&[], 5).is_err());
        assert!(sigma_p(&two, 0).is_err());
        let p = pair(two.to_vec(), vec![Vec3::z(); 2], 500);
        assert!((CleanPatch::from_pair(&p).unwrap().sigma_p - 0.25298).abs() < 1e-5);
        let empty = pair(vec![], vec![], 500);
        assert!(matches!(CleanPatch::from_pair(&empty), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spatial_weight_examples() {
        assert_eq!(spatial_weight(0.0, 0.3).unwrap(), 1.0);
        assert!((spatial_weight(0.3, 0.3).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let ws: Vec<f64> = (0..20).map(|k| spatial_weight(k as f64 * 0.05, 0.3).unwrap()).collect();
        assert!(ws.windows(2).all(|w| w[1] < w[0]));
        assert!(spatial_weight(0.1, 0.0).is_err());
        assert!(spatial_weight(0.1, -1.0).is_err());
    }

    #[test]
    fn normal_weight_examples() {
        let n = Vec3::new(0.6, 0.0, 0.8);
        assert_eq!(normal_weight(&n, &n, 15.0).unwrap(), 1.0);
        let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), 15f64.to_radians());
        let w = normal_weight(&Vec3::z(), &(rot * Vec3::z()), 15.0).unwrap();
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);

        let cos15 = (6f64.sqrt() + 2f64.sqrt()) / 4.0;
        let want = (-2.0 / (1.0 - cos15)).exp();
        let got = normal_weight(&Vec3::z(), &-Vec3::z(), 15.0).unwrap();
        assert!((got / want - 1.0).abs() < 1e-9);
        assert!(got > 2.5e-26 && got < 3.5e-26, "{got}");

        assert!(normal_weight(&Vec3::new(0.0, 0.0, 1.1), &Vec3::z(), 15.0).is_err());
    }

    #[test]
    fn filtered_normal_assignment() {
        let (points, normals, _) = random_patch(30, 1);
        let patch = CleanPatch::new(&points, &normals, 0.1).unwrap();
        assert_eq!(assign_filtered_normal(&points[7], &patch), normals[7]);
        let lone = CleanPatch::new(&points[..1], &normals[..1], 0.0).unwrap();
        assert_eq!(assign_filtered_normal(&Vec3::new(5.0, 5.0, 5.0), &lone), normals[0]);

        let mut rng = stream(2, &[]);
        for _ in 0..200 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let brute = (0..points.len())
                .min_by(|&a, &b| {
                    (p - points[a]).norm().partial_cmp(&(p - points[b]).norm()).unwrap().then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(assign_filtered_normal(&p, &patch), normals[brute]);
        }
    }

    #[test]
    fn projection_single_point_examples() {
        let pts = [Vec3::zeros()];
        let nrm = [Vec3::z()];
        for sigma in [0.0, 0.2] {
            let patch = CleanPatch::new(&pts, &nrm, sigma).unwrap();
            let d = Vec3::new(0.0, 0.0, 0.5);
            assert!((loss_proj_a(&d, &patch).value - 0.5).abs() < 1e-15);
            assert!((loss_proj_b(&d, &patch, 15.0).value - 0.5).abs() < 1e-15);
            assert_eq!(loss_proj_a(&Vec3::zeros(), &patch).value, 0.0);
        }
        let d = Vec3::new(0.3, -0.2, 0.1);
        let q = [Vec3::new(0.1, 0.1, 0.1)];
        let n = [Vec3::new(0.0, 0.6, 0.8)];
        let patch = CleanPatch::new(&q, &n, 0.5).unwrap();
        let want = (d - q[0]).dot(&n[0]).abs();
        assert!((loss_proj_b(&d, &patch, 15.0).value - want).abs() < 1e-15);
        assert!((loss_proj_a(&d, &patch).value - want).abs() < 1e-15);
    }

    #[test]
    fn normal_weight_boost_for_aligned_neighbor() {
        // Both clean points are equidistant from d; the aligned one is also nearest.
        let pts = [Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.1 - 1e-9, 0.0, 0.0)];
        let nrm = [Vec3::z(), Vec3::x()];
        let d = Vec3::new(0.0, 0.0, 0.05);
        let patch = CleanPatch::new(&pts, &nrm, 0.3).unwrap();
        let boost = (1.0 / (1.0 - 15f64.to_radians().cos())).exp();
        let a = [(d - pts[0]).dot(&nrm[0]).abs(), (d - pts[1]).dot(&nrm[1]).abs()];
        let phi = [
            spatial_weight((d - pts[0]).norm(), 0.3).unwrap(),
            spatial_weight((d - pts[1]).norm(), 0.3).unwrap(),
        ];
        let w = [phi[0] * boost, phi[1]];
        let want = (w[0] * a[0] + w[1] * a[1]) / (w[0] + w[1]);
        assert!((loss_proj_b(&d, &patch, 15.0).value - want).abs() < 1e-12);
        let unboosted = (phi[0] * a[0] + phi[1] * a[1]) / (phi[0] + phi[1]);
        assert!((loss_proj_a(&d, &patch).value - unboosted).abs() < 1e-12);
    }

    #[test]
    fn projection_losses_match_brute_force_and_finite_differences() {
        for seed in 0..40 {
            let (points, normals, d) = random_patch(16, seed);
            let sigma = sigma_p(&points, 16).unwrap();
            let patch = CleanPatch::new(&points, &normals, sigma).unwrap();

            let a = loss_proj_a(&d, &patch);
            let ones = vec![1.0; 16];
            assert!((a.value - oracle_projection(&d, &points, &normals, sigma, &ones)).abs() < 1e-12);
            assert_grad(&a.grad, &fd_grad(|x| loss_proj_a(x, &patch).value, &d));

            let b = loss_proj_b(&d, &patch, 15.0);
            let n_bar = normals[nearest(&d, &points).0];
            let theta: Vec<f64> = normals.iter().map(|n| normal_weight(&n_bar, n, 15.0).unwrap()).collect();
            assert!((b.value - oracle_projection(&d, &points, &normals, sigma, &theta)).abs() < 1e-12);
            assert_grad(&b.grad, &fd_grad(|x| loss_proj_b(x, &patch, 15.0).value, &d));
        }
    }

    #[test]
    fn degenerate_kernel_uses_uniform_weights() {
        let (points, normals, d) = random_patch(5, 3);
        let patch = CleanPatch::new(&points, &normals, 0.0).unwrap();
        let mean = points
            .iter()
            .zip(&normals)
            .map(|(q, n)| (d - q).dot(n).abs())
            .sum::<f64>()
            / 5.0;
        assert!((loss_proj_a(&d, &patch).value - mean).abs() < 1e-15);
        assert_grad(&loss_proj_a(&d, &patch).grad, &fd_grad(|x| loss_proj_a(x, &patch).value, &d));
    }

    #[test]
    fn repulsion_examples_and_oracle() {
        let one = [Vec3::new(0.3, 0.0, 0.0)];
        assert!((loss_rep(&Vec3::zeros(), &one).value - 0.3).abs() < 1e-15);
        let mut rng = stream(4, &[]);
        let sphere: Vec<Vec3> = (0..50).map(|_| random_unit(&mut rng)).collect();
        assert!((loss_rep(&Vec3::zeros(), &sphere).value - 1.0).abs() < 1e-12);

        for seed in 0..40 {
            let (points, _, d) = random_patch(16, seed + 100);
            let rep = loss_rep(&d, &points);
            let brute = points.iter().map(|q| (d - q).norm()).fold(0.0, f64::max);
            assert!((rep.value - brute).abs() < 1e-15);
            assert_grad(&rep.grad, &fd_grad(|x| loss_rep(x, &points).value, &d));
            let l2 = loss_l2(&d, &points);
            let brute = points.iter().map(|q| (d - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert!((l2.value - brute).abs() < 1e-15);
            assert_grad(&l2.grad, &fd_grad(|x| loss_l2(x, &points).value, &d));
        }
    }

    #[test]
    fn total_mixes_terms() {
        let (points, normals, d) = random_patch(16, 9);
        let patch = CleanPatch::new(&points, &normals, 0.2).unwrap();
        for kind in [LossKind::L2, LossKind::ProjA, LossKind::ProjB] {
            let one = total_loss(&d, &patch, &LossParams { eta: 1.0, ..Default::default() }, kind);
            assert_eq!(one.total, one.projection);
            let zero = total_loss(&d, &patch, &LossParams { eta: 0.0, ..Default::default() }, kind);
            assert_eq!(zero.total, zero.repulsion);
            let t = total_loss(&d, &patch, &LossParams::default(), kind);
            assert!((t.total - (0.97 * t.projection + 0.03 * t.repulsion)).abs() < 1e-12);
            assert_grad(
                &t.grad,
                &fd_grad(|x| total_loss(x, &patch, &LossParams::default(), kind).total, &d),
            );
        }
    }

    #[test]
    fn loss_params_validation() {
        assert!(LossParams::default().validate().is_ok());
        assert!(LossParams { eta: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossParams { sigma_n_degrees: 90.0, ..Default::default() }.validate().is_err());
        assert_eq!("proj_a".parse::<LossKind>().unwrap(), LossKind::ProjA);
        assert!("huber".parse::<LossKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_bounded_by_distance(seed in 0u64..10_000) {
            let (points, normals, d) = random_patch(12, seed);
            let patch = CleanPatch::new(&points, &normals, sigma_p(&points, 12).unwrap()).unwrap();
            let rep = loss_rep(&d, &points).value;
            prop_assert!(loss_proj_a(&d, &patch).value >= 0.0);
            prop_assert!(loss_proj_a(&d, &patch).value <= rep + 1e-12);
            prop_assert!(loss_proj_b(&d, &patch, 15.0).value <= rep + 1e-12);
        }

        #[test]
        fn proj_b_equals_proj_a_for_identical_normals(seed in 0u64..10_000) {
            let (points, _, d) = random_patch(12, seed);
            let normals = vec![random_unit(&mut stream(seed, &[1])); 12];
            let patch = CleanPatch::new(&points, &normals, 0.3).unwrap();
            let a = loss_proj_a(&d, &patch);
            let b = loss_proj_b(&d, &patch, 15.0);
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert!((a.grad - b.grad).norm() < 1e-12);
        }

        #[test]
        fn losses_are_rotation_invariant(seed in 0u64..10_000) {
            let (points, normals, d) = random_patch(12, seed);
            let mut rng = stream(seed, &[2]);
            let axis = Unit::new_normalize(random_unit(&mut rng));
            let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::TAU));
            let rp: Vec<Vec3> = points.iter().map(|p| rot * p).collect();
            let rn: Vec<Vec3> = normals.iter().map(|n| rot * n).collect();
            let a = CleanPatch::new(&points, &normals, 0.3).unwrap();
            let b = CleanPatch::new(&rp, &rn, 0.3).unwrap();
            for kind in [LossKind::L2, LossKind::ProjA, LossKind::ProjB] {
                let x = total_loss(&d, &a, &LossParams::default(), kind);
                let y = total_loss(&(rot * d), &b, &LossParams::default(), kind);
                prop_assert!((x.total - y.total).abs() < 1e-9);
                prop_assert!((rot * x.grad - y.grad).norm() < 1e-9);
            }
        }
    }
}
