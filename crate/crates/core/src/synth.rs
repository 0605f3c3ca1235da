//! Procedural training data: analytic shapes with exact normals, additive
//! noise, and the dataset manifest tying clean and noisy clouds together.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::cloud::{bbox_diagonal, save_cloud, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::mesh::{save_off, TriangleMesh};
use crate::patch::{DEFAULT_PATCH_SIZE, DEFAULT_RADIUS_FRACTION};
use crate::rng::stream;

/// Fraction of points hit by impulsive noise.
pub const IMPULSE_FRACTION: f64 = 0.1;
/// Impulsive noise standard deviation relative to the nominal one.
pub const IMPULSE_SCALE: f64 = 5.0;

/// Angular resolution of tessellated curved surfaces.
const CURVED_SEGMENTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Square of side `size` in the `z = 0` plane, normal `+z`.
    Plane { size: f64 },
    Cube { side: f64 },
    Sphere { radius: f64 },
    /// Closed cylinder along `z`.
    Cylinder { radius: f64, height: f64 },
    /// Two rectangles meeting along the `y` axis at a dihedral angle.
    Wedge { width: f64, depth: f64, angle_deg: f64 },
    Torus { major: f64, minor: f64 },
}

impl ShapeKind {
    pub const NAMES: [&'static str; 6] = ["plane", "cube", "sphere", "cylinder", "wedge", "torus"];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Plane { .. } => "plane",
            ShapeKind::Cube { .. } => "cube",
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Wedge { .. } => "wedge",
            ShapeKind::Torus { .. } => "torus",
        }
    }

    /// Whether the surface is exactly representable by its mesh.
    pub fn is_piecewise_flat(&self) -> bool {
        matches!(
            self,
            ShapeKind::Plane { .. } | ShapeKind::Cube { .. } | ShapeKind::Wedge { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let dims: &[f64] = match self {
            ShapeKind::Plane { size } => &[*size],
            ShapeKind::Cube { side } => &[*side],
            ShapeKind::Sphere { radius } => &[*radius],
            ShapeKind::Cylinder { radius, height } => &[*radius, *height],
            ShapeKind::Wedge { width, depth, angle_deg } => {
                if !(*angle_deg > 0.0 && *angle_deg < 180.0) {
                    return Err(Error::invalid(format!("wedge angle {angle_deg} outside (0, 180)")));
                }
                &[*width, *depth]
            }
            ShapeKind::Torus { major, minor } => {
                if !(minor < major) {
                    return Err(Error::invalid("torus minor radius must be below the major radius"));
                }
                &[*major, *minor]
            }
        };
        if dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{} dimensions must be positive", self.name())))
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    /// Parses a kind name with unit-scale default dimensions.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "plane" => ShapeKind::Plane { size: 1.0 },
            "cube" => ShapeKind::Cube { side: 1.0 },
            "sphere" => ShapeKind::Sphere { radius: 0.5 },
            "cylinder" => ShapeKind::Cylinder {
                radius: 0.35,
                height: 1.0,
            },
            "wedge" => ShapeKind::Wedge {
                width: 0.6,
                depth: 1.0,
                angle_deg: 90.0,
            },
            "torus" => ShapeKind::Torus {
                major: 0.4,
                minor: 0.15,
            },
            other => {
                return Err(Error::invalid(format!(
                    "unknown shape kind {other:?} (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub point_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Impulsive,
    Uniform,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "impulsive" => Ok(NoiseKind::Impulsive),
            "uniform" => Ok(NoiseKind::Uniform),
            other => Err(Error::invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Impulsive => "impulsive",
            NoiseKind::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Fraction of the clean cloud's bounding-box diagonal.
    pub level: f64,
    pub seed: u64,
}

/// Samples `spec.point_count` points uniformly by area, with exact normals,
/// and returns a mesh of the same surface.
pub fn sample_shape(spec: &ShapeSpec) -> Result<(PointCloud, TriangleMesh)> {
    spec.kind.validate()?;
    if spec.point_count == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    let mut rng = stream(spec.seed, &[0x5a4d_5045]);
    let mut positions = Vec::with_capacity(spec.point_count);
    let mut normals = Vec::with_capacity(spec.point_count);
    for _ in 0..spec.point_count {
        let (p, n) = sample_point(&spec.kind, &mut rng);
        positions.push(p);
        normals.push(n);
    }
    let cloud = PointCloud::with_normals(positions, normals)?;
    Ok((cloud, shape_mesh(&spec.kind)?))
}

fn sample_point<R: Rng + ?Sized>(kind: &ShapeKind, rng: &mut R) -> (Vec3, Vec3) {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match *kind {
        ShapeKind::Plane { size } => {
            let h = size / 2.0;
            (Vec3::new(u(-h, h), u(-h, h), 0.0), Vec3::z())
        }
        ShapeKind::Cube { side } => {
            let h = side / 2.0;
            let face = u(0.0, 6.0).floor().min(5.0) as usize;
            let axis = face / 2;
            let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut p = Vec3::new(u(-h, h), u(-h, h), u(-h, h));
            p[axis] = sign * h;
            let mut n = Vec3::zeros();
            n[axis] = sign;
            (p, n)
        }
        ShapeKind::Sphere { radius } => {
            let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let mut n = Vec3::from(g);
            while n.norm() < 1e-12 {
                n = Vec3::from(std::array::from_fn::<f64, 3, _>(|_| StandardNormal.sample(rng)));
            }
            let n = n.normalize();
            (n * radius, n)
        }
        ShapeKind::Cylinder { radius, height } => {
            let side = TAU * radius * height;
            let cap = PI * radius * radius;
            let pick = u(0.0, side + 2.0 * cap);
            let t = u(0.0, TAU);
            if pick < side {
                let n = Vec3::new(t.cos(), t.sin(), 0.0);
                let z = u(-height / 2.0, height / 2.0);
                (Vec3::new(radius * n.x, radius * n.y, z), n)
            } else {
                let sign = if pick < side + cap { 1.0 } else { -1.0 };
                let rr = radius * u(0.0, 1.0).sqrt();
                (
                    Vec3::new(rr * t.cos(), rr * t.sin(), sign * height / 2.0),
                    Vec3::new(0.0, 0.0, sign),
                )
            }
        }
        ShapeKind::Wedge { width, depth, angle_deg } => {
            let half = angle_deg.to_radians() / 2.0;
            let sign = if u(0.0, 1.0) < 0.5 { 1.0 } else { -1.0 };
            let dir = Vec3::new(sign * half.sin(), 0.0, -half.cos());
            let n = Vec3::new(sign * half.cos(), 0.0, half.sin());
            let p = dir * u(0.0, width) + Vec3::new(0.0, u(-depth / 2.0, depth / 2.0), 0.0);
            (p, n)
        }
        ShapeKind::Torus { major, minor } => {
            // Area element is proportional to (major + minor cos v).
            let v = loop {
                let v = u(0.0, TAU);
                if u(0.0, major + minor) < major + minor * v.cos() {
                    break v;
                }
            };
            let t = u(0.0, TAU);
            let n = Vec3::new(v.cos() * t.cos(), v.cos() * t.sin(), v.sin());
            let ring = Vec3::new(major * t.cos(), major * t.sin(), 0.0);
            (ring + n * minor, n)
        }
    }
}

fn quad(v: &mut Vec<Vec3>, t: &mut Vec<[usize; 3]>, corners: [Vec3; 4]) {
    let b = v.len();
    v.extend_from_slice(&corners);
    t.push([b, b + 1, b + 2]);
    t.push([b, b + 2, b + 3]);
}

/// Grid tessellation of a parametric surface over `[0,1)^2`, wrapping in
/// `u` and optionally in `v`.
fn parametric_grid(
    nu: usize,
    nv: usize,
    wrap_v: bool,
    f: impl Fn(f64, f64) -> Vec3,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let rows = if wrap_v { nv } else { nv + 1 };
    let mut verts = Vec::with_capacity(nu * rows);
    for j in 0..rows {
        for i in 0..nu {
            verts.push(f(i as f64 / nu as f64, j as f64 / nv as f64));
        }
    }
    let mut tris = Vec::new();
    for j in 0..nv {
        let j1 = if wrap_v { (j + 1) % nv } else { j + 1 };
        for i in 0..nu {
            let i1 = (i + 1) % nu;
            let (a, b, c, d) = (j * nu + i, j * nu + i1, j1 * nu + i1, j1 * nu + i);
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    (verts, tris)
}

fn shape_mesh(kind: &ShapeKind) -> Result<TriangleMesh> {
    let mut v = Vec::new();
    let mut t = Vec::new();
    match *kind {
        ShapeKind::Plane { size } => {
            let h = size / 2.0;
            quad(
                &mut v,
                &mut t,
                [
                    Vec3::new(-h, -h, 0.0),
                    Vec3::new(h, -h, 0.0),
                    Vec3::new(h, h, 0.0),
                    Vec3::new(-h, h, 0.0),
                ],
            );
        }
        ShapeKind::Cube { side } => {
            let h = side / 2.0;
            for axis in 0..3 {
                for sign in [1.0, -1.0] {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let corner = |s: f64, r: f64| {
                        let mut p = Vec3::zeros();
                        p[axis] = sign * h;
                        p[a] = s * h;
                        p[b] = r * h;
                        p
                    };
                    quad(
                        &mut v,
                        &mut t,
                        [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)],
                    );
                }
            }
        }
        ShapeKind::Sphere { radius } => {
            // Latitude rings plus two pole fans.
            let nu = CURVED_SEGMENTS;
            let nv = CURVED_SEGMENTS / 2;
            (v, t) = parametric_grid(nu, nv - 2, false, |s, r| {
                let phi = PI * (r * (nv - 2) as f64 + 1.0) / nv as f64;
                let th = TAU * s;
                Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()) * radius
            });
            let north = v.len();
            v.push(Vec3::new(0.0, 0.0, radius));
            let south = v.len();
            v.push(Vec3::new(0.0, 0.0, -radius));
            let last = (nv - 2) * nu;
            for i in 0..nu {
                let i1 = (i + 1) % nu;
                t.push([north, i1, i]);
                t.push([south, last + i, last + i1]);
            }
        }
        ShapeKind::Cylinder { radius, height } => {
            let nu = CURVED_SEGMENTS;
            (v, t) = parametric_grid(nu, 1, false, |s, r| {
                let th = TAU * s;
                Vec3::new(radius * th.cos(), radius * th.sin(), height * (r - 0.5))
            });
            for (ring, z) in [(0usize, -height / 2.0), (nu, height / 2.0)] {
                let c = v.len();
                v.push(Vec3::new(0.0, 0.0, z));
                for i in 0..nu {
                    t.push([c, ring + i, ring + (i + 1) % nu]);
                }
            }
        }
        ShapeKind::Wedge { width, depth, angle_deg } => {
            let half = angle_deg.to_radians() / 2.0;
            let hd = depth / 2.0;
            for sign in [1.0, -1.0] {
                let far = Vec3::new(sign * half.sin(), 0.0, -half.cos()) * width;
                quad(
                    &mut v,
                    &mut t,
                    [
                        Vec3::new(0.0, -hd, 0.0),
                        far + Vec3::new(0.0, -hd, 0.0),
                        far + Vec3::new(0.0, hd, 0.0),
                        Vec3::new(0.0, hd, 0.0),
                    ],
                );
            }
        }
        ShapeKind::Torus { major, minor } => {
            (v, t) = parametric_grid(CURVED_SEGMENTS, CURVED_SEGMENTS / 2, true, |s, r| {
                let (th, ph) = (TAU * s, TAU * r);
                let ring = major + minor * ph.cos();
                Vec3::new(ring * th.cos(), ring * th.sin(), minor * ph.sin())
            });
        }
    }
    TriangleMesh::new(v, t)
}

/// Corrupts `clean` with additive noise scaled by its bounding-box diagonal.
/// The result carries no normals.
pub fn add_noise(clean: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    if !(spec.level >= 0.0) || !spec.level.is_finite() {
        return Err(Error::invalid(format!("noise level must be >= 0, got {}", spec.level)));
    }
    let scale = spec.level * bbox_diagonal(clean)?;
    let mut rng = stream(spec.seed, &[0x4e4f_4953]);
    let mut positions = clean.positions().to_vec();
    if scale == 0.0 {
        return PointCloud::new(positions);
    }
    match spec.kind {
        NoiseKind::Gaussian => {
            let normal = Normal::new(0.0, scale).expect("positive sigma");
            for p in &mut positions {
                *p += Vec3::from_fn(|_, _| normal.sample(&mut rng));
            }
        }
        NoiseKind::Impulsive => {
            let normal = Normal::new(0.0, IMPULSE_SCALE * scale).expect("positive sigma");
            let count = impulse_count(positions.len());
            let mut hit = sample(&mut rng, positions.len(), count).into_vec();
            hit.sort_unstable();
            for i in hit {
                positions[i] += Vec3::from_fn(|_, _| normal.sample(&mut rng));
            }
        }
        NoiseKind::Uniform => {
            for p in &mut positions {
                *p += Vec3::from_fn(|_, _| rng.random_range(-scale..=scale));
            }
        }
    }
    PointCloud::new(positions)
}

/// Number of points perturbed by impulsive noise.
pub fn impulse_count(n: usize) -> usize {
    ((IMPULSE_FRACTION * n as f64).ceil() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub patches_per_model: usize,
    pub patch_size: usize,
    pub radius_fraction: f64,
}

const MANIFEST_TAG: &str = "pointfilter-manifest";

impl DatasetManifest {
    /// Writes the manifest; entry paths are stored relative to its directory
    /// when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = format!(
            "# {MANIFEST_TAG} patch_size={} radius_fraction={} patches_per_model={}\n",
            self.patch_size, self.radius_fraction, self.patches_per_model
        );
        for e in &self.entries {
            let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
            out += &format!("{} {} {}\n", rel(&e.clean), rel(&e.noisy), e.level);
        }
        fs::write(path, out).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };

        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (n, header) = lines
            .next()
            .ok_or_else(|| Error::EmptyInput(format!("{} is empty", path.display())))?;
        let fields = header
            .strip_prefix('#')
            .map(str::trim)
            .and_then(|h| h.strip_prefix(MANIFEST_TAG))
            .ok_or_else(|| err(n, format!("missing '# {MANIFEST_TAG}' header")))?;
        let (mut patch_size, mut radius_fraction, mut patches_per_model) = (None, None, None);
        for kv in fields.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(n, format!("malformed header field {kv:?}")))?;
            let bad = || err(n, format!("invalid value for {k}: {v:?}"));
            match k {
                "patch_size" => patch_size = Some(v.parse().map_err(|_| bad())?),
                "radius_fraction" => radius_fraction = Some(v.parse().map_err(|_| bad())?),
                "patches_per_model" => patches_per_model = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(err(n, format!("unknown header key {k:?}"))),
            }
        }
        let missing = |k: &str| err(n, format!("header lacks {k}"));
        let manifest_radius: f64 = radius_fraction.ok_or_else(|| missing("radius_fraction"))?;
        if !(manifest_radius > 0.0) {
            return Err(err(n, "radius_fraction must be positive".into()));
        }

        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(err(n, format!("expected 3 columns, found {}", cols.len())));
            }
            let level = cols[2]
                .parse()
                .map_err(|_| err(n, format!("invalid level {:?}", cols[2])))?;
            entries.push(ManifestEntry {
                clean: base.join(cols[0]),
                noisy: base.join(cols[1]),
                level,
            });
        }
        Ok(Self {
            entries,
            patches_per_model: patches_per_model.ok_or_else(|| missing("patches_per_model"))?,
            patch_size: patch_size.ok_or_else(|| missing("patch_size"))?,
            radius_fraction: manifest_radius,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub noise_kind: NoiseKind,
    pub patches_per_model: usize,
    pub patch_size: usize,
    pub radius_fraction: f64,
    /// Master seed for the noise streams; entry `i` uses stream `(seed, i)`.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            noise_kind: NoiseKind::Gaussian,
            patches_per_model: 8000,
            patch_size: DEFAULT_PATCH_SIZE,
            radius_fraction: DEFAULT_RADIUS_FRACTION,
            seed: 0,
        }
    }
}

/// Writes `<stem>_clean.xyz`, `<stem>.off` and one noisy cloud per level for
/// every shape, plus `manifest.txt`, into `out_dir`.
pub fn build_manifest(
    shapes: &[ShapeSpec],
    levels: &[f64],
    out_dir: impl AsRef<Path>,
    config: &DatasetConfig,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if let Some(l) = levels.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {l}")));
    }
    fs::create_dir_all(out_dir).map_err(|source| Error::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let per_shape: Vec<Vec<ManifestEntry>> = shapes
        .par_iter()
        .enumerate()
        .map(|(s, spec)| -> Result<Vec<ManifestEntry>> {
            let stem = format!("{s:02}_{}", spec.kind.name());
            let (clean, mesh) = sample_shape(spec)?;
            let clean_path = out_dir.join(format!("{stem}_clean.xyz"));
            save_cloud(&clean, &clean_path)?;
            save_off(&mesh, out_dir.join(format!("{stem}.off")))?;
            levels
                .iter()
                .enumerate()
                .map(|(l, &level)| {
                    let entry_id = (s * levels.len() + l) as u64;
                    let noise = NoiseSpec {
                        kind: config.noise_kind,
                        level,
                        seed: stream_seed(config.seed, entry_id),
                    };
                    let noisy = add_noise(&clean, &noise)?;
                    let noisy_path = out_dir.join(format!("{stem}_noisy_{l}.xyz"));
                    save_cloud(&noisy, &noisy_path)?;
                    Ok(ManifestEntry {
                        clean: clean_path.clone(),
                        noisy: noisy_path,
                        level,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest {
        entries: per_shape.into_iter().flatten().collect(),
        patches_per_model: config.patches_per_model,
        patch_size: config.patch_size,
        radius_fraction: config.radius_fraction,
    };
    manifest.save(out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

fn stream_seed(seed: u64, id: u64) -> u64 {
    stream(seed, &[id]).random()
}
