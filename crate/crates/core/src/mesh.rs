//! Triangle meshes (ASCII OFF) and exact point-to-surface distances.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "triangle {t} references vertex {i} of {}",
                    vertices.len()
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {t} repeats a vertex: {tri:?}")));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Numeric(format!("mesh vertex {i} is not finite")));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| triangle_area(&self.triangle(t)))
            .sum()
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

pub fn triangle_area(tri: &[Vec3; 3]) -> f64 {
    0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm()
}

fn is_degenerate(tri: &[Vec3; 3]) -> bool {
    let scale = (tri[1] - tri[0])
        .norm_squared()
        .max((tri[2] - tri[0]).norm_squared())
        .max((tri[2] - tri[1]).norm_squared());
    !(2.0 * triangle_area(tri) > 1e-12 * scale) || scale == 0.0
}

/// Closest point of the closed triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Exact Euclidean distance from `p` to the closed triangle.
pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> Result<f64> {
    if is_degenerate(tri) {
        return Err(Error::invalid("degenerate triangle (zero area)"));
    }
    Ok((p - closest_point_on_triangle(p, tri)).norm())
}

/// Bounding-volume hierarchy over a mesh for nearest-surface queries.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

const BVH_LEAF: usize = 4;

impl TriangleBvh {
    /// Fails on an empty mesh or on any degenerate triangle.
    pub fn build(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.triangles().is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles().len()).map(|t| mesh.triangle(t)).collect();
        if let Some(t) = tris.iter().position(is_degenerate) {
            return Err(Error::invalid(format!("mesh triangle {t} is degenerate")));
        }
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        bvh.build_node(0, bvh.tris.len());
        Ok(bvh)
    }

    fn bounds(&self, start: usize, end: usize) -> (Vec3, Vec3) {
        let first = self.tris[self.order[start]][0];
        self.order[start..end]
            .iter()
            .flat_map(|&t| self.tris[t].iter())
            .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v)))
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let (lo, hi) = self.bounds(start, end);
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            lo,
            hi,
            start,
            end,
            children: None,
        });
        if end - start <= BVH_LEAF {
            return id;
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let tris = &self.tris;
        let centroid = |t: usize| tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis];
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroid(a).total_cmp(&centroid(b)));
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn box_dist2(node: &BvhNode, q: &Vec3) -> f64 {
        (0..3)
            .map(|a| {
                let d = (node.lo[a] - q[a]).max(q[a] - node.hi[a]).max(0.0);
                d * d
            })
            .sum()
    }

    /// Minimum distance from `p` to the mesh surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if Self::box_dist2(node, p) > best * best * (1.0 + 1e-9) {
                continue;
            }
            match node.children {
                None => {
                    for &t in &self.order[node.start..node.end] {
                        let d = (p - closest_point_on_triangle(p, &self.tris[t])).norm();
                        best = best.min(d);
                    }
                }
                Some((l, r)) => {
                    let (near, far) =
                        if Self::box_dist2(&self.nodes[l], p) <= Self::box_dist2(&self.nodes[r], p) {
                            (l, r)
                        } else {
                            (r, l)
                        };
                    stack.push(far);
                    stack.push(near);
                }
            }
        }
        best
    }
}

pub fn load_off(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_off(&text, path)
}

pub(crate) fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput(format!("{} is empty", path.display())))?;
    // The counts may share the header line ("OFF 8 12 0").
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| err(n, "missing OFF header".into()))?
        .trim()
        .to_string();
    let (n, counts) = if rest.is_empty() {
        let (n, l) = lines
            .next()
            .ok_or_else(|| err(n, "missing element counts".into()))?;
        (n, l.to_string())
    } else {
        (n, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(n, format!("invalid count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(err(n, "expected vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines
            .next()
            .ok_or_else(|| err(n, format!("expected {nv} vertices")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(n, format!("invalid number {t:?}"))))
            .collect::<Result<_>>()?;
        if v.len() < 3 {
            return Err(err(n, "vertex needs 3 coordinates".into()));
        }
        vertices.push(Vec3::new(v[0], v[1], v[2]));
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, l) = lines
            .next()
            .ok_or_else(|| err(n, format!("expected {nf} faces")))?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(n, format!("invalid index {t:?}"))))
            .collect::<Result<_>>()?;
        let k = *f.first().ok_or_else(|| err(n, "empty face".into()))?;
        if k < 3 || f.len() < k + 1 {
            return Err(err(n, format!("face declares {k} vertices")));
        }
        // Fan-triangulate polygons.
        for j in 1..k - 1 {
            triangles.push([f[1], f[j + 1], f[j + 2]]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn save_off(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    fs::write(path, out).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
