//! Graph to printable mesh: capsule-union signed distance field, box smoothing,
//! marching cubes and binary STL.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Graph, Point3, Result};

/// Values sampled at the corners of a uniform grid; x varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    origin: Point3,
    spacing: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(origin: Point3, spacing: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {spacing}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 samples per axis, got {dims:?}")));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values for a {dims:?} grid", values.len())));
        }
        Ok(Self { origin, spacing, dims, values })
    }

    pub fn from_fn(origin: Point3, spacing: f64, dims: [usize; 3], f: impl Fn(Point3) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(point_at(origin, spacing, i, j, k)));
                }
            }
        }
        Self::new(origin, spacing, dims, values)
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point3 {
        point_at(self.origin, self.spacing, i, j, k)
    }
}

fn point_at(origin: Point3, h: f64, i: usize, j: usize, k: usize) -> Point3 {
    origin + Point3::new(i as f64 * h, j as f64 * h, k as f64 * h)
}

/// Euclidean distance from `p` to the segment `ab`.
pub fn point_segment_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(a + ab * t)
}

/// Exact capsule-union distance at a single point.
pub fn capsule_distance(g: &Graph, p: Point3, radius: f64) -> Result<f64> {
    if g.edges().is_empty() {
        return Err(Error::NoEdges);
    }
    Ok(g.edges()
        .iter()
        .map(|&(a, b)| point_segment_distance(p, g.position(a), g.position(b)) - radius)
        .fold(f64::INFINITY, f64::min))
}

/// Grid spacing that puts `divisions` voxels along the longest bounding dimension.
pub fn default_spacing(g: &Graph, radius: f64, divisions: usize) -> Result<f64> {
    let (lo, hi) = g.bounds().ok_or(Error::Empty)?;
    let d = hi - lo;
    let longest = d.x.max(d.y).max(d.z);
    let longest = if longest > 0.0 { longest } else { 2.0 * radius };
    Ok(longest / divisions.max(1) as f64)
}

/// Voxel budget for automatic refinement in [`auto_spacing`].
pub const MAX_AUTO_VOXELS: usize = 24_000_000;

/// Struts need a few voxels across to survive smoothing.
const VOXELS_PER_RADIUS: f64 = 2.0;

/// [`default_spacing`], refined to at most `radius / 2` when the padded grid stays within
/// [`MAX_AUTO_VOXELS`]. Coarser grids let box smoothing erase struts thinner than a voxel.
pub fn auto_spacing(g: &Graph, radius: f64, divisions: usize) -> Result<f64> {
    let coarse = default_spacing(g, radius, divisions)?;
    let fine = radius / VOXELS_PER_RADIUS;
    if coarse <= fine {
        return Ok(coarse);
    }
    let (lo, hi) = g.bounds().ok_or(Error::Empty)?;
    let e = hi - lo;
    let pad = 2.0 * (3.0 * radius + 2.0 * fine);
    let voxels: f64 = [e.x, e.y, e.z].iter().map(|&x| ((x + pad) / fine).ceil() + 1.0).product();
    if voxels <= MAX_AUTO_VOXELS as f64 {
        Ok(fine)
    } else {
        let per_axis = (voxels / MAX_AUTO_VOXELS as f64).cbrt();
        let s = (fine * per_axis).min(coarse);
        log::warn!("grid spacing {s:.3e} exceeds half the strut radius; thin struts may vanish");
        Ok(s)
    }
}

/// Capsule-union SDF of the graph's edges with struts of `radius`.
///
/// The box is padded by `3 radius + 2 spacing`. Values are exact within a band of
/// `2 radius + 6 spacing` around the struts and clamped to that band beyond it, which keeps
/// evaluation proportional to strut volume rather than grid volume.
pub fn web_sdf(g: &Graph, radius: f64, spacing: f64) -> Result<ScalarField> {
    if g.edges().is_empty() {
        return Err(if g.is_empty() { Error::Empty } else { Error::NoEdges });
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("strut radius must be positive, got {radius}")));
    }
    let (lo, hi) = g.bounds().ok_or(Error::Empty)?;
    let pad = 3.0 * radius + 2.0 * spacing;
    let origin = lo - Point3::new(pad, pad, pad);
    let extent = hi - lo;
    let dims = [extent.x, extent.y, extent.z].map(|e| (((e + 2.0 * pad) / spacing).ceil() as usize + 1).max(2));
    let band = 2.0 * radius + 6.0 * spacing;
    let mut field = ScalarField::new(origin, spacing, dims, vec![band; dims.iter().product()])?;

    let reach = band + radius;
    for &(ea, eb) in g.edges() {
        let (a, b) = (g.position(ea), g.position(eb));
        let range = |axis: usize| {
            let (pa, pb, o) = match axis {
                0 => (a.x, b.x, origin.x),
                1 => (a.y, b.y, origin.y),
                _ => (a.z, b.z, origin.z),
            };
            let first = ((pa.min(pb) - reach - o) / spacing).floor().max(0.0) as usize;
            let last = (((pa.max(pb) + reach - o) / spacing).ceil() as usize).min(dims[axis] - 1);
            first..=last
        };
        let (ri, rj, rk) = (range(0), range(1), range(2));
        for k in rk {
            for j in rj.clone() {
                for i in ri.clone() {
                    let d = point_segment_distance(field.point(i, j, k), a, b) - radius;
                    let idx = field.index(i, j, k);
                    if d < field.values[idx] {
                        field.values[idx] = d;
                    }
                }
            }
        }
    }
    Ok(field)
}

/// `passes` rounds of a separable 3x3x3 box filter with clamped (replicated) borders.
pub fn smooth(field: &ScalarField, passes: usize) -> ScalarField {
    let mut out = field.clone();
    let mut scratch = vec![0.0; out.values.len()];
    for _ in 0..passes {
        for axis in 0..3 {
            let stride = match axis {
                0 => 1,
                1 => out.dims[0],
                _ => out.dims[0] * out.dims[1],
            };
            let n = out.dims[axis];
            for (idx, s) in scratch.iter_mut().enumerate() {
                let pos = (idx / stride) % n;
                let prev = if pos == 0 { idx } else { idx - stride };
                let next = if pos + 1 == n { idx } else { idx + stride };
                *s = (out.values[prev] + out.values[idx] + out.values[next]) / 3.0;
            }
            std::mem::swap(&mut out.values, &mut scratch);
        }
    }
    out
}

/// Cube corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Cube edges as `(axis, lower corner)`; edge `4 axis + m` where `m` packs the two other bits.
fn cube_edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    for (axis, chunk) in out.chunks_mut(4).enumerate() {
        let others: Vec<usize> = (0..3).filter(|&b| b != axis).collect();
        for (m, slot) in chunk.iter_mut().enumerate() {
            let c = ((m & 1) << others[0]) | (((m >> 1) & 1) << others[1]);
            *slot = (axis, c);
        }
    }
    out
}

fn edge_id(axis: usize, c0: usize, c1: usize) -> usize {
    let lo = c0.min(c1);
    let others: Vec<usize> = (0..3).filter(|&b| b != axis).collect();
    4 * axis + ((lo >> others[0]) & 1) + 2 * ((lo >> others[1]) & 1)
}

type CaseTable = Vec<Vec<Vec<u8>>>;

/// Per inside-corner mask, closed loops of crossed cube edges.
///
/// Built from face segments: each cube face contributes the segments implied by its four
/// corners alone, so neighbouring cells agree on shared faces and the result is watertight.
/// On ambiguous faces (diagonal inside corners) the inside corners are kept apart. Each
/// segment is directed so that `direction x face_normal` points at the inside corners,
/// which makes the loops counter-clockwise seen from the outside.
fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_loops).collect())
}

fn case_loops(mask: usize) -> Vec<Vec<u8>> {
    let edges = cube_edges();
    let fpoint = |c: usize| {
        let o = corner_offset(c);
        Point3::new(o[0] as f64, o[1] as f64, o[2] as f64)
    };
    let midpoint = |e: usize| {
        let (axis, c) = edges[e];
        (fpoint(c) + fpoint(c | (1 << axis))) * 0.5
    };
    let inside = |c: usize| mask & (1 << c) != 0;

    let mut next = [None::<usize>; 12];
    for axis in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&b| b != axis).collect();
        for side in 0..2 {
            let cyc: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(u, v)| (side << axis) | (u << others[0]) | (v << others[1]))
                .collect();
            let face_edge = |k: usize| {
                let (c0, c1) = (cyc[k], cyc[(k + 1) % 4]);
                edge_id((0..3).find(|&b| (c0 ^ c1) >> b & 1 == 1).unwrap(), c0, c1)
            };
            let mut normal = [0.0; 3];
            normal[axis] = if side == 1 { 1.0 } else { -1.0 };
            let normal = Point3::from_array(normal);

            let crossed: Vec<usize> = (0..4).filter(|&k| inside(cyc[k]) != inside(cyc[(k + 1) % 4])).collect();
            let mut segments: Vec<(usize, usize, Point3)> = Vec::new();
            match crossed.len() {
                0 => {}
                2 => {
                    let ins: Vec<Point3> = cyc.iter().filter(|&&c| inside(c)).map(|&c| fpoint(c)).collect();
                    let centroid = ins.iter().fold(Point3::ZERO, |s, &p| s + p) * (1.0 / ins.len() as f64);
                    segments.push((face_edge(crossed[0]), face_edge(crossed[1]), centroid));
                }
                4 => {
                    for k in (0..4).filter(|&k| inside(cyc[k])) {
                        segments.push((face_edge((k + 3) % 4), face_edge(k), fpoint(cyc[k])));
                    }
                }
                _ => unreachable!("a face cycle crosses an even number of times"),
            }
            for (e0, e1, reference) in segments {
                let (p, q) = (midpoint(e0), midpoint(e1));
                let side_sign = (q - p).cross(normal).dot(reference - (p + q) * 0.5);
                let (from, to) = if side_sign > 0.0 { (e0, e1) } else { (e1, e0) };
                debug_assert!(next[from].is_none());
                next[from] = Some(to);
            }
        }
    }

    let mut visited = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if visited[start] || next[start].is_none() {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            lp.push(e as u8);
            e = next[e].expect("crossed edges form closed loops");
        }
        loops.push(lp);
    }
    loops
}

/// Triangle mesh with counter-clockwise (outward) winding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.triangles {
            if let Some(&bad) = t.iter().find(|&&v| v >= self.vertices.len()) {
                return Err(Error::NodeOutOfRange { index: bad, len: self.vertices.len() });
            }
        }
        Ok(())
    }

    fn corners(&self, t: &[usize; 3]) -> (Point3, Point3, Point3) {
        (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let (a, b, c) = self.corners(&self.triangles[t]);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward winding of a closed surface.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = self.corners(t);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    fn edge_uses(&self) -> HashMap<(usize, usize), usize> {
        let mut uses = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        uses
    }

    /// Every undirected edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_uses().values().all(|&n| n == 2)
    }

    /// Every directed edge appears once and its reverse once: a consistent orientation.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut directed = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_uses().len() as i64 + self.triangles.len() as i64
    }

    /// Merges vertices closer than `tol` (per coordinate), drops triangles with repeated
    /// or collinear corners and removes unreferenced vertices.
    pub fn cleanup(&self, tol: f64) -> TriMesh {
        let n = self.vertices.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.vertices[a].x.total_cmp(&self.vertices[b].x).then(a.cmp(&b)));
        let mut rep: Vec<usize> = (0..n).collect();
        let mut merged = vec![false; n];
        for (oi, &i) in order.iter().enumerate() {
            if merged[i] {
                continue;
            }
            let p = self.vertices[i];
            for &j in &order[oi + 1..] {
                let q = self.vertices[j];
                if q.x - p.x > tol {
                    break;
                }
                if !merged[j] && (q.y - p.y).abs() <= tol && (q.z - p.z).abs() <= tol {
                    rep[j] = i;
                    merged[j] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; n];
        let mut out = TriMesh::default();
        for t in &self.triangles {
            let r = t.map(|v| rep[v]);
            if r[0] == r[1] || r[1] == r[2] || r[0] == r[2] {
                continue;
            }
            let (a, b, c) = (self.vertices[r[0]], self.vertices[r[1]], self.vertices[r[2]]);
            if (b - a).cross(c - a).norm() == 0.0 {
                continue;
            }
            let tri = r.map(|v| {
                if remap[v] == usize::MAX {
                    remap[v] = out.vertices.len();
                    out.vertices.push(self.vertices[v]);
                }
                remap[v]
            });
            out.triangles.push(tri);
        }
        out
    }
}

/// Extracts the `iso` surface. Corners with `value < iso` are inside; triangles face the
/// larger values. Output order follows cell index, so it is deterministic.
pub fn marching_cubes(field: &ScalarField, iso: f64) -> Result<TriMesh> {
    if let Some(i) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("field value {i}")));
    }
    let table = case_table();
    let edges = cube_edges();
    let [nx, ny, nz] = field.dims;
    let mut mesh = TriMesh::default();
    let mut vertex_of: HashMap<usize, usize> = HashMap::new();
    let mut cell_vertex = [0usize; 12];

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut mask = 0;
                for c in 0..8 {
                    let o = corner_offset(c);
                    if field.get(i + o[0], j + o[1], k + o[2]) < iso {
                        mask |= 1 << c;
                    }
                }
                let loops = &table[mask];
                if loops.is_empty() {
                    continue;
                }
                for lp in loops {
                    for &e in lp {
                        let (axis, c) = edges[e as usize];
                        let o = corner_offset(c);
                        let (gi, gj, gk) = (i + o[0], j + o[1], k + o[2]);
                        let key = field.index(gi, gj, gk) * 3 + axis;
                        let idx = *vertex_of.entry(key).or_insert_with(|| {
                            let step = [(1, 0, 0), (0, 1, 0), (0, 0, 1)][axis];
                            let (hi, hj, hk) = (gi + step.0, gj + step.1, gk + step.2);
                            let (v0, v1) = (field.get(gi, gj, gk), field.get(hi, hj, hk));
                            let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
                            let (p0, p1) = (field.point(gi, gj, gk), field.point(hi, hj, hk));
                            mesh.vertices.push(p0 + (p1 - p0) * t);
                            mesh.vertices.len() - 1
                        });
                        cell_vertex[e as usize] = idx;
                    }
                    for w in 1..lp.len() - 1 {
                        mesh.triangles.push([
                            cell_vertex[lp[0] as usize],
                            cell_vertex[lp[w] as usize],
                            cell_vertex[lp[w + 1] as usize],
                        ]);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Strut radius in graph units.
    pub radius: f64,
    /// Grid spacing; `None` derives it with [`auto_spacing`].
    pub spacing: Option<f64>,
    /// Voxels along the longest bounding dimension when `spacing` is unset.
    pub divisions: usize,
    pub smooth_passes: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { radius: 0.0004, spacing: None, divisions: 200, smooth_passes: 2 }
    }
}

/// SDF, smoothing, marching cubes and cleanup in one call.
pub fn mesh_graph(g: &Graph, cfg: &MeshConfig) -> Result<TriMesh> {
    let spacing = match cfg.spacing {
        Some(s) => s,
        None => auto_spacing(g, cfg.radius, cfg.divisions)?,
    };
    let field = smooth(&web_sdf(g, cfg.radius, spacing)?, cfg.smooth_passes);
    Ok(marching_cubes(&field, 0.0)?.cleanup(1e-9 * spacing.max(1.0)))
}

pub const STL_HEADER_LEN: usize = 80;
const STL_TRIANGLE_LEN: usize = 50;

fn f32_point(p: Point3) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

fn f32_normal(a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> [f32; 3] {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len > 0.0 {
        n.map(|x| x / len)
    } else {
        [0.0; 3]
    }
}

/// Binary STL. `header` is truncated or zero-padded to 80 bytes.
pub fn write_stl(mesh: &TriMesh, header: &[u8], mut w: impl Write) -> Result<()> {
    mesh.validate()?;
    let count = u32::try_from(mesh.triangles.len())
        .map_err(|_| Error::InvalidArgument("too many triangles for STL".into()))?;
    let mut head = [0u8; STL_HEADER_LEN];
    let n = header.len().min(STL_HEADER_LEN);
    head[..n].copy_from_slice(&header[..n]);
    let mut buf = Vec::with_capacity(STL_HEADER_LEN + 4 + STL_TRIANGLE_LEN * mesh.triangles.len());
    buf.extend_from_slice(&head);
    buf.extend_from_slice(&count.to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| f32_point(mesh.vertices[v]));
        for v in [f32_normal(a, b, c), a, b, c] {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn export_stl(mesh: &TriMesh, header: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_stl(mesh, header, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses binary STL, merging vertices with bit-identical single-precision coordinates.
pub fn read_stl(mut r: impl Read) -> Result<TriMesh> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_stl_bytes(&bytes)
}

pub fn parse_stl(path: impl AsRef<Path>) -> Result<TriMesh> {
    parse_stl_bytes(&std::fs::read(path)?)
}

pub fn parse_stl_bytes(bytes: &[u8]) -> Result<TriMesh> {
    if bytes.len() < STL_HEADER_LEN + 4 {
        return Err(Error::Parse(format!("STL of {} bytes is shorter than its header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    let expected = STL_HEADER_LEN + 4 + STL_TRIANGLE_LEN * count;
    if bytes.len() != expected {
        return Err(Error::Parse(format!("STL declares {count} triangles ({expected} bytes) but has {}", bytes.len())));
    }
    let mut mesh = TriMesh::default();
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    for rec in bytes[84..].chunks_exact(STL_TRIANGLE_LEN) {
        let float = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let mut tri = [0; 3];
        for (v, slot) in tri.iter_mut().enumerate() {
            let p = [float(3 + 3 * v), float(4 + 3 * v), float(5 + 3 * v)];
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse("non-finite STL vertex".into()));
            }
            *slot = *index.entry(p.map(f32::to_bits)).or_insert_with(|| {
                mesh.vertices.push(Point3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                mesh.vertices.len() - 1
            });
        }
        mesh.triangles.push(tri);
    }
    Ok(mesh)
}

/// Header text embedding a config hash.
pub fn stl_header(config_hash: &str) -> Vec<u8> {
    format!("spinneret web mesh {config_hash}").into_bytes()
}
