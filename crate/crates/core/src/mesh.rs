//! Triangulated disk meshes with boundary electrodes.
//!
//! Vertices are numbered ring by ring from the centre outwards, so the
//! outer ring (the boundary) comes last. Boundary edges are stored in
//! counterclockwise order starting at the boundary vertex with the smallest
//! index; electrodes reference boundary edges by position in that list.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EitError, Result};

pub const MESH_FORMAT_VERSION: u32 = 1;

/// A conformal triangulation of a disk with `p` electrode arcs on its boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Directed boundary edges, counterclockwise.
    pub boundary_edges: Vec<[usize; 2]>,
    /// One entry per electrode: indices into `boundary_edges`, in order.
    pub electrodes: Vec<Vec<usize>>,
    pub version: u32,
}

/// Weighted vertex graph induced by the triangle edges.
///
/// Weights are inverse Euclidean edge lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAdjacency {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl VertexAdjacency {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Undirected edges `(i, k, w)` with `i < k`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors.iter().enumerate().flat_map(move |(i, nb)| {
            nb.iter()
                .zip(&self.weights[i])
                .filter(move |(&k, _)| k > i)
                .map(move |(&k, &w)| (i, k, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn triangle_signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Option<Vec<[usize; 2]>>,
        electrodes: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let derived = derive_boundary(vertices.len(), &triangles)?;
        let boundary_edges = match boundary_edges {
            Some(given) => {
                if given != derived {
                    return Err(EitError::InvalidMesh(
                        "boundary edge list does not match the canonical boundary of the triangulation"
                            .into(),
                    ));
                }
                given
            }
            None => derived,
        };
        let mesh = Mesh {
            vertices,
            triangles,
            boundary_edges,
            electrodes,
            version: MESH_FORMAT_VERSION,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn boundary_edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.boundary_edges[e];
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn boundary_length(&self) -> f64 {
        (0..self.boundary_edges.len())
            .map(|e| self.boundary_edge_length(e))
            .sum()
    }

    /// |E_j|, the polyline length of electrode `j`.
    pub fn electrode_length(&self, j: usize) -> f64 {
        self.electrodes[j]
            .iter()
            .map(|&e| self.boundary_edge_length(e))
            .sum()
    }

    /// The point halfway along electrode `j`'s arc.
    pub fn electrode_center(&self, j: usize) -> [f64; 2] {
        let half = 0.5 * self.electrode_length(j);
        let mut acc = 0.0;
        for &e in &self.electrodes[j] {
            let len = self.boundary_edge_length(e);
            let [a, b] = self.boundary_edges[e];
            if acc + len >= half {
                let t = (half - acc) / len;
                let (va, vb) = (self.vertices[a], self.vertices[b]);
                return [va[0] + t * (vb[0] - va[0]), va[1] + t * (vb[1] - va[1])];
            }
            acc += len;
        }
        let [_, b] = self.boundary_edges[*self.electrodes[j].last().unwrap()];
        self.vertices[b]
    }

    /// Largest distance of a vertex from the origin.
    pub fn radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    /// All undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |i| {
                    let (a, b) = (t[i], t[(i + 1) % 3]);
                    [a.min(b), a.max(b)]
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 || self.triangles.is_empty() {
            return Err(EitError::InvalidMesh("mesh needs at least one triangle".into()));
        }
        for v in &self.vertices {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(EitError::InvalidMesh("non-finite vertex coordinate".into()));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(EitError::InvalidMesh(format!("triangle {t} has an out-of-range vertex")));
            }
            let area = self.triangle_area(t);
            if !(area > 0.0) {
                return Err(EitError::InvalidMesh(format!(
                    "triangle {t} is not counterclockwise with positive area (area = {area:e})"
                )));
            }
        }
        let radius = self.boundary_edges.iter().map(|e| {
            let v = self.vertices[e[0]];
            v[0].hypot(v[1])
        });
        let r_max = radius.fold(0.0, f64::max);
        if self.radius() > r_max * (1.0 + 1e-12) {
            return Err(EitError::InvalidMesh("interior vertex outside the boundary disk".into()));
        }
        let n_b = self.boundary_edges.len();
        let mut owner = vec![usize::MAX; n_b];
        for (j, arc) in self.electrodes.iter().enumerate() {
            if arc.is_empty() {
                return Err(EitError::InvalidMesh(format!("electrode {j} has no edges")));
            }
            for &e in arc {
                if e >= n_b {
                    return Err(EitError::InvalidMesh(format!(
                        "electrode {j} references boundary edge {e} of {n_b}"
                    )));
                }
                if owner[e] != usize::MAX {
                    return Err(EitError::InvalidMesh(format!(
                        "electrodes {} and {j} overlap on boundary edge {e}",
                        owner[e]
                    )));
                }
                owner[e] = j;
            }
        }
        Ok(())
    }

    /// Builds the inverse-distance vertex graph.
    pub fn vertex_adjacency(&self) -> Result<VertexAdjacency> {
        let n = self.n_vertices();
        let mut neighbors = vec![Vec::new(); n];
        for [a, b] in self.edges() {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut weights = Vec::with_capacity(n);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            let mut w = Vec::with_capacity(nb.len());
            for &k in nb.iter() {
                let d = dist(self.vertices[i], self.vertices[k]);
                if !(d > 0.0) {
                    return Err(EitError::InvalidMesh(format!(
                        "vertices {i} and {k} coincide"
                    )));
                }
                w.push(1.0 / d);
            }
            weights.push(w);
        }
        Ok(VertexAdjacency { neighbors, weights })
    }

    /// Stable SHA-256 over the vertex coordinates, triangles, boundary and electrodes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"eit-cs mesh v1");
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            h.update(v[0].to_bits().to_le_bytes());
            h.update(v[1].to_bits().to_le_bytes());
        }
        h.update((self.triangles.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.update((self.boundary_edges.len() as u64).to_le_bytes());
        for e in &self.boundary_edges {
            h.update((e[0] as u64).to_le_bytes());
            h.update((e[1] as u64).to_le_bytes());
        }
        h.update((self.electrodes.len() as u64).to_le_bytes());
        for arc in &self.electrodes {
            h.update((arc.len() as u64).to_le_bytes());
            for &e in arc {
                h.update((e as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MeshFile {
            version: self.version,
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary_edges: Some(self.boundary_edges.clone()),
            electrodes: self.electrodes.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)?;
        if file.version != MESH_FORMAT_VERSION {
            return Err(EitError::InvalidMesh(format!(
                "unsupported mesh format version {}",
                file.version
            )));
        }
        Mesh::new(file.vertices, file.triangles, file.boundary_edges, file.electrodes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Mesh::from_json(&text).map_err(|e| EitError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// On-disk mesh layout. `boundary_edges` is optional on input and is
/// re-derived canonically when absent.
#[derive(Debug, Serialize, Deserialize)]
struct MeshFile {
    version: u32,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_edges: Option<Vec<[usize; 2]>>,
    electrodes: Vec<Vec<usize>>,
}

/// Extracts the boundary loop of a disk triangulation, checking conformity
/// on the way: every directed edge appears once, every undirected edge at
/// most twice.
fn derive_boundary(n: usize, triangles: &[[usize; 3]]) -> Result<Vec<[usize; 2]>> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for t in triangles {
        if t.iter().any(|&i| i >= n) {
            return Err(EitError::InvalidMesh("triangle references a missing vertex".into()));
        }
        for i in 0..3 {
            let e = (t[i], t[(i + 1) % 3]);
            if e.0 == e.1 {
                return Err(EitError::InvalidMesh("degenerate triangle".into()));
            }
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    if directed.values().any(|&c| c > 1) {
        return Err(EitError::InvalidMesh(
            "non-conformal mesh: an edge is shared with inconsistent orientation or by more than two triangles".into(),
        ));
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) && next.insert(a, b).is_some() {
            return Err(EitError::InvalidMesh("boundary is not a simple loop".into()));
        }
    }
    let start = *next
        .keys()
        .min()
        .ok_or_else(|| EitError::InvalidMesh("mesh has no boundary".into()))?;
    let mut loop_edges = Vec::with_capacity(next.len());
    let mut a = start;
    loop {
        let b = next[&a];
        loop_edges.push([a, b]);
        a = b;
        if a == start {
            break;
        }
        if loop_edges.len() > next.len() {
            return Err(EitError::InvalidMesh("boundary is not a simple loop".into()));
        }
    }
    if loop_edges.len() != next.len() {
        return Err(EitError::InvalidMesh(
            "boundary has more than one component; the domain is not a disk".into(),
        ));
    }
    Ok(loop_edges)
}

/// Parameters of the structured polar disk generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiskMeshSpec {
    pub radius: f64,
    pub target_h: f64,
    pub electrodes: usize,
    pub coverage: f64,
    /// Round every ring up to a multiple of the electrode count, making the
    /// mesh invariant under rotation by one electrode.
    #[serde(default)]
    pub rotational_symmetry: bool,
}

impl DiskMeshSpec {
    pub fn new(radius: f64, target_h: f64, electrodes: usize, coverage: f64) -> Self {
        DiskMeshSpec {
            radius,
            target_h,
            electrodes,
            coverage,
            rotational_symmetry: false,
        }
    }

    /// Desk-scale default: 16 electrodes, roughly 590 vertices.
    pub fn desk() -> Self {
        DiskMeshSpec::new(1.0, 1.0 / 13.0, 16, 0.5)
    }

    /// Full-scale default: 32 electrodes, roughly 1600 vertices.
    pub fn full_scale() -> Self {
        DiskMeshSpec::new(1.0, 1.0 / 22.0, 32, 0.5)
    }

    pub fn with_rotational_symmetry(mut self, on: bool) -> Self {
        self.rotational_symmetry = on;
        self
    }

    pub fn build(&self) -> Result<Mesh> {
        build_disk_mesh_with(self)
    }
}

/// Structured polar disk mesh with `p` equally spaced electrodes.
pub fn build_disk_mesh(radius: f64, target_h: f64, p: usize, coverage: f64) -> Result<Mesh> {
    DiskMeshSpec::new(radius, target_h, p, coverage).build()
}

fn build_disk_mesh_with(spec: &DiskMeshSpec) -> Result<Mesh> {
    let DiskMeshSpec {
        radius,
        target_h,
        electrodes: p,
        coverage,
        rotational_symmetry,
    } = *spec;
    if !(radius > 0.0) || !(target_h > 0.0) || target_h >= radius {
        return Err(EitError::InvalidInput(format!(
            "need radius > 0 and 0 < target_h < radius (radius = {radius}, target_h = {target_h})"
        )));
    }
    if p < 4 || p % 2 != 0 {
        return Err(EitError::InvalidInput(format!(
            "electrode count must be even and at least 4, got {p}"
        )));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(EitError::InvalidInput(format!(
            "electrode coverage must lie strictly between 0 and 1, got {coverage}"
        )));
    }

    let rings = ((radius / target_h).round() as usize).max(1);
    let round_up = |count: usize| -> usize {
        if rotational_symmetry {
            count.div_ceil(p).max(1) * p
        } else {
            count
        }
    };
    let mut counts: Vec<usize> = (1..rings)
        .map(|k| round_up(((2.0 * PI * k as f64).round() as usize).max(6)))
        .collect();

    // Boundary ring: q edges per electrode period, e of them under the electrode.
    let q_min = ((2.0 * PI * rings as f64) / p as f64).ceil().max(2.0) as usize;
    let mut chosen = None;
    for q in q_min..=(4 * q_min).max(q_min + 8) {
        let e = (coverage * q as f64).round() as usize;
        if e == 0 || e >= q {
            continue;
        }
        // total electrode length may miss the target by at most one edge
        if (e as f64 - coverage * q as f64).abs() * p as f64 <= 1.0 + 1e-12 {
            chosen = Some((q, e));
            break;
        }
    }
    let (q, e) = chosen.ok_or_else(|| {
        EitError::InfeasibleGeometry(format!(
            "cannot fit {p} electrodes with coverage {coverage} on a boundary of at least {} edges; \
             each electrode arc would be shorter than one boundary edge or the coverage is not \
             representable within one edge",
            q_min * p
        ))
    })?;
    counts.push(q * p);

    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = Vec::with_capacity(counts.len());
    for (idx, &n_k) in counts.iter().enumerate() {
        let r = radius * (idx + 1) as f64 / rings as f64;
        ring_start.push(vertices.len());
        for j in 0..n_k {
            let theta = 2.0 * PI * j as f64 / n_k as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    // snap the boundary ring exactly onto the circle
    let outer = *ring_start.last().unwrap();
    for v in &mut vertices[outer..] {
        let s = radius / v[0].hypot(v[1]);
        v[0] *= s;
        v[1] *= s;
    }

    let mut triangles = Vec::new();
    let n1 = counts[0];
    for j in 0..n1 {
        triangles.push([0, ring_start[0] + j, ring_start[0] + (j + 1) % n1]);
    }
    for k in 0..counts.len() - 1 {
        stitch_rings(
            ring_start[k],
            counts[k],
            ring_start[k + 1],
            counts[k + 1],
            &mut triangles,
        );
    }

    // boundary edge i runs from outer vertex i to i + 1
    let electrodes: Vec<Vec<usize>> = (0..p).map(|j| (j * q..j * q + e).collect()).collect();
    let mesh = Mesh::new(vertices, triangles, None, electrodes)?;
    debug_assert_eq!(mesh.boundary_edges[0], [outer, outer + 1]);
    Ok(mesh)
}

/// Triangulates the annulus between two concentric rings by advancing
/// along whichever ring has the smaller next angle. Comparisons are done in
/// exact integer arithmetic so the result is deterministic and inherits
/// the rings' rotational symmetry.
fn stitch_rings(a0: usize, na: usize, b0: usize, nb: usize, out: &mut Vec<[usize; 3]>) {
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let advance_outer = j < nb && (i >= na || (j + 1) * na <= (i + 1) * nb);
        if advance_outer {
            out.push([a0 + i % na, b0 + j % nb, b0 + (j + 1) % nb]);
            j += 1;
        } else {
            out.push([a0 + i % na, b0 + j % nb, a0 + (i + 1) % na]);
            i += 1;
        }
    }
}
