//! Structured tetrahedral meshes of layered boxes.
//!
//! The box is cut into `nx * ny * nz` hexahedral cells and every cell is
//! split into six tetrahedra sharing the cell diagonal from its lowest to
//! its highest corner (Kuhn/Freudenthal split). The split is identical in
//! every cell, so neighbouring cells agree on their shared faces.
//!
//! The layer above `z_interface` is the non-conducting region (air); the
//! rest is the conductor. The top plane `z_top` is the measurement surface.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Local edge table of a tetrahedron, as pairs of local vertex indices.
pub const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local faces of a tetrahedron (the face opposite vertex `i` is `TET_FACES[i]`).
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Air,
    Conductor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaceLabel {
    /// Measurement surface (top plane).
    Gamma,
    /// Remaining outer boundary, carrying `n x E = 0`.
    GammaD,
    /// Interface between air and conductor.
    GammaOC,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tet {
    pub vertices: [usize; 4],
    pub region: Region,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub vertices: [usize; 3],
    pub label: FaceLabel,
}

/// Parameters of a layered box mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub bounds: [[f64; 2]; 3],
    pub divisions: [usize; 3],
    pub z_interface: f64,
    pub z_top: f64,
}

impl BoxSpec {
    pub fn new(bounds: [[f64; 2]; 3], divisions: [usize; 3], z_interface: f64, z_top: f64) -> Self {
        Self {
            bounds,
            divisions,
            z_interface,
            z_top,
        }
    }

    pub fn spacing(&self) -> [f64; 3] {
        let mut h = [0.0; 3];
        for a in 0..3 {
            h[a] = (self.bounds[a][1] - self.bounds[a][0]) / self.divisions[a] as f64;
        }
        h
    }

    /// Same box with every division count doubled.
    pub fn refined(&self) -> Self {
        let mut s = self.clone();
        for d in &mut s.divisions {
            *d *= 2;
        }
        s
    }

    /// Index of the mesh plane along `axis` that matches `value`, if any.
    pub fn plane_index(&self, axis: usize, value: f64) -> Option<usize> {
        let [lo, hi] = self.bounds[axis];
        let n = self.divisions[axis];
        let t = (value - lo) / (hi - lo) * n as f64;
        let k = t.round();
        if k < 0.0 || k > n as f64 || (t - k).abs() > 1e-9 * n.max(1) as f64 {
            return None;
        }
        Some(k as usize)
    }

    fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let [lo, hi] = self.bounds[a];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Mesh(format!(
                    "degenerate bounds along axis {a}: [{lo}, {hi}]"
                )));
            }
            if self.divisions[a] == 0 {
                return Err(Error::Mesh(format!("zero divisions along axis {a}")));
            }
        }
        if !(self.z_interface < self.z_top) {
            return Err(Error::Mesh(format!(
                "z_interface = {} must lie below z_top = {}",
                self.z_interface, self.z_top
            )));
        }
        match self.plane_index(2, self.z_top) {
            Some(k) if k == self.divisions[2] => {}
            _ => {
                return Err(Error::Mesh(format!(
                    "top plane z_top = {} is not the upper mesh plane z = {}",
                    self.z_top, self.bounds[2][1]
                )))
            }
        }
        match self.plane_index(2, self.z_interface) {
            Some(k) if k < self.divisions[2] => Ok(()),
            _ => Err(Error::Mesh(format!(
                "interface plane z_interface = {} is not a mesh plane below the top (spacing {})",
                self.z_interface,
                self.spacing()[2]
            ))),
        }
    }
}

/// Tetrahedral mesh with region tags, labelled boundary faces and a global
/// edge numbering. Global edges run from the lower to the higher vertex index.
#[derive(Clone, Debug)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<Tet>,
    pub edges: Vec<[usize; 2]>,
    /// Global edge index of each local edge (see [`TET_EDGES`]).
    pub tet_edges: Vec<[usize; 6]>,
    pub boundary_faces: Vec<Face>,
    pub interface_faces: Vec<Face>,
    spec: BoxSpec,
    k_interface: usize,
    edge_lookup: HashMap<[usize; 2], usize>,
}

/// Builds the layered box mesh.
pub fn build_box_mesh(spec: &BoxSpec) -> Result<TetMesh> {
    spec.validate()?;
    let [nx, ny, nz] = spec.divisions;
    let h = spec.spacing();
    let k_interface = spec.plane_index(2, spec.z_interface).expect("validated");

    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                // snap the last plane exactly onto the bound
                let coord = |a: usize, n: usize, idx: usize| {
                    if idx == n {
                        spec.bounds[a][1]
                    } else {
                        spec.bounds[a][0] + h[a] * idx as f64
                    }
                };
                vertices.push([coord(0, nx, i), coord(1, ny, j), coord(2, nz, k)]);
            }
        }
    }

    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        let region = if k >= k_interface {
            Region::Air
        } else {
            Region::Conductor
        };
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut vs = [vid(c[0], c[1], c[2]); 4];
                    for (step, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        vs[step + 1] = vid(c[0], c[1], c[2]);
                    }
                    if signed_volume(&vertices, &vs) < 0.0 {
                        vs.swap(2, 3);
                    }
                    tets.push(Tet {
                        vertices: vs,
                        region,
                    });
                }
            }
        }
    }

    let mut edge_lookup: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut tet_edges = Vec::with_capacity(tets.len());
    for t in &tets {
        let mut ids = [0; 6];
        for (l, [a, b]) in TET_EDGES.iter().enumerate() {
            let key = sorted_pair(t.vertices[*a], t.vertices[*b]);
            let next = edges.len();
            let id = *edge_lookup.entry(key).or_insert(next);
            if id == next {
                edges.push(key);
            }
            ids[l] = id;
        }
        tet_edges.push(ids);
    }

    // faces: count owners, remember the first owner's region
    let mut face_owners: HashMap<[usize; 3], (usize, Region, Option<Region>)> = HashMap::new();
    let mut face_order = Vec::new();
    for t in &tets {
        for f in TET_FACES {
            let key = sorted_triple([t.vertices[f[0]], t.vertices[f[1]], t.vertices[f[2]]]);
            match face_owners.get_mut(&key) {
                Some(entry) => {
                    entry.0 += 1;
                    entry.2 = Some(t.region);
                }
                None => {
                    face_owners.insert(key, (1, t.region, None));
                    face_order.push(key);
                }
            }
        }
    }
    let k_top = nz;
    let mut boundary_faces = Vec::new();
    let mut interface_faces = Vec::new();
    for key in face_order {
        let (count, r0, r1) = face_owners[&key];
        match count {
            1 => {
                let on_top = key.iter().all(|&v| v / ((nx + 1) * (ny + 1)) == k_top);
                boundary_faces.push(Face {
                    vertices: key,
                    label: if on_top {
                        FaceLabel::Gamma
                    } else {
                        FaceLabel::GammaD
                    },
                });
            }
            2 => {
                if Some(r0) != r1 {
                    interface_faces.push(Face {
                        vertices: key,
                        label: FaceLabel::GammaOC,
                    });
                }
            }
            n => {
                return Err(Error::Mesh(format!(
                    "face {key:?} shared by {n} elements"
                )))
            }
        }
    }

    Ok(TetMesh {
        vertices,
        tets,
        edges,
        tet_edges,
        boundary_faces,
        interface_faces,
        spec: spec.clone(),
        k_interface,
        edge_lookup,
    })
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn sorted_triple(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

fn signed_volume(vertices: &[[f64; 3]], vs: &[usize; 4]) -> f64 {
    let p0 = vertices[vs[0]];
    let d = |v: usize| {
        let p = vertices[v];
        [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]]
    };
    let (a, b, c) = (d(vs[1]), d(vs[2]), d(vs[3]));
    (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0]))
        / 6.0
}

impl TetMesh {
    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Grid index `(i, j, k)` of a vertex.
    pub fn grid_index(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.spec.divisions;
        [v % (nx + 1), (v / (nx + 1)) % (ny + 1), v / ((nx + 1) * (ny + 1))]
    }

    /// Vertex at grid index `(i, j, k)`.
    pub fn vertex_at(&self, g: [usize; 3]) -> usize {
        let [nx, ny, _] = self.spec.divisions;
        g[0] + (nx + 1) * (g[1] + (ny + 1) * g[2])
    }

    /// Mesh plane index of the air/conductor interface.
    pub fn interface_layer(&self) -> usize {
        self.k_interface
    }

    /// Global index of the edge joining `a` and `b`.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&sorted_pair(a, b)).copied()
    }

    /// Orientation of local edge `l` of `tet` relative to its global edge.
    pub fn edge_sign(&self, tet: usize, l: usize) -> f64 {
        let vs = self.tets[tet].vertices;
        let [a, b] = TET_EDGES[l];
        if vs[a] < vs[b] {
            1.0
        } else {
            -1.0
        }
    }

    pub fn tet_coords(&self, tet: usize) -> [[f64; 3]; 4] {
        self.tets[tet].vertices.map(|v| self.vertices[v])
    }

    pub fn gamma_faces(&self) -> impl Iterator<Item = &Face> {
        self.boundary_faces
            .iter()
            .filter(|f| f.label == FaceLabel::Gamma)
    }

    /// Element containing `p` strictly in its interior, or `None` when `p` is
    /// outside the mesh or on an element boundary (within `tol` in barycentric
    /// coordinates).
    pub fn locate_strict(&self, p: [f64; 3], tol: f64) -> Locate {
        let spec = &self.spec;
        let h = spec.spacing();
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let t = (p[a] - spec.bounds[a][0]) / h[a];
            if t < 0.0 || t > spec.divisions[a] as f64 {
                return Locate::Outside;
            }
            cell[a] = (t.floor() as usize).min(spec.divisions[a] - 1);
        }
        let [nx, ny, _] = spec.divisions;
        let first = 6 * (cell[0] + nx * (cell[1] + ny * cell[2]));
        for t in first..first + 6 {
            let lam = barycentric(&self.tet_coords(t), p);
            if lam.iter().all(|&l| l > tol) {
                return Locate::Inside(t);
            }
            if lam.iter().all(|&l| l >= -tol) {
                return Locate::OnBoundary;
            }
        }
        Locate::OnBoundary
    }

    /// Stable digest of the mesh geometry and topology (16 hex digits).
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        hasher.update((self.tets.len() as u64).to_le_bytes());
        for t in &self.tets {
            for v in t.vertices {
                hasher.update((v as u64).to_le_bytes());
            }
            hasher.update([matches!(t.region, Region::Air) as u8]);
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locate {
    Inside(usize),
    OnBoundary,
    Outside,
}

/// Barycentric coordinates of `p` with respect to a tetrahedron.
pub fn barycentric(tet: &[[f64; 3]; 4], p: [f64; 3]) -> [f64; 4] {
    let vol = |a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]| {
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
        u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
            + u[2] * (v[0] * w[1] - v[1] * w[0])
    };
    let [a, b, c, d] = *tet;
    let total = vol(a, b, c, d);
    [
        vol(p, b, c, d) / total,
        vol(a, p, c, d) / total,
        vol(a, b, p, d) / total,
        vol(a, b, c, p) / total,
    ]
}
