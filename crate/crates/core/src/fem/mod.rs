//! Finite-element spaces and global assembly.

pub mod element;
pub mod quadrature;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dofs::{build_dof_maps, DofMap};
use crate::error::{Error, Result};
use crate::linalg::{SparseMatrix, C64};
use crate::mesh::{Face, FaceLabel, Locate, Region, TetMesh};

pub use element::{
    face_tangential_mass, local_curl_curl, local_edge_mass, local_grad_coupling, local_incidence,
    local_p1, TetGeometry, Vec3, TRI_EDGES,
};

/// Physical coefficients, piecewise constant per region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Material {
    pub mu: f64,
    /// Permeability of the conductor when it differs from the air value.
    pub mu_conductor: Option<f64>,
    pub eps: f64,
    pub sigma0: f64,
    pub omega: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            mu: 1.0,
            mu_conductor: None,
            eps: 1.0,
            sigma0: 1.0,
            omega: 0.79,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let mu_c = self.mu_conductor.unwrap_or(self.mu);
        if !(self.mu > 0.0 && mu_c > 0.0 && mu_c.is_finite() && self.mu.is_finite()) {
            return Err(Error::Config("mu must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config("sigma0 must be nonnegative".into()));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::Config("omega must be positive".into()));
        }
        Ok(())
    }

    pub fn mu_in(&self, region: Region) -> f64 {
        match region {
            Region::Air => self.mu,
            Region::Conductor => self.mu_conductor.unwrap_or(self.mu),
        }
    }
}

/// Nodal anomaly conductivity, one value per conductivity unknown. The field
/// vanishes on the conductor boundary and in the air.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaField {
    pub values: Vec<f64>,
}

impl SigmaField {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    /// Values at the four vertices of `tet` (zero at constrained vertices).
    pub fn tet_values(&self, disc: &Discretization, tet: usize) -> [f64; 4] {
        disc.mesh.tets[tet]
            .vertices
            .map(|v| disc.dofs.sigma_dof[v].map_or(0.0, |i| self.values[i]))
    }

    /// Value at every mesh vertex.
    pub fn vertex_values(&self, dofs: &DofMap, num_vertices: usize) -> Vec<f64> {
        (0..num_vertices)
            .map(|v| dofs.sigma_dof[v].map_or(0.0, |i| self.values[i]))
            .collect()
    }
}

/// A mesh together with its unknown numbering and element geometry.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: TetMesh,
    pub dofs: DofMap,
    geoms: Vec<TetGeometry>,
}

impl Discretization {
    pub fn new(mesh: TetMesh) -> Result<Self> {
        let geoms = (0..mesh.tets.len())
            .map(|t| TetGeometry::new(mesh.tet_coords(t), t))
            .collect::<Result<Vec<_>>>()?;
        let dofs = build_dof_maps(&mesh);
        Ok(Self { mesh, dofs, geoms })
    }

    pub fn geometry(&self, tet: usize) -> &TetGeometry {
        &self.geoms[tet]
    }

    pub fn num_tets(&self) -> usize {
        self.geoms.len()
    }

    pub fn conductor_tets(&self) -> Vec<usize> {
        self.tets_in(Region::Conductor)
    }

    pub fn tets_in(&self, region: Region) -> Vec<usize> {
        (0..self.num_tets())
            .filter(|&t| self.mesh.tets[t].region == region)
            .collect()
    }

    /// Free-edge index and orientation sign of each local edge of `tet`.
    pub fn local_edges(&self, tet: usize) -> [(Option<usize>, f64); 6] {
        crate::dofs::local_edge_dofs(&self.mesh, &self.dofs, tet)
    }

    /// Signed local coefficients of a field given on the free edges.
    pub fn local_coeffs(&self, tet: usize, field: &[C64]) -> [C64; 6] {
        self.local_edges(tet)
            .map(|(d, s)| d.map_or(C64::new(0.0, 0.0), |i| field[i] * s))
    }

    /// Extends a free-edge vector by zeros on the essential edges.
    pub fn full_edge_vector(&self, free: &[C64]) -> Vec<C64> {
        self.dofs
            .edge_dof
            .iter()
            .map(|d| d.map_or(C64::new(0.0, 0.0), |i| free[i]))
            .collect()
    }

    /// ε-weighted coupling of the six local Whitney functions with the four
    /// nodal gradients of an air element.
    pub fn tet_grad_coupling(&self, tet: usize, eps: f64) -> Result<[[f64; 4]; 6]> {
        if self.mesh.tets[tet].region != Region::Air {
            return Err(Error::Usage(format!(
                "gradient coupling requested on conductor element {tet}"
            )));
        }
        Ok(local_grad_coupling(&self.geoms[tet], eps))
    }
}

/// Tangential mass of a measurement-surface face, local edges ordered as
/// [`TRI_EDGES`] over the face vertices.
pub fn gamma_face_mass(mesh: &TetMesh, face: &Face) -> Result<[[f64; 3]; 3]> {
    if face.label != FaceLabel::Gamma {
        return Err(Error::Usage(format!(
            "face {:?} is not on the measurement surface",
            face.vertices
        )));
    }
    face_tangential_mass(face.vertices.map(|v| mesh.vertices[v]))
}

/// Complex symmetric matrix `[[A, Bᵀ], [B, 0]]` over free edges followed by
/// multiplier unknowns.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub matrix: SparseMatrix<C64>,
    pub num_edges: usize,
    pub num_multipliers: usize,
}

/// Scatters local 6x6 edge matrices of the selected elements into a
/// free-edge matrix. Local matrices are computed in parallel and summed in
/// element order.
fn scatter_edge<F>(disc: &Discretization, tets: &[usize], local: F) -> SparseMatrix<f64>
where
    F: Fn(usize) -> [[f64; 6]; 6] + Sync,
{
    let locals: Vec<[[f64; 6]; 6]> = tets.par_iter().map(|&t| local(t)).collect();
    let mut trip = Vec::with_capacity(36 * tets.len());
    for (&t, m) in tets.iter().zip(&locals) {
        let le = disc.local_edges(t);
        for i in 0..6 {
            let (Some(r), sr) = le[i] else { continue };
            for j in 0..6 {
                let (Some(c), sc) = le[j] else { continue };
                trip.push((r, c, sr * sc * m[i][j]));
            }
        }
    }
    let n = disc.dofs.num_free_edges();
    SparseMatrix::from_triplets(n, n, &trip)
}

/// `∫ μ⁻¹ curl Ni · curl Nj` over all elements.
pub fn curl_curl_matrix(disc: &Discretization, material: &Material) -> SparseMatrix<f64> {
    let all: Vec<usize> = (0..disc.num_tets()).collect();
    scatter_edge(disc, &all, |t| {
        local_curl_curl(disc.geometry(t), material.mu_in(disc.mesh.tets[t].region))
    })
}

/// Unweighted edge mass over all elements.
pub fn edge_mass_matrix(disc: &Discretization) -> SparseMatrix<f64> {
    let all: Vec<usize> = (0..disc.num_tets()).collect();
    scatter_edge(disc, &all, |t| local_edge_mass(disc.geometry(t), [1.0; 4]))
}

/// `∫ (c + σ) Ni · Nj` over the conductor, with `c` a constant offset.
pub fn conductor_mass_matrix(disc: &Discretization, offset: f64, sigma: &SigmaField) -> SparseMatrix<f64> {
    scatter_edge(disc, &disc.conductor_tets(), |t| {
        let w = sigma.tet_values(disc, t).map(|s| s + offset);
        local_edge_mass(disc.geometry(t), w)
    })
}

/// Multiplier-by-free-edge block `B(p, k) = ∫ ε Nk · ∇λp` over the air.
pub fn gradient_coupling_matrix(disc: &Discretization, material: &Material) -> SparseMatrix<f64> {
    let air = disc.tets_in(Region::Air);
    let locals: Vec<[[f64; 4]; 6]> = air
        .par_iter()
        .map(|&t| local_grad_coupling(disc.geometry(t), material.eps))
        .collect();
    let mut trip = Vec::new();
    for (&t, b) in air.iter().zip(&locals) {
        let le = disc.local_edges(t);
        let vs = disc.mesh.tets[t].vertices;
        for i in 0..6 {
            let (Some(k), s) = le[i] else { continue };
            for p in 0..4 {
                if let Some(m) = disc.dofs.mult_dof[vs[p]] {
                    trip.push((m, k, s * b[i][p]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(disc.dofs.num_multipliers(), disc.dofs.num_free_edges(), &trip)
}

/// State matrix for the anomaly `sigma`:
/// `A = K - iω M(σ₀ + σ)` coupled with the air multiplier block.
pub fn assemble_state_system(
    disc: &Discretization,
    material: &Material,
    sigma: &SigmaField,
) -> Result<SaddleSystem> {
    if sigma.values.len() != disc.dofs.num_sigma() {
        return Err(Error::Dimension {
            expected: disc.dofs.num_sigma(),
            got: sigma.values.len(),
        });
    }
    let k = curl_curl_matrix(disc, material);
    let m = conductor_mass_matrix(disc, material.sigma0, sigma);
    let b = gradient_coupling_matrix(disc, material);
    Ok(combine_saddle(disc, &k, &m, &b, material.omega))
}

fn combine_saddle(
    disc: &Discretization,
    k: &SparseMatrix<f64>,
    m: &SparseMatrix<f64>,
    b: &SparseMatrix<f64>,
    omega: f64,
) -> SaddleSystem {
    let ne = disc.dofs.num_free_edges();
    let nm = disc.dofs.num_multipliers();
    let mut trip: Vec<(usize, usize, C64)> = Vec::with_capacity(k.nnz() + m.nnz() + 2 * b.nnz());
    trip.extend(k.iter().map(|(r, c, v)| (r, c, C64::new(v, 0.0))));
    trip.extend(m.iter().map(|(r, c, v)| (r, c, C64::new(0.0, -omega * v))));
    for (p, e, v) in b.iter() {
        trip.push((ne + p, e, C64::new(v, 0.0)));
        trip.push((e, ne + p, C64::new(v, 0.0)));
    }
    SaddleSystem {
        matrix: SparseMatrix::from_triplets(ne + nm, ne + nm, &trip),
        num_edges: ne,
        num_multipliers: nm,
    }
}

/// P1 stiffness and mass over the conductor, restricted to the
/// conductivity unknowns.
pub fn conductor_p1_matrices(disc: &Discretization) -> (SparseMatrix<f64>, SparseMatrix<f64>) {
    let cond = disc.conductor_tets();
    let locals: Vec<_> = cond
        .par_iter()
        .map(|&t| local_p1(disc.geometry(t), 1.0))
        .collect();
    let mut tk = Vec::new();
    let mut tm = Vec::new();
    for (&t, (k, m)) in cond.iter().zip(&locals) {
        let ids = disc.mesh.tets[t].vertices.map(|v| disc.dofs.sigma_dof[v]);
        for i in 0..4 {
            let Some(r) = ids[i] else { continue };
            for j in 0..4 {
                let Some(c) = ids[j] else { continue };
                tk.push((r, c, k[i][j]));
                tm.push((r, c, m[i][j]));
            }
        }
    }
    let n = disc.dofs.num_sigma();
    (
        SparseMatrix::from_triplets(n, n, &tk),
        SparseMatrix::from_triplets(n, n, &tm),
    )
}

/// Tangential mass on the measurement surface over all its edges
/// (indexed by position in `DofMap::gamma_edges`).
pub fn gamma_mass_matrix(disc: &Discretization) -> Result<SparseMatrix<f64>> {
    let mesh = &disc.mesh;
    let mut trip = Vec::new();
    for face in mesh.gamma_faces() {
        let m = gamma_face_mass(mesh, face)?;
        let loc: Vec<(usize, f64)> = TRI_EDGES
            .iter()
            .map(|&[a, b]| {
                let (va, vb) = (face.vertices[a], face.vertices[b]);
                let e = mesh.edge_index(va, vb).expect("face edge exists");
                let pos = disc.dofs.gamma_pos[e].expect("gamma face edge");
                (pos, if va < vb { 1.0 } else { -1.0 })
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                trip.push((loc[i].0, loc[j].0, loc[i].1 * loc[j].1 * m[i][j]));
            }
        }
    }
    let n = disc.dofs.gamma_edges.len();
    Ok(SparseMatrix::from_triplets(n, n, &trip))
}

/// Signed edge/vertex incidence from all vertices to free edges: the edge
/// coefficients of the gradient of a nodal P1 function.
pub fn discrete_gradient(disc: &Discretization) -> SparseMatrix<f64> {
    let mut trip = Vec::new();
    for (e, [a, b]) in disc.mesh.edges.iter().enumerate() {
        if let Some(i) = disc.dofs.edge_dof[e] {
            trip.push((i, *a, -1.0));
            trip.push((i, *b, 1.0));
        }
    }
    SparseMatrix::from_triplets(disc.dofs.num_free_edges(), disc.mesh.num_vertices(), &trip)
}

/// Barycentric tolerance used to reject source points on element boundaries.
pub const SOURCE_TOL: f64 = 1e-9;

/// Load of point dipoles `J = curl(Σ δ(x - xp) d)`: entry
/// `iω Σp d · curl Nj(xp)` on every free edge; zero on multiplier rows.
pub fn assemble_dipole_rhs(
    disc: &Discretization,
    points: &[Vec3],
    direction: Vec3,
    omega: f64,
) -> Result<Vec<C64>> {
    let mut rhs = vec![C64::new(0.0, 0.0); disc.dofs.num_state()];
    for (index, &p) in points.iter().enumerate() {
        let tet = match disc.mesh.locate_strict(p, SOURCE_TOL) {
            Locate::Inside(t) => t,
            Locate::OnBoundary => return Err(Error::SourceOnBoundary { index, point: p }),
            Locate::Outside => {
                return Err(Error::Mesh(format!(
                    "source point {index} at {p:?} lies outside the mesh"
                )))
            }
        };
        let curls = disc.geometry(tet).curls();
        for (l, (dof, s)) in disc.local_edges(tet).into_iter().enumerate() {
            if let Some(j) = dof {
                rhs[j] += C64::new(0.0, omega * s * element::dot(direction, curls[l]));
            }
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxSpec};

    fn disc() -> Discretization {
        let spec = BoxSpec::new([[-1.0, 1.0], [-1.0, 1.0], [-1.0, 0.5]], [4, 4, 6], 0.0, 0.5);
        Discretization::new(build_box_mesh(&spec).unwrap()).unwrap()
    }

    fn sigma_ramp(d: &Discretization) -> SigmaField {
        SigmaField {
            values: d
                .dofs
                .sigma_vertices
                .iter()
                .map(|&v| 0.3 + d.mesh.vertices[v][0] - 0.5 * d.mesh.vertices[v][2])
                .collect(),
        }
    }

    #[test]
    fn state_matrix_is_complex_symmetric() {
        let d = disc();
        let s = assemble_state_system(&d, &Material::default(), &sigma_ramp(&d)).unwrap();
        assert_eq!(s.matrix.symmetry_defect(), 0.0);
        assert_eq!(s.matrix.nrows(), d.dofs.num_state());
    }

    #[test]
    fn imaginary_part_only_on_conductor_edges() {
        let d = disc();
        let s = assemble_state_system(&d, &Material::default(), &SigmaField::zeros(d.dofs.num_sigma())).unwrap();
        let mut cond_edge = vec![false; d.dofs.num_free_edges()];
        for t in d.conductor_tets() {
            for (dof, _) in d.local_edges(t) {
                if let Some(i) = dof {
                    cond_edge[i] = true;
                }
            }
        }
        let mut seen = 0;
        for (r, c, v) in s.matrix.iter() {
            if v.im != 0.0 {
                assert!(r < s.num_edges && c < s.num_edges);
                assert!(cond_edge[r] && cond_edge[c]);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn curl_curl_annihilates_gradients() {
        let d = disc();
        let k = curl_curl_matrix(&d, &Material::default());
        let g = discrete_gradient(&d);
        let p: Vec<f64> = (0..d.mesh.num_vertices()).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        // vertices on the essential boundary only feed essential edges
        let p: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(v, &x)| {
                let q = d.mesh.vertices[v];
                let wall = (q[0].abs() - 1.0).abs() < 1e-12 || (q[1].abs() - 1.0).abs() < 1e-12 || (q[2] + 1.0).abs() < 1e-12;
                if wall { 0.0 } else { x }
            })
            .collect();
        let gp = g.mul_vec(&p);
        let kgp = k.mul_vec(&gp);
        let scale = crate::linalg::norm(&gp) * k.iter().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
        assert!(crate::linalg::norm(&kgp) < 1e-13 * scale);
    }

    #[test]
    fn sigma_enters_only_through_mass() {
        let d = disc();
        let mat = Material::default();
        let s1 = sigma_ramp(&d);
        let tau = SigmaField {
            values: (0..s1.values.len()).map(|i| (i % 5) as f64 * 0.1).collect(),
        };
        let s2 = SigmaField {
            values: s1.values.iter().zip(&tau.values).map(|(a, b)| a + b).collect(),
        };
        let a1 = assemble_state_system(&d, &mat, &s1).unwrap().matrix;
        let a2 = assemble_state_system(&d, &mat, &s2).unwrap().matrix;
        let mt = conductor_mass_matrix(&d, 0.0, &tau);
        let diff = &a2 - &a1;
        for (r, c, v) in diff.iter() {
            let expect = if r < mt.nrows() && c < mt.ncols() { -mat.omega * mt.get(r, c) } else { 0.0 };
            assert!(v.re.abs() < 1e-15);
            assert!((v.im - expect).abs() < 1e-14, "{r} {c}");
        }
        for (r, c, v) in mt.iter() {
            assert!((diff.get(r, c).im + mat.omega * v).abs() < 1e-14);
        }
    }

    #[test]
    fn dipole_load_orthogonal_to_gradients() {
        let d = disc();
        let pts = [[0.013, 0.029, 0.26], [-0.41, 0.37, 0.11], [0.6, -0.55, 0.33]];
        let rhs = assemble_dipole_rhs(&d, &pts, [1.0, 0.0, 0.0], 0.79).unwrap();
        assert!(rhs[d.dofs.num_free_edges()..].iter().all(|z| z.norm() == 0.0));
        let g = discrete_gradient(&d);
        let scale = crate::linalg::norm(&rhs);
        assert!(scale > 0.0);
        for v in 0..d.mesh.num_vertices() {
            let dot: C64 = g.iter().filter(|&(_, c, _)| c == v).map(|(r, _, x)| rhs[r] * x).sum();
            assert!(dot.norm() < 1e-13 * scale);
        }
    }

    #[test]
    fn dipole_load_supported_on_source_elements() {
        let d = disc();
        let p = [0.013, 0.029, 0.26];
        let rhs = assemble_dipole_rhs(&d, &[p], [0.0, 1.0, 0.0], 1.0).unwrap();
        let Locate::Inside(t) = d.mesh.locate_strict(p, SOURCE_TOL) else { panic!() };
        let own: Vec<usize> = d.local_edges(t).iter().filter_map(|x| x.0).collect();
        for (i, z) in rhs.iter().enumerate() {
            if !own.contains(&i) {
                assert_eq!(z.norm(), 0.0);
            }
        }
    }

    #[test]
    fn dipole_on_face_rejected() {
        let d = disc();
        let err = assemble_dipole_rhs(&d, &[[0.11, 0.23, 0.31], [0.0, 0.0, 0.25]], [1.0, 0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::SourceOnBoundary { index: 1, .. }));
    }

    #[test]
    fn gamma_mass_covers_face_edges() {
        let d = disc();
        let m = gamma_mass_matrix(&d).unwrap();
        let mut expected = std::collections::BTreeSet::new();
        for f in d.mesh.gamma_faces() {
            let [a, b, c] = f.vertices;
            for (p, q) in [(a, b), (a, c), (b, c)] {
                expected.insert(d.mesh.edge_index(p, q).unwrap());
            }
        }
        assert_eq!(expected.into_iter().collect::<Vec<_>>(), d.dofs.gamma_edges);
        assert_eq!(m.symmetry_defect(), 0.0);
        // total tangential mass of a constant unit field along x equals the area
        let ux: Vec<f64> = d
            .dofs
            .gamma_edges
            .iter()
            .map(|&e| {
                let [a, b] = d.mesh.edges[e];
                d.mesh.vertices[b][0] - d.mesh.vertices[a][0]
            })
            .collect();
        let q: f64 = ux.iter().zip(m.mul_vec(&ux)).map(|(a, b)| a * b).sum();
        assert!((q - 4.0).abs() < 1e-12);
    }

    #[test]
    fn p1_conductor_matrices_reproduce_integrals() {
        let d = disc();
        let (k, m) = conductor_p1_matrices(&d);
        // the sigma space vanishes on the conductor boundary; a bubble-like
        // nodal function f = (1-x²)(1-y²)(-z)(1+z) sampled at the nodes
        let f: Vec<f64> = d
            .dofs
            .sigma_vertices
            .iter()
            .map(|&v| {
                let p = d.mesh.vertices[v];
                (1.0 - p[0] * p[0]) * (1.0 - p[1] * p[1]) * (-p[2]) * (1.0 + p[2])
            })
            .collect();
        let mf = m.mul_vec(&f);
        let kf = k.mul_vec(&f);
        assert!(f.iter().zip(&mf).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        assert!(f.iter().zip(&kf).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        assert_eq!(k.symmetry_defect(), 0.0);
        assert_eq!(m.symmetry_defect(), 0.0);
    }

    #[test]
    fn grad_coupling_rejects_conductor() {
        let d = disc();
        let c = d.conductor_tets()[0];
        assert!(matches!(d.tet_grad_coupling(c, 1.0), Err(Error::Usage(_))));
        let a = d.tets_in(Region::Air)[0];
        assert!(d.tet_grad_coupling(a, 1.0).is_ok());
    }

    #[test]
    fn gamma_face_mass_rejects_other_faces() {
        let d = disc();
        let f = d.mesh.boundary_faces.iter().find(|f| f.label == FaceLabel::GammaD).unwrap();
        assert!(gamma_face_mass(&d.mesh, f).is_err());
    }

    #[test]
    fn assembly_is_deterministic() {
        let d = disc();
        let s = sigma_ramp(&d);
        let a = assemble_state_system(&d, &Material::default(), &s).unwrap();
        let b = assemble_state_system(&d, &Material::default(), &s).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }
}
