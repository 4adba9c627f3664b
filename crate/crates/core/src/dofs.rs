//! Global numbering of the three discrete spaces: edge unknowns for the
//! electric field, nodal multiplier unknowns in the air region and nodal
//! conductivity unknowns in the conductor.

use crate::mesh::{FaceLabel, Region, TetMesh, TET_EDGES};

#[derive(Clone, Debug)]
pub struct DofMap {
    /// Free-edge index of each global edge, `None` for essential edges.
    pub edge_dof: Vec<Option<usize>>,
    /// Global edge of each free-edge index.
    pub free_edges: Vec<usize>,
    /// Multiplier index of each vertex.
    pub mult_dof: Vec<Option<usize>>,
    pub mult_vertices: Vec<usize>,
    /// Conductivity index of each vertex.
    pub sigma_dof: Vec<Option<usize>>,
    pub sigma_vertices: Vec<usize>,
    /// Global edges of the measurement surface, ascending.
    pub gamma_edges: Vec<usize>,
    /// Position of each global edge in `gamma_edges`.
    pub gamma_pos: Vec<Option<usize>>,
}

impl DofMap {
    pub fn num_free_edges(&self) -> usize {
        self.free_edges.len()
    }

    pub fn num_multipliers(&self) -> usize {
        self.mult_vertices.len()
    }

    /// Size of the saddle-point system.
    pub fn num_state(&self) -> usize {
        self.free_edges.len() + self.mult_vertices.len()
    }

    pub fn num_sigma(&self) -> usize {
        self.sigma_vertices.len()
    }

    pub fn is_essential(&self, edge: usize) -> bool {
        self.edge_dof[edge].is_none()
    }
}

pub fn build_dof_maps(mesh: &TetMesh) -> DofMap {
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();

    let mut essential = vec![false; ne];
    let mut gamma = vec![false; ne];
    for f in &mesh.boundary_faces {
        let [a, b, c] = f.vertices;
        for [p, q] in [[a, b], [a, c], [b, c]] {
            let e = mesh.edge_index(p, q).expect("face edge exists");
            match f.label {
                FaceLabel::GammaD => essential[e] = true,
                FaceLabel::Gamma => gamma[e] = true,
                FaceLabel::GammaOC => {}
            }
        }
    }

    let mut edge_dof = vec![None; ne];
    let mut free_edges = Vec::new();
    for e in 0..ne {
        if !essential[e] {
            edge_dof[e] = Some(free_edges.len());
            free_edges.push(e);
        }
    }

    // vertices touched by each region, and vertices on the excluded boundaries
    let mut in_air = vec![false; nv];
    let mut in_cond = vec![false; nv];
    for t in &mesh.tets {
        let flag = match t.region {
            Region::Air => &mut in_air,
            Region::Conductor => &mut in_cond,
        };
        for v in t.vertices {
            flag[v] = true;
        }
    }
    let mut on_outer_d = vec![false; nv];
    for f in mesh
        .boundary_faces
        .iter()
        .filter(|f| f.label == FaceLabel::GammaD)
    {
        for v in f.vertices {
            on_outer_d[v] = true;
        }
    }
    let mut on_interface = vec![false; nv];
    for f in &mesh.interface_faces {
        for v in f.vertices {
            on_interface[v] = true;
        }
    }

    let mut mult_dof = vec![None; nv];
    let mut mult_vertices = Vec::new();
    let mut sigma_dof = vec![None; nv];
    let mut sigma_vertices = Vec::new();
    for v in 0..nv {
        let excluded = on_outer_d[v] || on_interface[v];
        // a vertex of an air tet on the outer boundary lies on a wall of the
        // air region unless it is only on the top plane
        if in_air[v] && !excluded && !in_cond[v] {
            mult_dof[v] = Some(mult_vertices.len());
            mult_vertices.push(v);
        }
        if in_cond[v] && !excluded && !in_air[v] {
            sigma_dof[v] = Some(sigma_vertices.len());
            sigma_vertices.push(v);
        }
    }

    let gamma_edges: Vec<usize> = (0..ne).filter(|&e| gamma[e]).collect();
    let mut gamma_pos = vec![None; ne];
    for (i, &e) in gamma_edges.iter().enumerate() {
        gamma_pos[e] = Some(i);
    }

    DofMap {
        edge_dof,
        free_edges,
        mult_dof,
        mult_vertices,
        sigma_dof,
        sigma_vertices,
        gamma_edges,
        gamma_pos,
    }
}

/// Free-edge indices and orientation signs of the six local edges of `tet`.
pub fn local_edge_dofs(mesh: &TetMesh, dofs: &DofMap, tet: usize) -> [(Option<usize>, f64); 6] {
    let mut out = [(None, 0.0); 6];
    for l in 0..TET_EDGES.len() {
        out[l] = (dofs.edge_dof[mesh.tet_edges[tet][l]], mesh.edge_sign(tet, l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxSpec};

    fn mesh() -> TetMesh {
        build_box_mesh(&BoxSpec::new(
            [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 0.5]],
            [4, 4, 6],
            0.0,
            0.5,
        ))
        .unwrap()
    }

    fn near(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn edge_classification_by_coordinates() {
        let m = mesh();
        let d = build_dof_maps(&m);
        let mut n_free = 0;
        for (e, [a, b]) in m.edges.iter().enumerate() {
            let (pa, pb) = (m.vertices[*a], m.vertices[*b]);
            let on_plane = |axis: usize, val: f64| near(pa[axis], val) && near(pb[axis], val);
            let wall = on_plane(0, -1.0)
                || on_plane(0, 1.0)
                || on_plane(1, -1.0)
                || on_plane(1, 1.0)
                || on_plane(2, -1.0);
            assert_eq!(d.is_essential(e), wall, "edge {e}");
            let top = on_plane(2, 0.5);
            assert_eq!(d.gamma_pos[e].is_some(), top);
            if !wall {
                n_free += 1;
            }
        }
        assert_eq!(d.num_free_edges(), n_free);
        assert_eq!(
            d.num_free_edges() + (0..m.num_edges()).filter(|&e| d.is_essential(e)).count(),
            m.num_edges()
        );
    }

    #[test]
    fn vertex_classification_by_coordinates() {
        let m = mesh();
        let d = build_dof_maps(&m);
        for (v, p) in m.vertices.iter().enumerate() {
            let lateral = near(p[0].abs(), 1.0) || near(p[1].abs(), 1.0);
            let mult = !lateral && p[2] > 1e-12;
            let sigma = !lateral && p[2] < -1e-12 && !near(p[2], -1.0);
            assert_eq!(d.mult_dof[v].is_some(), mult, "vertex {v} at {p:?}");
            assert_eq!(d.sigma_dof[v].is_some(), sigma, "vertex {v} at {p:?}");
            if near(p[2], 0.0) {
                assert!(d.mult_dof[v].is_none() && d.sigma_dof[v].is_none());
            }
        }
    }

    #[test]
    fn top_edges_are_free() {
        let m = mesh();
        let d = build_dof_maps(&m);
        let interior_top = d
            .gamma_edges
            .iter()
            .filter(|&&e| {
                let [a, b] = m.edges[e];
                [a, b].iter().all(|&v| {
                    let p = m.vertices[v];
                    p[0].abs() < 1.0 - 1e-12 || p[1].abs() < 1.0 - 1e-12
                })
            })
            .count();
        assert!(interior_top > 0);
        for &e in &d.gamma_edges {
            let [a, b] = m.edges[e];
            let (pa, pb) = (m.vertices[a], m.vertices[b]);
            let on_wall = (near(pa[0].abs(), 1.0) && near(pb[0], pa[0]))
                || (near(pa[1].abs(), 1.0) && near(pb[1], pa[1]));
            assert_eq!(d.is_essential(e), on_wall);
        }
    }
}
