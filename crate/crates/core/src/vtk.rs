//! Legacy ASCII VTK output.

use std::io::Write;

use crate::fem::Discretization;
use crate::linalg::C64;
use crate::mesh::TetMesh;

const VTK_TETRA: u8 = 10;

/// Writes the mesh as an unstructured grid with named point and cell scalars.
pub fn write_vtk(
    mut w: impl Write,
    title: &str,
    mesh: &TetMesh,
    point_data: &[(&str, &[f64])],
    cell_data: &[(&str, &[f64])],
) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for p in &mesh.vertices {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    let nt = mesh.tets.len();
    writeln!(w, "CELLS {} {}", nt, 5 * nt)?;
    for t in &mesh.tets {
        let [a, b, c, d] = t.vertices;
        writeln!(w, "4 {a} {b} {c} {d}")?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "{VTK_TETRA}")?;
    }
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, values) in point_data {
            scalars(&mut w, name, values)?;
        }
    }
    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {nt}")?;
        for (name, values) in cell_data {
            scalars(&mut w, name, values)?;
        }
    }
    w.flush()
}

fn scalars(w: &mut impl Write, name: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Magnitude of the interpolated complex field at each element centroid.
pub fn centroid_magnitude(disc: &Discretization, e: &[C64]) -> Vec<f64> {
    (0..disc.num_tets())
        .map(|t| {
            let n = disc.geometry(t).whitney([0.25; 4]);
            let c = disc.local_coeffs(t, e);
            let mut v = [C64::new(0.0, 0.0); 3];
            for l in 0..6 {
                for k in 0..3 {
                    v[k] += c[l] * n[l][k];
                }
            }
            v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxSpec};

    #[test]
    fn layout() {
        let mesh = build_box_mesh(&BoxSpec::new([[0.0, 1.0]; 3], [1, 1, 1], 0.0, 1.0)).unwrap();
        let pd = vec![1.5; 8];
        let cd = vec![0.0; 6];
        let mut buf = Vec::new();
        write_vtk(&mut buf, "t", &mesh, &[("sigma", &pd)], &[("E_abs", &cd)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[4], "POINTS 8 double");
        assert!(s.contains("CELLS 6 30\n"));
        assert!(s.contains("CELL_TYPES 6\n10\n10\n"));
        assert!(s.contains("POINT_DATA 8\nSCALARS sigma double 1\nLOOKUP_TABLE default\n1.5\n"));
        assert!(s.contains("CELL_DATA 6\nSCALARS E_abs double 1\n"));
    }

    #[test]
    fn constant_field_magnitude() {
        let mesh = build_box_mesh(&BoxSpec::new([[0.0, 1.0]; 3], [2, 2, 2], 0.0, 1.0)).unwrap();
        let disc = Discretization::new(mesh).unwrap();
        // interior edge coefficients of the constant field (0, 2, 0); only the
        // element with no essential edge sees the full field
        let e: Vec<C64> = disc
            .dofs
            .free_edges
            .iter()
            .map(|&g| {
                let [a, b] = disc.mesh.edges[g];
                C64::new(2.0 * (disc.mesh.vertices[b][1] - disc.mesh.vertices[a][1]), 0.0)
            })
            .collect();
        let mags = centroid_magnitude(&disc, &e);
        let full = (0..disc.num_tets())
            .filter(|&t| disc.local_edges(t).iter().all(|x| x.0.is_some()))
            .collect::<Vec<_>>();
        assert!(!full.is_empty());
        for t in full {
            assert!((mags[t] - 2.0).abs() < 1e-12);
        }
    }
}
