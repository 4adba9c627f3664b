//! Synthetic conductivity anomalies, simulated measurements and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eddy::{tangential_trace, Observation, StateOperator};
use crate::error::{Error, Result};
use crate::fem::{assemble_dipole_rhs, Discretization, Material, SigmaField, Vec3};
use crate::linalg::C64;
use crate::mesh::{build_box_mesh, TetMesh};

/// Axis-aligned box carrying a constant anomaly conductivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyBox {
    pub min: Vec3,
    pub max: Vec3,
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySpec {
    pub boxes: Vec<AnomalyBox>,
}

/// Point dipoles sharing one moment direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DipoleSource {
    pub points: Vec<Vec3>,
    pub direction: Vec3,
}

impl DipoleSource {
    pub fn load(&self, disc: &Discretization, omega: f64) -> Result<Vec<C64>> {
        assemble_dipole_rhs(disc, &self.points, self.direction, omega)
    }

    /// One-line description for file headers.
    pub fn describe(&self) -> String {
        let d = self.direction;
        let mut s = format!("dipoles {} direction {:e} {:e} {:e}", self.points.len(), d[0], d[1], d[2]);
        if let (Some(first), Some(last)) = (self.points.first(), self.points.last()) {
            s += &format!(
                " first {:e} {:e} {:e} last {:e} {:e} {:e}",
                first[0], first[1], first[2], last[0], last[1], last[2]
            );
        }
        s
    }
}

/// Nodal conductivity of the anomaly: the box value at nodes strictly
/// inside a box (later boxes take precedence), zero elsewhere and on the
/// conductor boundary.
pub fn rasterize_anomaly(spec: &AnomalySpec, disc: &Discretization) -> Result<SigmaField> {
    let mesh = &disc.mesh;
    let bs = mesh.spec();
    let h = bs.spacing();
    for (i, b) in spec.boxes.iter().enumerate() {
        if !b.sigma.is_finite() {
            return Err(Error::Config(format!("anomaly box {i} has a non-finite value")));
        }
        for a in 0..3 {
            if !(b.min[a] < b.max[a]) {
                return Err(Error::Config(format!("anomaly box {i} is empty along axis {a}")));
            }
            for v in [b.min[a], b.max[a]] {
                if bs.plane_index(a, v).is_none() {
                    return Err(Error::Mesh(format!(
                        "anomaly box {i}: face at {v} along axis {a} is not a mesh plane (spacing {})",
                        h[a]
                    )));
                }
            }
        }
        if b.max[2] > bs.z_interface + 1e-9 * h[2] {
            return Err(Error::Config(format!("anomaly box {i} extends above the conductor")));
        }
    }
    let mut values = vec![0.0; disc.dofs.num_sigma()];
    for (i, &v) in disc.dofs.sigma_vertices.iter().enumerate() {
        let p = mesh.vertices[v];
        for b in &spec.boxes {
            let inside = (0..3).all(|a| {
                let tol = 1e-9 * h[a];
                p[a] > b.min[a] + tol && p[a] < b.max[a] - tol
            });
            if inside {
                values[i] = b.sigma;
            }
        }
    }
    Ok(SigmaField { values })
}

/// Tangential trace of the field produced by `source` with anomaly `sigma`.
pub fn generate_observation(
    disc: &Discretization,
    material: &Material,
    sigma: &SigmaField,
    source: &DipoleSource,
) -> Result<Observation> {
    let load = source.load(disc, material.omega)?;
    let op = StateOperator::new(disc, material, sigma)?;
    let state = op.solve(&load)?;
    Ok(tangential_trace(disc, &state.e))
}

/// Simulates on the once-refined mesh and restricts to the surface edges of
/// `disc`: each coarse edge coefficient is the sum of its two half-edge
/// coefficients, oriented along the coarse edge.
pub fn generate_refined_observation(
    disc: &Discretization,
    material: &Material,
    spec: &AnomalySpec,
    source: &DipoleSource,
) -> Result<Observation> {
    let fine_mesh: TetMesh = build_box_mesh(&disc.mesh.spec().refined())?;
    let fine = Discretization::new(fine_mesh)?;
    let sigma = rasterize_anomaly(spec, &fine)?;
    let fine_obs = generate_observation(&fine, material, &sigma, source)?;
    let mut out = Observation::zeros(disc);
    for (pos, &[a, b]) in out.edges.clone().iter().enumerate() {
        let ga = disc.mesh.grid_index(a).map(|x| 2 * x);
        let gb = disc.mesh.grid_index(b).map(|x| 2 * x);
        let mid = [0, 1, 2].map(|k| (ga[k] + gb[k]) / 2);
        let (fa, fm, fb) = (fine.mesh.vertex_at(ga), fine.mesh.vertex_at(mid), fine.mesh.vertex_at(gb));
        let mut z = C64::new(0.0, 0.0);
        for (p, q) in [(fa, fm), (fm, fb)] {
            let e = fine.mesh.edge_index(p, q).expect("half edge exists");
            let fp = fine.dofs.gamma_pos[e].expect("half edge on the surface");
            let s = if p < q { 1.0 } else { -1.0 };
            z += fine_obs.values[fp] * s;
        }
        out.values[pos] = z;
    }
    Ok(out)
}

/// Multiplies each coefficient by `1 + δ ξ` with one `ξ ~ U[-1, 1]` per edge.
/// `ξ` for the edge at position `i` is the first draw of ChaCha8 seeded with
/// `seed` on stream `i`, so it depends only on `(seed, i)`.
pub fn add_noise(obs: &Observation, delta: f64, seed: u64) -> Observation {
    if delta == 0.0 {
        return obs.clone();
    }
    let values = obs
        .values
        .iter()
        .enumerate()
        .map(|(i, z)| z * (1.0 + delta * noise_draw(seed, i as u64)))
        .collect();
    Observation {
        edges: obs.edges.clone(),
        values,
    }
}

fn noise_draw(seed: u64, stream: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random_range(-1.0..=1.0)
}
