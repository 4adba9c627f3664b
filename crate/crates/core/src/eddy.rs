//! State, adjoint and linearized solves of the eddy-current system, plus
//! traces and misfits on the measurement surface.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_state_system, conductor_mass_matrix, curl_curl_matrix, edge_mass_matrix, Discretization,
    Material, SaddleSystem, SigmaField,
};
use crate::linalg::{norm, Factorization, SparseMatrix, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Edge coefficients on the free edges and multiplier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSolution {
    pub e: Vec<C64>,
    pub phi: Vec<C64>,
}

impl StateSolution {
    fn split(x: Vec<C64>, num_edges: usize) -> Self {
        let mut e = x;
        let phi = e.split_off(num_edges);
        Self { e, phi }
    }
}

/// Complex edge coefficients on the measurement surface, one per edge of a
/// measurement face, identified by its vertex pair (lower index first).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub edges: Vec<[usize; 2]>,
    pub values: Vec<C64>,
}

impl Observation {
    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            edges: disc.dofs.gamma_edges.iter().map(|&e| disc.mesh.edges[e]).collect(),
            values: vec![ZERO; disc.dofs.gamma_edges.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_support(&self, other: &Observation) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Support(format!(
                "observations cover different edge sets ({} vs {} edges)",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// `self - other` on a common support.
    pub fn difference(&self, other: &Observation) -> Result<Vec<C64>> {
        self.check_support(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }
}

/// State matrix at one conductivity together with its factorization. The
/// state, adjoint and linearized solves at that conductivity all reuse it.
#[derive(Debug)]
pub struct StateOperator {
    pub system: SaddleSystem,
    factor: Factorization,
}

impl StateOperator {
    pub fn new(disc: &Discretization, material: &Material, sigma: &SigmaField) -> Result<Self> {
        let system = assemble_state_system(disc, material, sigma)?;
        let factor = Factorization::new(&system.matrix)?;
        Ok(Self { system, factor })
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factor
    }

    /// Solves with a load over all state unknowns.
    pub fn solve(&self, load: &[C64]) -> Result<StateSolution> {
        let x = self.factor.solve(load)?;
        Ok(StateSolution::split(x, self.system.num_edges))
    }

    /// Solves with a load given on the free edges only.
    pub fn solve_edge_load(&self, edge_load: &[C64]) -> Result<StateSolution> {
        if edge_load.len() != self.system.num_edges {
            return Err(Error::Dimension {
                expected: self.system.num_edges,
                got: edge_load.len(),
            });
        }
        let mut load = edge_load.to_vec();
        load.resize(self.system.num_edges + self.system.num_multipliers, ZERO);
        self.solve(&load)
    }
}

pub fn solve_state(op: &StateOperator, load: &[C64]) -> Result<StateSolution> {
    op.solve(load)
}

/// Restriction of the edge field to the measurement-surface edges.
pub fn tangential_trace(disc: &Discretization, e: &[C64]) -> Observation {
    let mut obs = Observation::zeros(disc);
    for (pos, &edge) in disc.dofs.gamma_edges.iter().enumerate() {
        if let Some(i) = disc.dofs.edge_dof[edge] {
            obs.values[pos] = e[i];
        }
    }
    obs
}

/// `Re(d̄ᵀ M d)` for a complex vector `d` and a real symmetric `M`.
pub fn hermitian_form(m: &SparseMatrix<f64>, d: &[C64]) -> f64 {
    let md = m.mul_vec(d);
    d.iter().zip(&md).map(|(a, b)| (a.conj() * b).re).sum()
}

/// `½ ‖n × (sim - data)‖²` on the measurement surface.
pub fn misfit(sim: &Observation, data: &Observation, gamma_mass: &SparseMatrix<f64>) -> Result<f64> {
    let d = sim.difference(data)?;
    if d.len() != gamma_mass.nrows() {
        return Err(Error::Dimension {
            expected: gamma_mass.nrows(),
            got: d.len(),
        });
    }
    Ok(0.5 * hermitian_form(gamma_mass, &d).max(0.0))
}

/// Edge load of the adjoint problem: the surface mass applied to the
/// conjugated residual `conj(data - E)`, injected into the free surface edges.
pub fn adjoint_load(
    disc: &Discretization,
    e: &[C64],
    data: &Observation,
    gamma_mass: &SparseMatrix<f64>,
) -> Result<Vec<C64>> {
    let sim = tangential_trace(disc, e);
    let r: Vec<C64> = data.difference(&sim)?.iter().map(|z| z.conj()).collect();
    let mr = gamma_mass.mul_vec(&r);
    let mut load = vec![ZERO; disc.dofs.num_free_edges()];
    for (pos, &edge) in disc.dofs.gamma_edges.iter().enumerate() {
        if let Some(i) = disc.dofs.edge_dof[edge] {
            load[i] = mr[pos];
        }
    }
    Ok(load)
}

pub fn solve_adjoint(
    op: &StateOperator,
    disc: &Discretization,
    state: &StateSolution,
    data: &Observation,
    gamma_mass: &SparseMatrix<f64>,
) -> Result<StateSolution> {
    let load = adjoint_load(disc, &state.e, data, gamma_mass)?;
    op.solve_edge_load(&load)
}

/// Derivative of the edge field along `sigma_b`: solves the state system
/// with load `iω ∫ σ_b E0 · Nj` over the conductor.
pub fn solve_gateaux(
    op: &StateOperator,
    disc: &Discretization,
    material: &Material,
    state: &StateSolution,
    sigma_b: &SigmaField,
) -> Result<Vec<C64>> {
    let m = conductor_mass_matrix(disc, 0.0, sigma_b);
    let iw = C64::new(0.0, material.omega);
    let load: Vec<C64> = m.mul_vec(&state.e).into_iter().map(|z| iw * z).collect();
    Ok(op.solve_edge_load(&load)?.e)
}

/// Discrete H(curl) norm with unit coefficients.
#[derive(Clone, Debug)]
pub struct HcurlNorm {
    matrix: SparseMatrix<f64>,
}

impl HcurlNorm {
    pub fn new(disc: &Discretization) -> Self {
        let unit = Material {
            mu: 1.0,
            mu_conductor: None,
            ..Material::default()
        };
        let k = curl_curl_matrix(disc, &unit);
        let m = edge_mass_matrix(disc);
        let trip: Vec<_> = k.iter().chain(m.iter()).collect();
        Self {
            matrix: SparseMatrix::from_triplets(k.nrows(), k.ncols(), &trip),
        }
    }

    pub fn norm(&self, e: &[C64]) -> f64 {
        hermitian_form(&self.matrix, e).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonRadiatingReport {
    pub source_norm: f64,
    /// `‖E - v‖ / ‖v‖` in the coefficient 2-norm.
    pub reproduction_error: f64,
    /// `‖n × E‖_Γ / ‖v‖`.
    pub trace_ratio: f64,
    pub multiplier_norm: f64,
}

/// Solves the background problem (σ = 0) with the load generated by an
/// interior edge field `v` and compares the solution with `v`.
pub fn nonradiating_source_test(
    disc: &Discretization,
    material: &Material,
    v: &[C64],
    gamma_mass: &SparseMatrix<f64>,
) -> Result<NonRadiatingReport> {
    let n = disc.dofs.num_free_edges();
    if v.len() != n {
        return Err(Error::Dimension { expected: n, got: v.len() });
    }
    for (i, z) in v.iter().enumerate() {
        if z.norm() == 0.0 {
            continue;
        }
        let [a, b] = disc.mesh.edges[disc.dofs.free_edges[i]];
        if disc.dofs.sigma_dof[a].is_none() || disc.dofs.sigma_dof[b].is_none() {
            return Err(Error::Usage(format!(
                "source edge ({a}, {b}) is not strictly inside the conductor"
            )));
        }
    }
    let source_norm = norm(v);
    if source_norm == 0.0 {
        return Ok(NonRadiatingReport {
            source_norm,
            reproduction_error: 0.0,
            trace_ratio: 0.0,
            multiplier_norm: 0.0,
        });
    }
    let op = StateOperator::new(disc, material, &SigmaField::zeros(disc.dofs.num_sigma()))?;
    let mut full = v.to_vec();
    full.resize(disc.dofs.num_state(), ZERO);
    let load = op.system.matrix.mul_vec(&full);
    let sol = op.solve(&load)?;
    let diff: Vec<C64> = sol.e.iter().zip(v).map(|(a, b)| a - b).collect();
    let trace = tangential_trace(disc, &sol.e);
    Ok(NonRadiatingReport {
        source_norm,
        reproduction_error: norm(&diff) / source_norm,
        trace_ratio: hermitian_form(gamma_mass, &trace.values).max(0.0).sqrt() / source_norm,
        multiplier_norm: norm(&sol.phi),
    })
}

/// Observation together with the metadata stored in an observation file.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFile {
    pub mesh_hash: String,
    pub omega: f64,
    pub source: String,
    pub observation: Observation,
}

const MAGIC: &str = "# eddyinv observation v1";

pub fn write_observation(mut w: impl Write, file: &ObservationFile) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "# mesh_hash {}", file.mesh_hash)?;
    writeln!(w, "# omega {:e}", file.omega)?;
    writeln!(w, "# source {}", file.source.replace('\n', " "))?;
    writeln!(w, "# edges {}", file.observation.len())?;
    for ([a, b], z) in file.observation.edges.iter().zip(&file.observation.values) {
        writeln!(w, "{a} {b} {:e} {:e}", z.re, z.im)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an observation file. When `expected_hash` is given the file must
/// have been produced on that mesh.
pub fn read_observation(r: impl BufRead, expected_hash: Option<&str>) -> Result<ObservationFile> {
    let mut mesh_hash = None;
    let mut omega = None;
    let mut source = String::new();
    let mut count = None;
    let mut edges = Vec::new();
    let mut values = Vec::new();
    let parse_err = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        if i == 0 {
            if line.trim() != MAGIC {
                return Err(parse_err(ln, "missing observation header"));
            }
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let h = h.trim();
            let (key, rest) = h.split_once(' ').unwrap_or((h, ""));
            match key {
                "mesh_hash" => mesh_hash = Some(rest.trim().to_string()),
                "omega" => {
                    omega = Some(rest.trim().parse::<f64>().map_err(|_| parse_err(ln, "bad omega"))?)
                }
                "source" => source = rest.trim().to_string(),
                "edges" => {
                    count = Some(rest.trim().parse::<usize>().map_err(|_| parse_err(ln, "bad edge count"))?)
                }
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(ln, "expected `v0 v1 re im`"));
        }
        let a: usize = f[0].parse().map_err(|_| parse_err(ln, "bad vertex id"))?;
        let b: usize = f[1].parse().map_err(|_| parse_err(ln, "bad vertex id"))?;
        let re: f64 = f[2].parse().map_err(|_| parse_err(ln, "bad real part"))?;
        let im: f64 = f[3].parse().map_err(|_| parse_err(ln, "bad imaginary part"))?;
        edges.push([a.min(b), a.max(b)]);
        values.push(C64::new(re, im));
    }
    let mesh_hash = mesh_hash.ok_or_else(|| parse_err(0, "missing mesh_hash"))?;
    let omega = omega.ok_or_else(|| parse_err(0, "missing omega"))?;
    if let Some(n) = count {
        if n != edges.len() {
            return Err(parse_err(0, &format!("header announces {n} edges, found {}", edges.len())));
        }
    }
    if let Some(expected) = expected_hash {
        if expected != mesh_hash {
            return Err(Error::MeshHashMismatch {
                expected: expected.to_string(),
                found: mesh_hash,
            });
        }
    }
    Ok(ObservationFile {
        mesh_hash,
        omega,
        source,
        observation: Observation { edges, values },
    })
}

/// Reorders a file observation onto the surface edges of `disc`.
pub fn align_observation(disc: &Discretization, obs: &Observation) -> Result<Observation> {
    let mut out = Observation::zeros(disc);
    let mut seen = vec![false; out.len()];
    for ([a, b], z) in obs.edges.iter().zip(&obs.values) {
        let pos = disc
            .mesh
            .edge_index(*a, *b)
            .and_then(|e| disc.dofs.gamma_pos[e])
            .ok_or_else(|| Error::Support(format!("edge ({a}, {b}) is not a measurement edge")))?;
        if seen[pos] {
            return Err(Error::Support(format!("edge ({a}, {b}) listed twice")));
        }
        seen[pos] = true;
        out.values[pos] = *z;
    }
    if let Some(pos) = seen.iter().position(|s| !s) {
        let [a, b] = out.edges[pos];
        return Err(Error::Support(format!("measurement edge ({a}, {b}) missing")));
    }
    Ok(out)
}
