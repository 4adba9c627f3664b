//! Gradients of the regularized misfit, the quadratic step rule and the
//! nonlinear conjugate gradient driver.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eddy::{
    hermitian_form, misfit, solve_adjoint, solve_gateaux, tangential_trace, Observation, StateOperator,
    StateSolution,
};
use crate::error::{Error, Result};
use crate::fem::quadrature::tet_degree4;
use crate::fem::{conductor_p1_matrices, gamma_mass_matrix, Discretization, Material, SigmaField};
use crate::linalg::{SparseMatrix, SpdFactorization, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientKind {
    L2,
    Sobolev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlcgConfig {
    pub alpha: f64,
    pub gradient_kind: GradientKind,
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this fraction of its
    /// initial value.
    pub grad_tol: f64,
    pub restart_on_ascent: bool,
}

impl Default for NlcgConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            gradient_kind: GradientKind::Sobolev,
            max_iter: 100,
            grad_tol: 1e-6,
            restart_on_ascent: true,
        }
    }
}

impl NlcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config("grad_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    pub misfit: f64,
    pub grad_norm: f64,
    pub beta: f64,
    pub gamma: f64,
    pub restarted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    GradTol,
    Stagnation,
}

#[derive(Clone, Debug)]
pub struct NlcgResult {
    pub sigma: SigmaField,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Objective and misfit at the returned conductivity.
    pub final_objective: f64,
    pub final_misfit: f64,
}

/// State of the forward problem at one conductivity.
#[derive(Debug)]
pub struct Evaluation {
    pub op: StateOperator,
    pub state: StateSolution,
    pub misfit: f64,
    pub objective: f64,
}

/// Everything fixed during a reconstruction: mesh, material, source load,
/// data, and the surface and conductor matrices.
#[derive(Debug)]
pub struct InverseProblem<'a> {
    pub disc: &'a Discretization,
    pub material: Material,
    pub source: Vec<C64>,
    pub data: Observation,
    pub gamma_mass: SparseMatrix<f64>,
    /// P1 stiffness and mass on the conductivity unknowns.
    pub stiffness: SparseMatrix<f64>,
    pub mass: SparseMatrix<f64>,
    mass_factor: SpdFactorization,
    sobolev_factor: SpdFactorization,
}

impl<'a> InverseProblem<'a> {
    pub fn new(disc: &'a Discretization, material: Material, source: Vec<C64>, data: Observation) -> Result<Self> {
        if source.len() != disc.dofs.num_state() {
            return Err(Error::Dimension {
                expected: disc.dofs.num_state(),
                got: source.len(),
            });
        }
        if disc.dofs.num_sigma() == 0 {
            return Err(Error::Mesh("the conductor has no interior nodes".into()));
        }
        let gamma_mass = gamma_mass_matrix(disc)?;
        let (stiffness, mass) = conductor_p1_matrices(disc);
        let trip: Vec<_> = stiffness.iter().chain(mass.iter()).collect();
        let sobolev = SparseMatrix::from_triplets(mass.nrows(), mass.ncols(), &trip);
        let mass_factor = SpdFactorization::new(&mass)?;
        let sobolev_factor = SpdFactorization::new(&sobolev)?;
        // fail early on data from another surface
        Observation::zeros(disc).difference(&data)?;
        Ok(Self {
            disc,
            material,
            source,
            data,
            gamma_mass,
            stiffness,
            mass,
            mass_factor,
            sobolev_factor,
        })
    }

    pub fn num_sigma(&self) -> usize {
        self.disc.dofs.num_sigma()
    }

    /// `½ σᵀ K σ`, the squared gradient seminorm halved.
    pub fn seminorm_half(&self, sigma: &[f64]) -> f64 {
        0.5 * dot(sigma, &self.stiffness.mul_vec(sigma))
    }

    /// L² inner product of two nodal fields on the conductor.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.mass.mul_vec(b))
    }

    pub fn evaluate(&self, sigma: &SigmaField, alpha: f64) -> Result<Evaluation> {
        let op = StateOperator::new(self.disc, &self.material, sigma)?;
        let state = op.solve(&self.source)?;
        let sim = tangential_trace(self.disc, &state.e);
        let misfit = misfit(&sim, &self.data, &self.gamma_mass)?;
        let objective = misfit + alpha * self.seminorm_half(&sigma.values);
        Ok(Evaluation {
            op,
            state,
            misfit,
            objective,
        })
    }

    /// Regularized objective at `sigma`.
    pub fn objective(&self, sigma: &SigmaField, alpha: f64) -> Result<f64> {
        Ok(self.evaluate(sigma, alpha)?.objective)
    }

    /// Load vector of the functional derivative at an evaluated state:
    /// its dot product with a direction τ is the directional derivative.
    pub fn gradient_load_at(&self, eval: &Evaluation, sigma: &SigmaField, alpha: f64) -> Result<Vec<f64>> {
        let adj = solve_adjoint(&eval.op, self.disc, &eval.state, &self.data, &self.gamma_mass)?;
        Ok(gradient_load(
            self.disc,
            &self.material,
            &eval.state.e,
            &adj.e,
            sigma,
            alpha,
            &self.stiffness,
        ))
    }

    /// Solves `M g = load`.
    pub fn gradient_l2(&self, load: &[f64]) -> Result<Vec<f64>> {
        self.mass_factor.solve(load)
    }

    /// Solves `(K + M) g = load`.
    pub fn gradient_sobolev(&self, load: &[f64]) -> Result<Vec<f64>> {
        self.sobolev_factor.solve(load)
    }

    pub fn gradient(&self, kind: GradientKind, load: &[f64]) -> Result<Vec<f64>> {
        match kind {
            GradientKind::L2 => self.gradient_l2(load),
            GradientKind::Sobolev => self.gradient_sobolev(load),
        }
    }

    /// Minimizer of the quadratic model of the objective along `d`, with
    /// `e_g` the derivative of the edge field along `d`.
    pub fn step_size(&self, e_k: &[C64], e_g: &[C64], sigma: &[f64], d: &[f64], alpha: f64) -> Result<f64> {
        let res = tangential_trace(self.disc, e_k).difference(&self.data)?;
        let lin = tangential_trace(self.disc, e_g).values;
        let m_lin = self.gamma_mass.mul_vec(&lin);
        let cross: f64 = res.iter().zip(&m_lin).map(|(a, b)| (a.conj() * b).re).sum();
        let kd = self.stiffness.mul_vec(d);
        let num = cross + alpha * dot(sigma, &kd);
        let den = hermitian_form(&self.gamma_mass, &lin) + alpha * dot(d, &kd);
        if !(den > 0.0) || !num.is_finite() {
            return Err(Error::Stagnation);
        }
        Ok(-num / den)
    }

    /// Value of the quadratic model at step `gamma`.
    pub fn quadratic_model(&self, e_k: &[C64], e_g: &[C64], sigma: &[f64], d: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
        let moved: Vec<C64> = e_k.iter().zip(e_g).map(|(a, b)| a + b * gamma).collect();
        let m = misfit(&tangential_trace(self.disc, &moved), &self.data, &self.gamma_mass)?;
        let s: Vec<f64> = sigma.iter().zip(d).map(|(a, b)| a + gamma * b).collect();
        Ok(m + alpha * self.seminorm_half(&s))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `α K σ + ω ∫ Im(E · F) λj` over the conductor, with `E · F` the
/// unconjugated product of the state and adjoint fields.
pub fn gradient_load(
    disc: &Discretization,
    material: &Material,
    e: &[C64],
    f: &[C64],
    sigma: &SigmaField,
    alpha: f64,
    stiffness: &SparseMatrix<f64>,
) -> Vec<f64> {
    let cond = disc.conductor_tets();
    let locals: Vec<[f64; 4]> = cond
        .par_iter()
        .map(|&t| {
            let g = disc.geometry(t);
            let ce = disc.local_coeffs(t, e);
            let cf = disc.local_coeffs(t, f);
            let mut out = [0.0; 4];
            for (bary, w) in tet_degree4() {
                let n = g.whitney(*bary);
                let mut ev = [C64::new(0.0, 0.0); 3];
                let mut fv = [C64::new(0.0, 0.0); 3];
                for l in 0..6 {
                    for c in 0..3 {
                        ev[c] += ce[l] * n[l][c];
                        fv[c] += cf[l] * n[l][c];
                    }
                }
                let prod = ev[0] * fv[0] + ev[1] * fv[1] + ev[2] * fv[2];
                let s = material.omega * prod.im * w * g.volume;
                for p in 0..4 {
                    out[p] += s * bary[p];
                }
            }
            out
        })
        .collect();
    let mut load = if alpha != 0.0 {
        stiffness.mul_vec(&sigma.values).into_iter().map(|x| alpha * x).collect()
    } else {
        vec![0.0; disc.dofs.num_sigma()]
    };
    for (&t, loc) in cond.iter().zip(&locals) {
        for (p, v) in disc.mesh.tets[t].vertices.iter().enumerate() {
            if let Some(i) = disc.dofs.sigma_dof[*v] {
                load[i] += loc[p];
            }
        }
    }
    load
}

const STAGNATION_TOL: f64 = 1e-12;
const STAGNATION_COUNT: usize = 3;

/// Runs the conjugate gradient reconstruction from σ = 0. `progress` is
/// called after every recorded iteration.
pub fn nlcg_run(
    problem: &InverseProblem,
    config: &NlcgConfig,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<NlcgResult> {
    config.validate()?;
    let alpha = config.alpha;
    let n = problem.num_sigma();
    let mut sigma = SigmaField::zeros(n);
    let mut records = Vec::new();
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut prev_gn2 = 0.0;
    let mut g0 = None;
    let mut prev_obj: Option<f64> = None;
    let mut flat = 0;
    let mut stop = StopReason::MaxIter;

    for k in 0..config.max_iter {
        let at = |e: Error| Error::Iteration {
            iteration: k,
            source: Box::new(e),
        };
        let eval = problem.evaluate(&sigma, alpha).map_err(at)?;
        if !eval.objective.is_finite() {
            return Err(Error::NonFinite(k));
        }
        let load = problem.gradient_load_at(&eval, &sigma, alpha).map_err(at)?;
        let g = problem.gradient(config.gradient_kind, &load).map_err(at)?;
        let gn2 = problem.l2_inner(&g, &g).max(0.0);
        let gnorm = gn2.sqrt();
        let g0v = *g0.get_or_insert(gnorm);

        let mut record = IterationRecord {
            k,
            objective: eval.objective,
            misfit: eval.misfit,
            grad_norm: gnorm,
            beta: 0.0,
            gamma: 0.0,
            restarted: false,
        };
        if gnorm == 0.0 || gnorm <= config.grad_tol * g0v && k > 0 {
            stop = StopReason::GradTol;
            progress(&record);
            records.push(record);
            break;
        }

        let mut beta = match &prev_dir {
            Some(_) if prev_gn2 > 0.0 => gn2 / prev_gn2,
            _ => 0.0,
        };
        let mut dir: Vec<f64> = match &prev_dir {
            Some(p) if beta != 0.0 => g.iter().zip(p).map(|(gi, pi)| -gi + beta * pi).collect(),
            _ => g.iter().map(|x| -x).collect(),
        };
        if config.restart_on_ascent && problem.l2_inner(&g, &dir) >= 0.0 {
            dir = g.iter().map(|x| -x).collect();
            beta = 0.0;
            record.restarted = true;
        }
        record.beta = beta;

        let dir_field = SigmaField { values: dir };
        let e_g = solve_gateaux(&eval.op, problem.disc, &problem.material, &eval.state, &dir_field).map_err(at)?;
        let gamma = match problem.step_size(&eval.state.e, &e_g, &sigma.values, &dir_field.values, alpha) {
            Ok(gm) => gm,
            Err(Error::Stagnation) => {
                stop = StopReason::Stagnation;
                progress(&record);
                records.push(record);
                break;
            }
            Err(e) => return Err(at(e)),
        };
        record.gamma = gamma;
        progress(&record);
        records.push(record);

        for (s, d) in sigma.values.iter_mut().zip(&dir_field.values) {
            *s += gamma * d;
        }
        if let Some(p) = prev_obj {
            if (eval.objective - p).abs() <= STAGNATION_TOL {
                flat += 1;
            } else {
                flat = 0;
            }
        }
        prev_obj = Some(eval.objective);
        prev_dir = Some(dir_field.values);
        prev_gn2 = gn2;
        if flat >= STAGNATION_COUNT {
            stop = StopReason::Stagnation;
            break;
        }
    }

    let last = problem.evaluate(&sigma, alpha).map_err(|e| Error::Iteration {
        iteration: records.len(),
        source: Box::new(e),
    })?;
    if !last.objective.is_finite() {
        return Err(Error::NonFinite(records.len()));
    }
    Ok(NlcgResult {
        sigma,
        records,
        stop,
        final_objective: last.objective,
        final_misfit: last.misfit,
    })
}

pub const LOG_HEADER: &str = "k,objective,misfit,grad_norm,beta,gamma,restarted";

pub fn write_log(mut w: impl Write, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            r.k, r.objective, r.misfit, r.grad_norm, r.beta, r.gamma, r.restarted
        )?;
    }
    w.flush()
}
