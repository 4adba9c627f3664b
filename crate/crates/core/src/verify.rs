//! Numerical verification suites: finite-difference gradient check,
//! manufactured-solution convergence, non-radiating sources, step-size
//! optimality and the order of the linearization.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{add_noise, generate_observation, rasterize_anomaly};
use crate::eddy::{nonradiating_source_test, solve_gateaux, HcurlNorm, NonRadiatingReport, StateOperator};
use crate::error::{Error, Result};
use crate::fem::quadrature::tet_degree4;
use crate::fem::{gamma_mass_matrix, Discretization, Material, SigmaField, Vec3};
use crate::inverse::InverseProblem;
use crate::linalg::{norm, C64};
use crate::mesh::{build_box_mesh, BoxSpec, Region};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const MMS_RATE: [f64; 2] = [1.7, 2.3];
pub const NONRADIATING_TOL: f64 = 1e-8;
pub const GATEAUX_RATIO: [f64; 2] = [3.5, 4.5];
pub const GATEAUX_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gradcheck,
    Mms,
    Nonradiating,
    Stepsize,
    Gateaux,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "mms" => Ok(Suite::Mms),
            "nonradiating" => Ok(Suite::Nonradiating),
            "stepsize" => Ok(Suite::Stepsize),
            "gateaux" => Ok(Suite::Gateaux),
            _ => Err(Error::Config(format!(
                "unknown suite `{s}` (expected gradcheck, mms, nonradiating, stepsize or gateaux)"
            ))),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| amp * rng.random_range(-1.0..=1.0)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckCase {
    pub finite_difference: f64,
    pub adjoint: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub edge_unknowns: usize,
    pub step: f64,
    pub cases: Vec<GradcheckCase>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compares `⟨gradient load, τ⟩` with central differences of the objective
/// at random `(σ, τ)` pairs.
pub fn gradcheck(problem: &InverseProblem, alpha: f64, seed: u64, pairs: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.num_sigma();
    let mut cases = Vec::new();
    for _ in 0..pairs {
        let sigma = SigmaField {
            values: uniform(&mut rng, n, 0.5),
        };
        let tau = uniform(&mut rng, n, 1.0);
        let eval = problem.evaluate(&sigma, alpha)?;
        let load = problem.gradient_load_at(&eval, &sigma, alpha)?;
        let adjoint: f64 = load.iter().zip(&tau).map(|(a, b)| a * b).sum();
        let shifted = |s: f64| SigmaField {
            values: sigma.values.iter().zip(&tau).map(|(a, b)| a + s * b).collect(),
        };
        let fd = (problem.objective(&shifted(FD_STEP), alpha)? - problem.objective(&shifted(-FD_STEP), alpha)?)
            / (2.0 * FD_STEP);
        cases.push(GradcheckCase {
            finite_difference: fd,
            adjoint,
            relative_error: (fd - adjoint).abs() / adjoint.abs(),
        });
    }
    let max_relative_error = cases.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        edge_unknowns: problem.disc.dofs.num_free_edges(),
        step: FD_STEP,
        passed: !cases.is_empty() && max_relative_error <= FD_TOL,
        cases,
        max_relative_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StepsizeCase {
    pub gamma: f64,
    pub psi_minus: f64,
    pub psi: f64,
    pub psi_plus: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepsizeReport {
    pub cases: Vec<StepsizeCase>,
    pub passed: bool,
}

/// Evaluates the quadratic model at the computed step and at steps perturbed
/// by `1e-3 |γ|`, for random directions at a random conductivity.
pub fn stepsize(problem: &InverseProblem, alpha: f64, seed: u64, directions: usize) -> Result<StepsizeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.num_sigma();
    let sigma = SigmaField {
        values: uniform(&mut rng, n, 0.3),
    };
    let eval = problem.evaluate(&sigma, alpha)?;
    let mut cases = Vec::new();
    for _ in 0..directions {
        let d = SigmaField {
            values: uniform(&mut rng, n, 1.0),
        };
        let eg = solve_gateaux(&eval.op, problem.disc, &problem.material, &eval.state, &d)?;
        let gamma = problem.step_size(&eval.state.e, &eg, &sigma.values, &d.values, alpha)?;
        let psi = |g: f64| problem.quadratic_model(&eval.state.e, &eg, &sigma.values, &d.values, alpha, g);
        let eps = 1e-3 * gamma.abs();
        cases.push(StepsizeCase {
            gamma,
            psi_minus: psi(gamma - eps)?,
            psi: psi(gamma)?,
            psi_plus: psi(gamma + eps)?,
        });
    }
    let passed = !cases.is_empty()
        && cases
            .iter()
            .all(|c| c.gamma != 0.0 && c.psi <= c.psi_minus && c.psi <= c.psi_plus);
    Ok(StepsizeReport { cases, passed })
}

#[derive(Clone, Debug, Serialize)]
pub struct GateauxReport {
    pub steps: Vec<f64>,
    pub defects: Vec<f64>,
    pub ratios: Vec<f64>,
    pub passed: bool,
}

/// Measures `‖E(σ + γd) - E(σ) - γ E'(σ)[d]‖` in the discrete H(curl) norm
/// for decreasing `γ`.
pub fn gateaux_order(disc: &Discretization, material: &Material, load: &[C64], seed: u64) -> Result<GateauxReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = disc.dofs.num_sigma();
    let sigma = SigmaField {
        values: uniform(&mut rng, n, 0.3),
    };
    let d = SigmaField {
        values: uniform(&mut rng, n, 1.0),
    };
    let op = StateOperator::new(disc, material, &sigma)?;
    let e0 = op.solve(load)?;
    let e1 = solve_gateaux(&op, disc, material, &e0, &d)?;
    let hn = HcurlNorm::new(disc);
    let mut defects = Vec::new();
    for &g in &GATEAUX_STEPS {
        let moved = SigmaField {
            values: sigma.values.iter().zip(&d.values).map(|(a, b)| a + g * b).collect(),
        };
        let eg = StateOperator::new(disc, material, &moved)?.solve(load)?;
        let defect: Vec<C64> = (0..e0.e.len()).map(|i| eg.e[i] - e0.e[i] - e1[i] * g).collect();
        defects.push(hn.norm(&defect));
    }
    let ratios: Vec<f64> = defects.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = ratios.iter().all(|r| (GATEAUX_RATIO[0]..=GATEAUX_RATIO[1]).contains(r));
    Ok(GateauxReport {
        steps: GATEAUX_STEPS.to_vec(),
        defects,
        ratios,
        passed,
    })
}

/// Smooth divergence-free field on a box with zero tangential trace on the
/// sides and bottom and zero tangential curl on the top:
/// `E = curl(u ez)` with `u = cos(a x') cos(b y') sin(c z')`.
#[derive(Clone, Copy, Debug)]
pub struct ManufacturedField {
    origin: Vec3,
    k: Vec3,
}

impl ManufacturedField {
    pub fn new(spec: &BoxSpec) -> Self {
        let len = |a: usize| spec.bounds[a][1] - spec.bounds[a][0];
        Self {
            origin: [spec.bounds[0][0], spec.bounds[1][0], spec.bounds[2][0]],
            k: [PI / len(0), PI / len(1), PI / (2.0 * len(2))],
        }
    }

    fn parts(&self, x: Vec3) -> ([f64; 3], [f64; 3]) {
        let s = [0, 1, 2].map(|i| (self.k[i] * (x[i] - self.origin[i])).sin());
        let c = [0, 1, 2].map(|i| (self.k[i] * (x[i] - self.origin[i])).cos());
        (s, c)
    }

    pub fn value(&self, x: Vec3) -> Vec3 {
        let [a, b, _] = self.k;
        let (s, c) = self.parts(x);
        [-b * c[0] * s[1] * s[2], a * s[0] * c[1] * s[2], 0.0]
    }

    pub fn curl(&self, x: Vec3) -> Vec3 {
        let [a, b, cz] = self.k;
        let (s, c) = self.parts(x);
        [
            -a * cz * s[0] * c[1] * c[2],
            -b * cz * c[0] * s[1] * c[2],
            (a * a + b * b) * c[0] * c[1] * s[2],
        ]
    }

    /// `curl curl E = k² E`.
    pub fn k2(&self) -> f64 {
        self.k.iter().map(|x| x * x).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsLevel {
    pub divisions: usize,
    pub edge_unknowns: usize,
    pub hcurl_error: f64,
    pub multiplier_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsReport {
    pub levels: Vec<MmsLevel>,
    pub rates: Vec<f64>,
    pub passed: bool,
}

/// Solves with the load of [`ManufacturedField`] on the unit box with an
/// interface at mid-height for `n x n x n` cells, and returns the H(curl)
/// error of the discrete solution.
pub fn mms_level(material: &Material, n: usize) -> Result<MmsLevel> {
    let spec = BoxSpec::new([[0.0, 1.0]; 3], [n; 3], 0.5, 1.0);
    let disc = Discretization::new(build_box_mesh(&spec)?)?;
    let field = ManufacturedField::new(&spec);
    let mu = material.mu;
    let uniform_mu = Material {
        mu_conductor: None,
        ..*material
    };
    let k2 = field.k2();
    let mut load = vec![C64::new(0.0, 0.0); disc.dofs.num_state()];
    for t in 0..disc.num_tets() {
        let g = disc.geometry(t);
        let sig = match disc.mesh.tets[t].region {
            Region::Conductor => material.sigma0,
            Region::Air => 0.0,
        };
        let coeff = C64::new(k2 / mu, -material.omega * sig);
        let le = disc.local_edges(t);
        for (bary, w) in tet_degree4() {
            let x = g.point(*bary);
            let f = field.value(x);
            let nb = g.whitney(*bary);
            for l in 0..6 {
                if let (Some(j), s) = le[l] {
                    let fn_ = f[0] * nb[l][0] + f[1] * nb[l][1] + f[2] * nb[l][2];
                    load[j] += coeff * (s * fn_ * w * g.volume);
                }
            }
        }
    }
    let op = StateOperator::new(&disc, &uniform_mu, &SigmaField::zeros(disc.dofs.num_sigma()))?;
    let sol = op.solve(&load)?;
    let mut err2 = 0.0;
    for t in 0..disc.num_tets() {
        let g = disc.geometry(t);
        let c = disc.local_coeffs(t, &sol.e);
        let curls = g.curls();
        for (bary, w) in tet_degree4() {
            let x = g.point(*bary);
            let nb = g.whitney(*bary);
            let (ex, cx) = (field.value(x), field.curl(x));
            for k in 0..3 {
                let mut eh = C64::new(0.0, 0.0);
                let mut ch = C64::new(0.0, 0.0);
                for l in 0..6 {
                    eh += c[l] * nb[l][k];
                    ch += c[l] * curls[l][k];
                }
                err2 += w * g.volume * ((eh - ex[k]).norm_sqr() + (ch - cx[k]).norm_sqr());
            }
        }
    }
    Ok(MmsLevel {
        divisions: n,
        edge_unknowns: disc.dofs.num_free_edges(),
        hcurl_error: err2.sqrt(),
        multiplier_norm: norm(&sol.phi),
    })
}

pub fn mms(material: &Material, divisions: &[usize]) -> Result<MmsReport> {
    let levels = divisions
        .iter()
        .map(|&n| mms_level(material, n))
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = levels.windows(2).map(|w| w[0].hcurl_error / w[1].hcurl_error).collect();
    let passed = levels.len() >= 3 && rates.iter().all(|r| (MMS_RATE[0]..=MMS_RATE[1]).contains(r));
    Ok(MmsReport { levels, rates, passed })
}

/// Random complex field on the edges with both ends strictly inside the
/// conductor.
pub fn interior_source(disc: &Discretization, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    disc.dofs
        .free_edges
        .iter()
        .map(|&e| {
            let [a, b] = disc.mesh.edges[e];
            let z = C64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            if disc.dofs.sigma_dof[a].is_some() && disc.dofs.sigma_dof[b].is_some() {
                z
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NonradiatingSummary {
    pub source_norm: f64,
    pub reproduction_error: f64,
    pub trace_ratio: f64,
    pub multiplier_norm: f64,
    pub passed: bool,
}

pub fn nonradiating(disc: &Discretization, material: &Material, seed: u64) -> Result<NonradiatingSummary> {
    let v = interior_source(disc, seed);
    let m = gamma_mass_matrix(disc)?;
    let NonRadiatingReport {
        source_norm,
        reproduction_error,
        trace_ratio,
        multiplier_norm,
    } = nonradiating_source_test(disc, material, &v, &m)?;
    Ok(NonradiatingSummary {
        source_norm,
        reproduction_error,
        trace_ratio,
        multiplier_norm,
        passed: source_norm > 0.0 && trace_ratio <= NONRADIATING_TOL && reproduction_error <= NONRADIATING_TOL,
    })
}

/// Machine-readable outcome of one suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub details: serde_json::Value,
}

/// Default refinement levels of the manufactured-solution suite.
pub const MMS_DIVISIONS: [usize; 3] = [4, 8, 16];

/// Runs one suite on the mesh, material, source and anomaly of `cfg`.
pub fn run_suite(cfg: &RunConfig, suite: Suite, seed: u64) -> Result<SuiteReport> {
    let material = cfg.material;
    let (passed, details) = match suite {
        Suite::Mms => {
            let r = mms(&material, &MMS_DIVISIONS)?;
            (r.passed, serde_json::to_value(&r)?)
        }
        Suite::Nonradiating => {
            let disc = cfg.discretization()?;
            let r = nonradiating(&disc, &material, seed)?;
            (r.passed, serde_json::to_value(&r)?)
        }
        Suite::Gateaux => {
            let disc = cfg.discretization()?;
            let load = cfg.source.dipoles()?.load(&disc, material.omega)?;
            let r = gateaux_order(&disc, &material, &load, seed)?;
            (r.passed, serde_json::to_value(&r)?)
        }
        Suite::Gradcheck | Suite::Stepsize => {
            let disc = cfg.discretization()?;
            let source = cfg.source.dipoles()?;
            let sigma = rasterize_anomaly(&cfg.anomaly, &disc)?;
            let data = add_noise(
                &generate_observation(&disc, &material, &sigma, &source)?,
                cfg.noise.delta,
                cfg.noise.seed,
            );
            let problem = InverseProblem::new(&disc, material, source.load(&disc, material.omega)?, data)?;
            let alpha = cfg.inversion.alpha;
            if suite == Suite::Gradcheck {
                let r = gradcheck(&problem, alpha, seed, 3)?;
                (r.passed, serde_json::to_value(&r)?)
            } else {
                let r = stepsize(&problem, alpha, seed, 3)?;
                (r.passed, serde_json::to_value(&r)?)
            }
        }
    };
    Ok(SuiteReport {
        suite,
        seed,
        passed,
        details,
    })
}
