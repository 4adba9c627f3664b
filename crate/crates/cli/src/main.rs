use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use eddyinv::config::{OutputFormat, RunConfig};
use eddyinv::data::{add_noise, generate_refined_observation, rasterize_anomaly};
use eddyinv::eddy::{
    align_observation, read_observation, tangential_trace, write_observation, ObservationFile, StateOperator,
};
use eddyinv::fem::{Discretization, SigmaField};
use eddyinv::inverse::{nlcg_run, write_log, InverseProblem};
use eddyinv::verify::{run_suite, Suite};
use eddyinv::vtk::{centroid_magnitude, write_vtk};
use eddyinv::{Error, Result};

/// Exit code of a verification suite that ran but did not pass.
const EXIT_SUITE_FAILED: u8 = 5;

#[derive(Parser)]
#[command(name = "eddyinv", version, about = "Eddy-current conductivity inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides the configured noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mesh and write it with its unknown counts.
    Mesh(Common),
    /// Simulate the observation for the configured anomaly.
    Forward(Common),
    /// Reconstruct the anomaly from an observation file.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
    /// Run a verification suite (gradcheck, mms, nonradiating, stepsize, gateaux).
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

fn prepare(common: &Common) -> Result<Run> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.noise.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    Ok(Run { cfg, out })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Mesh(common) => cmd_mesh(&prepare(&common)?),
        Command::Forward(common) => cmd_forward(&prepare(&common)?),
        Command::Invert { common, obs } => cmd_invert(&prepare(&common)?, &obs),
        Command::Verify { common, suite } => {
            let suite: Suite = suite.parse()?;
            cmd_verify(&prepare(&common)?, suite, common.seed)
        }
    }
}

fn counts(disc: &Discretization) -> serde_json::Value {
    json!({
        "vertices": disc.mesh.num_vertices(),
        "tets": disc.num_tets(),
        "edges": disc.mesh.num_edges(),
        "edge_unknowns": disc.dofs.num_free_edges(),
        "multiplier_unknowns": disc.dofs.num_multipliers(),
        "conductivity_unknowns": disc.dofs.num_sigma(),
        "measurement_edges": disc.dofs.gamma_edges.len(),
        "mesh_hash": disc.mesh.hash(),
    })
}

fn cmd_mesh(run: &Run) -> Result<ExitCode> {
    let disc = run.cfg.discretization()?;
    let region: Vec<f64> = disc
        .mesh
        .tets
        .iter()
        .map(|t| matches!(t.region, eddyinv::mesh::Region::Conductor) as u8 as f64)
        .collect();
    let mut w = create(&run.out.join("mesh.vtk"))?;
    write_vtk(&mut w, "eddyinv mesh", &disc.mesh, &[], &[("conductor", &region)])?;
    let summary = counts(&disc);
    write_json(&run.out.join("mesh.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_forward(run: &Run) -> Result<ExitCode> {
    let cfg = &run.cfg;
    let start = Instant::now();
    let disc = cfg.discretization()?;
    let source = cfg.source.dipoles()?;
    let sigma = rasterize_anomaly(&cfg.anomaly, &disc)?;
    let load = source.load(&disc, cfg.material.omega)?;
    let op = StateOperator::new(&disc, &cfg.material, &sigma)?;
    let state = op.solve(&load)?;
    let clean = if cfg.data.refine {
        generate_refined_observation(&disc, &cfg.material, &cfg.anomaly, &source)?
    } else {
        tangential_trace(&disc, &state.e)
    };
    let observation = add_noise(&clean, cfg.noise.delta, cfg.noise.seed);
    let file = ObservationFile {
        mesh_hash: disc.mesh.hash(),
        omega: cfg.material.omega,
        source: source.describe(),
        observation,
    };
    let mut w = create(&run.out.join("observation.obs"))?;
    write_observation(&mut w, &file)?;

    if cfg.output.formats.contains(&OutputFormat::Vtk) {
        let sv = sigma.vertex_values(&disc.dofs, disc.mesh.num_vertices());
        let ev = centroid_magnitude(&disc, &state.e);
        let mut w = create(&run.out.join("forward.vtk"))?;
        write_vtk(&mut w, "eddyinv forward", &disc.mesh, &[("sigma_exact", &sv)], &[("E_abs", &ev)])?;
    }
    let mut summary = counts(&disc);
    summary["sources"] = json!(source.points.len());
    summary["noise_delta"] = json!(cfg.noise.delta);
    summary["noise_seed"] = json!(cfg.noise.seed);
    summary["refined_data"] = json!(cfg.data.refine);
    summary["wall_seconds"] = json!(start.elapsed().as_secs_f64());
    write_json(&run.out.join("forward.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_invert(run: &Run, obs_path: &Path) -> Result<ExitCode> {
    let cfg = &run.cfg;
    let start = Instant::now();
    let disc = cfg.discretization()?;
    let reader = BufReader::new(File::open(obs_path)?);
    let file = read_observation(reader, Some(&disc.mesh.hash()))?;
    let data = align_observation(&disc, &file.observation)?;
    let source = cfg.source.dipoles()?;
    let load = source.load(&disc, cfg.material.omega)?;
    let problem = InverseProblem::new(&disc, cfg.material, load, data)?;
    let result = nlcg_run(&problem, &cfg.inversion, |r| {
        eprintln!(
            "k={:4} objective={:.6e} misfit={:.6e} grad={:.3e} beta={:.3e} gamma={:.3e}{}",
            r.k,
            r.objective,
            r.misfit,
            r.grad_norm,
            r.beta,
            r.gamma,
            if r.restarted { " restart" } else { "" }
        )
    })?;

    if cfg.output.formats.contains(&OutputFormat::Csv) {
        let mut w = create(&run.out.join("log.csv"))?;
        write_log(&mut w, &result.records)?;
    }
    if cfg.output.formats.contains(&OutputFormat::Vtk) {
        let exact = rasterize_anomaly(&cfg.anomaly, &disc)
            .unwrap_or_else(|_| SigmaField::zeros(disc.dofs.num_sigma()));
        let nv = disc.mesh.num_vertices();
        let rec = result.sigma.vertex_values(&disc.dofs, nv);
        let ex = exact.vertex_values(&disc.dofs, nv);
        let mut w = create(&run.out.join("sigma.vtk"))?;
        write_vtk(&mut w, "eddyinv recovered conductivity", &disc.mesh, &[("sigma", &rec), ("sigma_exact", &ex)], &[])?;
    }
    let (imax, smax) = extreme(&result.sigma.values, |a, b| a > b);
    let (imin, smin) = extreme(&result.sigma.values, |a, b| a < b);
    let summary = json!({
        "iterations": result.records.len(),
        "stop": format!("{:?}", result.stop),
        "initial_objective": result.records.first().map(|r| r.objective),
        "final_objective": result.final_objective,
        "final_misfit": result.final_misfit,
        "sigma_max": smax,
        "sigma_max_at": imax.map(|i| disc.mesh.vertices[disc.dofs.sigma_vertices[i]]),
        "sigma_min": smin,
        "sigma_min_at": imin.map(|i| disc.mesh.vertices[disc.dofs.sigma_vertices[i]]),
        "edge_unknowns": disc.dofs.num_free_edges(),
        "wall_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&run.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> (Option<usize>, f64) {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| better(v, values[b])) {
            best = Some(i);
        }
    }
    (best, best.map_or(0.0, |b| values[b]))
}

fn cmd_verify(run: &Run, suite: Suite, seed: Option<u64>) -> Result<ExitCode> {
    let seed = seed.unwrap_or(run.cfg.noise.seed);
    let report = run_suite(&run.cfg, suite, seed)?;
    let value = serde_json::to_value(&report)?;
    let name = serde_json::to_value(suite)?;
    let name = name.as_str().ok_or_else(|| Error::Config("suite name".into()))?;
    write_json(&run.out.join(format!("verify_{name}.json")), &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SUITE_FAILED)
    })
}
