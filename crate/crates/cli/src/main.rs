use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use softquad_core::body::whole_body_simulate;
use softquad_core::config::Settings;
use softquad_core::harness::{
    compute_metrics, plot, read_external_csv, run_closed_loop, run_perturbation_suite, time_align,
    DcmGrid, PerturbationScenario, ScenarioKind, TrajectoryRecord,
};
use softquad_core::leg::TendonSchedule;
use softquad_core::rod::simulate_leg;
use softquad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "softquad", version, about = "Soft quadruped simulation and MPC harness")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Simulated duration in seconds.
    #[arg(long, global = true, allow_negative_numbers = true)]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Single leg on a fixed stand under one tendon pulse.
    SimulateLeg {
        /// Record every n-th rod step.
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Open-loop whole body driven by the gait tendon schedule.
    SimulateBody,
    /// Closed-loop MPC on the rod plant.
    RunMpc,
    /// Perturbation study on the linearised torso.
    PerturbSuite,
    /// Trajectory metrics against an external recording.
    Validate {
        /// External `t,marker_id,x,y,z` recording.
        #[arg(long, required_unless_present = "self_test")]
        external: Option<PathBuf>,
        /// Simulated recording in the same format (e.g. com.csv).
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, default_value = "com")]
        marker: String,
        /// Compare the simulation with itself plus Gaussian noise of this
        /// standard deviation (m).
        #[arg(long, value_name = "SIGMA")]
        self_test: Option<f64>,
    },
    /// Re-renders a constraint map CSV as CSV and SVG.
    ExportDcm {
        #[arg(long)]
        input: PathBuf,
    },
    /// SVG figures from the CSV files of a run directory.
    Plot {
        /// Run directory; defaults to --out.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn duration(g: &Global, default: f64) -> Result<f64> {
    match g.duration {
        Some(d) if !(d > 0.0 && d.is_finite()) => Err(Error::InvalidArgument(format!(
            "--duration must be positive, got {d}"
        ))),
        Some(d) => Ok(d),
        None => Ok(default),
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let g = &cli.global;
    let settings = Settings::load(g.config.as_deref())?;
    fs::create_dir_all(&g.out)?;
    let out = g.out.as_path();
    match cli.command {
        Command::SimulateLeg { stride } => {
            let d = duration(g, settings.tendon.duration())?;
            let schedule = TendonSchedule::single(settings.tendon);
            let traj = simulate_leg(&settings.leg, &schedule, d, stride)?;
            traj.write_csv(create(out, "leg.csv")?)?;
            traj.write_reactions_csv(create(out, "reactions.csv")?)?;
            let tip = traj.tip_z();
            let min_tip = tip.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            Ok(json!({"frames": traj.frames.len(), "min_tip_z": min_tip}))
        }
        Command::SimulateBody => {
            let d = duration(g, 5.0)?;
            let gait = settings.gait_schedule();
            let traj = whole_body_simulate(&settings.robot, &gait.tendon_schedules(), d)?;
            traj.write_csv(create(out, "trajectory.csv")?)?;
            let last = traj.samples.last().expect("at least the initial sample");
            Ok(json!({"samples": traj.samples.len(), "final_position": last.torso.p}))
        }
        Command::RunMpc => {
            let d = duration(g, 25.0)?;
            let gait = settings.gait_schedule();
            let command = settings.command();
            let run = run_closed_loop(&settings.robot, &gait, &command, &settings.mpc, d)?;
            run.trajectory.write_csv(create(out, "trajectory.csv")?)?;
            run.telemetry.write_csv(create(out, "telemetry.csv")?)?;
            run.dcm.write_csv(create(out, "dcm.csv")?)?;
            fs::write(out.join("dcm.svg"), run.dcm.to_svg()?)?;
            TrajectoryRecord::com_of(&run.trajectory)?.write_csv(create(out, "com.csv")?)?;
            let last = run.trajectory.samples.last().expect("at least one sample");
            let summary = json!({
                "gait": settings.gait,
                "duration": d,
                "ticks": run.dcm.len(),
                "infeasible_ticks": run.dcm.infeasible_count(),
                "final_position": last.torso.p,
                "final_velocity": last.torso.v,
            });
            write_json(out, "summary.json", &summary)?;
            Ok(summary)
        }
        Command::PerturbSuite => {
            let d = duration(g, settings.suite_duration)?;
            let scenarios: Vec<_> = ScenarioKind::ALL
                .into_iter()
                .map(|k| {
                    let mut s = PerturbationScenario::preset(k);
                    s.duration = d;
                    if k == ScenarioKind::Noise {
                        s.noise_sigma = settings.noise_sigma;
                    }
                    s
                })
                .collect();
            let mut suite = settings.suite;
            suite.seed = g.seed;
            let report = run_perturbation_suite(
                &scenarios,
                &settings.robot,
                &settings.gait_schedule(),
                &settings.command(),
                &settings.mpc,
                &suite,
            )?;
            fs::write(out.join("report.json"), report.to_json()? + "\n")?;
            report.write_costs_csv(create(out, "costs.csv")?)?;
            let settled: Vec<_> = report
                .scenarios
                .iter()
                .map(|s| json!({"name": s.name, "settled": s.settled(), "settling_time": s.settling_time}))
                .collect();
            Ok(json!({"seed": g.seed, "scenarios": settled}))
        }
        Command::Validate { external, sim, marker, self_test } => {
            let sims = read_external_csv(File::open(&sim)?)?;
            let mut sim_rec = sims.get(&marker).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("marker {marker} not found in {}", sim.display()))
            })?;
            sim_rec.source = softquad_core::harness::TrajectorySource::Simulation;
            let ext_rec = match (self_test, external) {
                (Some(sigma), _) => {
                    let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
                    let mut r = sim_rec.clone();
                    r.source = softquad_core::harness::TrajectorySource::External;
                    for p in &mut r.pos {
                        for v in p.iter_mut() {
                            *v += n.sample(&mut rng);
                        }
                    }
                    r
                }
                (None, Some(path)) => read_external_csv(File::open(&path)?)?
                    .remove(&marker)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("marker {marker} not found in {}", path.display()))
                    })?,
                (None, None) => unreachable!("clap requires --external without --self-test"),
            };
            let aligned = time_align(&ext_rec, &sim_rec)?;
            let mut axes = serde_json::Map::new();
            for (k, name) in ["x", "y", "z"].iter().enumerate() {
                let (s, e) = aligned.axis(k);
                let m = compute_metrics(&e, &s)?;
                axes.insert((*name).into(), serde_json::to_value(m).expect("plain struct"));
            }
            let result = json!({"marker": marker, "samples": aligned.t.len(), "axes": axes});
            write_json(out, "metrics.json", &result)?;
            Ok(result)
        }
        Command::ExportDcm { input } => {
            let grid = DcmGrid::read_csv(File::open(&input)?)?;
            grid.write_csv(create(out, "dcm.csv")?)?;
            fs::write(out.join("dcm.svg"), grid.to_svg()?)?;
            Ok(json!({"ticks": grid.len(), "infeasible_ticks": grid.infeasible_count()}))
        }
        Command::Plot { dir } => {
            let dir = dir.unwrap_or_else(|| g.out.clone());
            let written = plot::plot_directory(&dir, settings.command().pz)?;
            if written.is_empty() {
                eprintln!("warning: no plottable CSV files in {}", dir.display());
            }
            Ok(json!({"figures": written}))
        }
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.to_string().trim());
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
