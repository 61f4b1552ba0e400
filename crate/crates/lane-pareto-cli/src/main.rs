//! Command-line front end: load a scenario, optimize the lane-change
//! execution point, replay the winner, export artifacts, and run parameter
//! sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lane_pareto::analysis::{edie_metrics, heatmap_grid, EdieMetrics, EdieRegion, HeatmapGrid};
use lane_pareto::cost::CostBreakdown;
use lane_pareto::error::Error;
use lane_pareto::nsga2::{select_solution, LcCandidate};
use lane_pareto::scenario::{build_scenario, run_warmup, spawn_platoon, ScenarioConfig};
use lane_pareto::sim_engine::{
    existing_algorithm_baseline, optimize, run_final, SimMode, SimulationTrace,
};

#[derive(Parser)]
#[command(name = "lane-pareto", version, about = "Mixed-traffic lane-change execution-point optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization and export all artifacts.
    Optimize(OptimizeArgs),
    /// Re-run the optimization over a grid of one scenario parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct OptimizeArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created; must not already contain files).
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of generations.
    #[arg(long)]
    generations: Option<usize>,
    /// Override the population size.
    #[arg(long)]
    population: Option<usize>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    base: OptimizeArgs,
    /// Parameter grid, e.g. `lc_initial_gap=40:100:20`. Valid keys:
    /// lc_initial_speed, lc_initial_gap, penetration_ratio.
    #[arg(long)]
    vary: String,
}

/// Exit codes: 2 config error, 3 no feasible candidate, 4 tracking failure.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::NoFeasibleCandidate { .. } => 3,
        Error::TrackingDiverged { .. } | Error::SteeringOutOfRange(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(args) => cmd_optimize(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
        Err(RunError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

enum RunError {
    Domain(Error),
    Io(std::io::Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Domain(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

/// One entry of the exported front.
#[derive(Serialize, Deserialize)]
struct FrontEntry {
    candidate: LcCandidate,
    objectives: [f64; 2],
    violation: f64,
    selected: bool,
    baseline: bool,
}

#[derive(Serialize, Deserialize)]
struct FrontArtifact {
    members: Vec<FrontEntry>,
    evaluations: usize,
    best_violation: f64,
}

/// Everything needed to reproduce and audit one run.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    command: String,
    config: ScenarioConfig,
    seed: u64,
    /// Unix epoch seconds; informational only, excluded from the
    /// reproducibility contract.
    created_unix: u64,
    tracked_replay: bool,
    heatmap_cell: (f64, f64),
    artifacts: Vec<String>,
}

fn resolved_config(args: &OptimizeArgs) -> Result<ScenarioConfig, Error> {
    let raw = std::fs::read_to_string(&args.scenario)
        .map_err(|e| Error::config("scenario", format!("cannot read {}: {e}", args.scenario.display())))?;
    let mut config = build_scenario(&raw)?;
    if let Some(seed) = args.seed {
        config.nsga_params.seed = seed;
    }
    if let Some(g) = args.generations {
        config.nsga_params.generations = g;
    }
    if let Some(p) = args.population {
        config.nsga_params.population = p;
    }
    config.nsga_params.validate()?;
    Ok(config)
}

const HEATMAP_CELL: (f64, f64) = (10.0, 0.5);

struct RunOutputs {
    front: FrontArtifact,
    ideal_csv: String,
    tracked_csv: String,
    breakdown: CostBreakdown,
    edie: EdieMetrics,
    heatmap: HeatmapGrid,
    svg: String,
    selected_total: f64,
}

/// Warm up, optimize, replay the selected candidate, and collect every
/// artifact in memory.
fn run_pipeline(config: &ScenarioConfig) -> Result<RunOutputs, Error> {
    let warmed = run_warmup(&spawn_platoon(config)?, config)?;
    let outcome = optimize(&warmed, config)?;
    if outcome.front.members.is_empty() {
        return Err(Error::NoFeasibleCandidate {
            best_violation: outcome.best_violation,
        });
    }
    let selected = select_solution(&outcome.front)?;
    let baseline = existing_algorithm_baseline(&outcome.front)?;
    let front = FrontArtifact {
        members: outcome
            .front
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| FrontEntry {
                candidate: LcCandidate::from_genome(&m.genome),
                objectives: m.eval.objectives,
                violation: m.eval.violation,
                selected: i == selected,
                baseline: i == baseline,
            })
            .collect(),
        evaluations: outcome.evaluations,
        best_violation: outcome.best_violation,
    };

    let candidate = LcCandidate::from_genome(&outcome.front.members[selected].genome);
    let (ideal_trace, breakdown) = run_final(&candidate, &warmed, config, SimMode::Ideal)?;
    let (tracked_trace, _) = run_final(&candidate, &warmed, config, SimMode::Tracked)?;

    let region = edie_region_for(&ideal_trace, config);
    let edie = edie_metrics(&ideal_trace, &region)?;
    let heatmap = heatmap_grid(&ideal_trace, HEATMAP_CELL.0, HEATMAP_CELL.1)?;
    let svg = render_svg(&ideal_trace, &heatmap);
    let [j_lc, j_tf] = outcome.front.members[selected].eval.objectives;
    Ok(RunOutputs {
        front,
        ideal_csv: ideal_trace.to_csv(),
        tracked_csv: tracked_trace.to_csv(),
        breakdown,
        edie,
        heatmap,
        svg,
        selected_total: j_lc + j_tf,
    })
}

/// Measurement rectangle: the configured length ending at the incident
/// position, over the configured duration from the decision point (clamped
/// to the trace).
fn edie_region_for(trace: &SimulationTrace, config: &ScenarioConfig) -> EdieRegion {
    let incident_x = trace.ticks[0]
        .states
        .iter()
        .find(|s| s.id == config.incident_id())
        .map(|s| s.x)
        .unwrap_or(config.incident_distance);
    let t_end = trace.ticks.last().map(|t| t.t).unwrap_or(trace.t0);
    let t_max = (trace.t0 + config.edie_region.duration).min(t_end);
    EdieRegion::new(
        incident_x - config.edie_region.length,
        incident_x,
        trace.t0,
        t_max,
    )
    .expect("positive region dimensions")
}

fn write_artifacts(out: &Path, manifest: RunManifest, outputs: &RunOutputs) -> RunResult<()> {
    let staging = out.with_file_name(format!(
        "{}.partial",
        out.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let files: Vec<(&str, String)> = vec![
        ("front.json", json(&outputs.front)),
        ("trace_ideal.csv", outputs.ideal_csv.clone()),
        ("trace_tracked.csv", outputs.tracked_csv.clone()),
        ("cost_breakdown.json", json(&outputs.breakdown)),
        ("edie_summary.json", json(&outputs.edie)),
        ("heatmap.csv", outputs.heatmap.to_csv()),
        ("heatmap.svg", outputs.svg.clone()),
        ("manifest.json", json(&manifest)),
    ];
    debug_assert_eq!(
        manifest.artifacts,
        files.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>()
    );
    for (name, content) in &files {
        std::fs::write(staging.join(name), content)?;
    }
    std::fs::rename(&staging, out)?;
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn artifact_names() -> Vec<String> {
    [
        "front.json",
        "trace_ideal.csv",
        "trace_tracked.csv",
        "cost_breakdown.json",
        "edie_summary.json",
        "heatmap.csv",
        "heatmap.svg",
        "manifest.json",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn check_out_dir(out: &Path) -> RunResult<()> {
    if out.exists() && std::fs::read_dir(out)?.next().is_some() {
        return Err(Error::config(
            "out",
            format!("{} already contains files", out.display()),
        )
        .into());
    }
    if out.exists() {
        std::fs::remove_dir(out)?;
    }
    Ok(())
}

fn cmd_optimize(args: &OptimizeArgs) -> RunResult<()> {
    let config = resolved_config(args)?;
    check_out_dir(&args.out)?;
    let outputs = run_pipeline(&config)?;
    let manifest = RunManifest {
        command: "optimize".into(),
        seed: config.nsga_params.seed,
        config,
        created_unix: unix_now(),
        tracked_replay: true,
        heatmap_cell: HEATMAP_CELL,
        artifacts: artifact_names(),
    };
    write_artifacts(&args.out, manifest, &outputs)?;
    println!(
        "front of {} candidates written to {}",
        outputs.front.members.len(),
        args.out.display()
    );
    Ok(())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct SweepRunSummary {
    value: f64,
    selected_j_lc: f64,
    selected_j_tf: f64,
    selected_total: f64,
    directory: String,
}

#[derive(Serialize)]
struct SweepArtifact {
    key: String,
    values: Vec<f64>,
    runs: Vec<SweepRunSummary>,
    /// Whether selected totals are non-increasing along the grid. Reported,
    /// not enforced.
    totals_non_increasing: bool,
}

fn parse_vary(spec: &str) -> Result<(String, Vec<f64>), Error> {
    let (key, grid) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("vary", "expected key=start:stop:step"))?;
    const KEYS: [&str; 3] = ["lc_initial_speed", "lc_initial_gap", "penetration_ratio"];
    if !KEYS.contains(&key) {
        return Err(Error::config(
            "vary",
            format!("unknown key `{key}`; valid keys: {}", KEYS.join(", ")),
        ));
    }
    let parts: Vec<&str> = grid.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::config("vary", format!("bad grid `{grid}`: {e}")))?;
    let values = match nums.as_slice() {
        [single] => vec![*single],
        [start, stop, step] => {
            if !(*step > 0.0) || stop < start {
                return Err(Error::config("vary", "need step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        _ => {
            return Err(Error::config("vary", "expected start:stop:step or a single value"));
        }
    };
    Ok((key.to_string(), values))
}

fn apply_key(config: &mut ScenarioConfig, key: &str, value: f64) {
    match key {
        "lc_initial_speed" => config.lc_initial_speed = value,
        "lc_initial_gap" => config.lc_initial_gap = value,
        "penetration_ratio" => config.penetration_ratio = value,
        _ => unreachable!("validated key"),
    }
}

fn worker_count(runs: usize) -> usize {
    let cap = std::env::var("LANE_PARETO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    cap.min(runs).max(1)
}

fn cmd_sweep(args: &SweepArgs) -> RunResult<()> {
    let (key, values) = parse_vary(&args.vary)?;
    let base_config = resolved_config(&args.base)?;
    check_out_dir(&args.base.out)?;
    std::fs::create_dir_all(&args.base.out)?;

    // Each grid value is an independent run; validate configs up front so a
    // bad value fails before any directory is written.
    let mut runs: Vec<(f64, String, ScenarioConfig)> = Vec::new();
    for &value in &values {
        let mut config = base_config.clone();
        apply_key(&mut config, &key, value);
        config.validate()?;
        runs.push((value, format!("{key}_{value}"), config));
    }

    let workers = worker_count(runs.len());
    let results: Vec<Result<(RunOutputs, RunManifest, PathBuf), Error>> =
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in runs.chunks(runs.len().div_ceil(workers)) {
                let out_root = args.base.out.clone();
                handles.push(scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|(_, dir, config)| {
                            let outputs = run_pipeline(config)?;
                            let manifest = RunManifest {
                                command: "sweep".into(),
                                seed: config.nsga_params.seed,
                                config: config.clone(),
                                created_unix: unix_now(),
                                tracked_replay: true,
                                heatmap_cell: HEATMAP_CELL,
                                artifacts: artifact_names(),
                            };
                            Ok((outputs, manifest, out_root.join(dir)))
                        })
                        .collect::<Vec<_>>()
                }));
            }
            handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
        });

    let mut summaries = Vec::new();
    for ((value, dir, _), result) in runs.iter().zip(results) {
        let (outputs, manifest, out_dir) = result?;
        write_artifacts(&out_dir, manifest, &outputs)?;
        let selected = outputs
            .front
            .members
            .iter()
            .find(|m| m.selected)
            .expect("selected member present");
        summaries.push(SweepRunSummary {
            value: *value,
            selected_j_lc: selected.objectives[0],
            selected_j_tf: selected.objectives[1],
            selected_total: outputs.selected_total,
            directory: dir.clone(),
        });
    }
    let totals_non_increasing = summaries
        .windows(2)
        .all(|w| w[1].selected_total <= w[0].selected_total + 1e-9);
    let artifact = SweepArtifact {
        key,
        values,
        runs: summaries,
        totals_non_increasing,
    };
    std::fs::write(
        args.base.out.join("sweep.json"),
        serde_json::to_string_pretty(&artifact).expect("serializable") + "\n",
    )?;
    let mut table = String::from("value,selected_j_lc,selected_j_tf,selected_total\n");
    for r in &artifact.runs {
        table.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.value, r.selected_j_lc, r.selected_j_tf, r.selected_total
        ));
    }
    std::fs::write(args.base.out.join("summary.csv"), &table)?;
    print!("{table}");
    println!(
        "selected totals non-increasing along grid: {}",
        artifact.totals_non_increasing
    );
    Ok(())
}

/// Speed color ramp: red (stopped) through yellow to green (30 m/s).
fn speed_color(v: f64) -> String {
    let f = (v / 30.0).clamp(0.0, 1.0);
    let (r, g) = if f < 0.5 {
        (255.0, 510.0 * f)
    } else {
        (510.0 * (1.0 - f), 255.0)
    };
    format!("rgb({},{},40)", r as u8, g as u8)
}

/// Self-contained time-space diagram: speed heatmap cells underneath, one
/// trajectory polyline per vehicle on top.
fn render_svg(trace: &SimulationTrace, grid: &HeatmapGrid) -> String {
    const W: f64 = 900.0;
    const H: f64 = 600.0;
    const MARGIN: f64 = 50.0;
    let t_lo = grid.t_origin;
    let t_hi = grid.t_origin + grid.nt as f64 * grid.dt;
    let x_lo = grid.x_origin;
    let x_hi = grid.x_origin + grid.nx as f64 * grid.dx;
    let sx = |t: f64| MARGIN + (t - t_lo) / (t_hi - t_lo).max(1e-9) * (W - 2.0 * MARGIN);
    let sy = |x: f64| H - MARGIN - (x - x_lo) / (x_hi - x_lo).max(1e-9) * (H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    for (ti, row) in grid.cells.iter().enumerate() {
        for (xi, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                let t0 = grid.t_origin + ti as f64 * grid.dt;
                let x1 = grid.x_origin + (xi + 1) as f64 * grid.dx;
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.5\"/>\n",
                    sx(t0),
                    sy(x1),
                    (W - 2.0 * MARGIN) * grid.dt / (t_hi - t_lo).max(1e-9),
                    (H - 2.0 * MARGIN) * grid.dx / (x_hi - x_lo).max(1e-9),
                    speed_color(*v)
                ));
            }
        }
    }
    let ids: Vec<usize> = trace.ticks[0].states.iter().map(|s| s.id).collect();
    for id in ids {
        let mut points = String::new();
        for tick in &trace.ticks {
            if let Some(s) = tick.states.iter().find(|s| s.id == id) {
                points.push_str(&format!("{:.1},{:.1} ", sx(tick.t), sy(s.x)));
            }
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.7\"/>\n",
            points.trim_end()
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"14\">time (s)</text>\n\
         <text x=\"8\" y=\"{:.0}\" font-size=\"14\" transform=\"rotate(-90 14 {:.0})\">position (m)</text>\n</svg>\n",
        W / 2.0 - 30.0,
        H - 12.0,
        H / 2.0,
        H / 2.0
    ));
    svg
}
