//! `viability`: check invariance conditions, simulate and run ensembles for SDE models.

mod spec;
mod svg;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};
use viability_core::{
    check_box, correction, ito_to_stratonovich, simulate_partial, simulate_path, stratonovich_to_ito, Bound, BoxRegion,
    CheckReport, EnsembleOptions, Error, Interpretation, JacobianPolicy, Result, Scheme, SimConfig, Trajectory,
    Verdict, WienerGrid,
};

use spec::{ResolvedModel, RunSpec};

#[derive(Parser, Debug)]
#[command(
    name = "viability",
    version,
    about = "Invariance checks and simulation for SDE models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the invariance conditions of a box; exits 0 if satisfied, 2 if violated.
    Check(CheckArgs),
    /// Integrate one path and write it as CSV.
    Simulate(SimulateArgs),
    /// Run many paths and report how many leave the box.
    Ensemble(EnsembleArgs),
    /// Show the Itô-Stratonovich drift correction and compare verdicts across the conversion.
    Convert(ConvertArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Registry name (hh-det, hh-additive, hh-logistic) or path to a model config.
    #[arg(long)]
    model: Option<String>,
    /// Noise intensity: one value, or three per-gate values.
    #[arg(long, num_args = 1..=3, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Model parameter override, e.g. `--param i_app=0.2`.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Seed; falls back to the config file, then to SDE_SEED, then to 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, conflicts_with = "dt")]
    n_steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    /// euler-maruyama, euler-heun or auto.
    #[arg(long)]
    scheme: Option<Scheme>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// ito or stratonovich.
    #[arg(long)]
    interpretation: Option<String>,
    /// Box bound `INDEX:LOWER:UPPER` (empty bound means unbounded); repeat per coordinate.
    #[arg(long = "box", value_name = "I:LO:HI", value_parser = parse_bound, allow_hyphen_values = true)]
    bounds: Vec<Bound>,
    /// Points per face.
    #[arg(long)]
    samples: Option<usize>,
    /// Sampled times per face.
    #[arg(long)]
    times: Option<usize>,
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    interpretation: Option<String>,
    /// Also write `<out>_gating.svg` and `<out>_voltage.svg`.
    #[arg(long)]
    plot: bool,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// ito, stratonovich or both.
    #[arg(long)]
    interpretation: Option<String>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long = "box", value_name = "I:LO:HI", value_parser = parse_bound, allow_hyphen_values = true)]
    bounds: Vec<Bound>,
    /// Slack around the box before a path counts as leaving it.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads (all cores if absent).
    #[arg(long)]
    workers: Option<usize>,
    /// Write every path as CSV into this directory.
    #[arg(long, value_name = "DIR")]
    dump_paths: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Reading of the model before conversion (default stratonovich).
    #[arg(long)]
    interpretation: Option<String>,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_bound(s: &str) -> std::result::Result<Bound, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [i, lo, hi] = parts.as_slice() else {
        return Err(format!("expected INDEX:LOWER:UPPER, got `{s}`"));
    };
    let num = |v: &str, inf: f64| -> std::result::Result<f64, String> {
        if v.trim().is_empty() {
            Ok(inf)
        } else {
            v.trim().parse().map_err(|e| format!("`{v}`: {e}"))
        }
    };
    Ok(Bound {
        index: i.trim().parse().map_err(|e| format!("`{i}`: {e}"))?,
        lower: num(lo, f64::NEG_INFINITY)?,
        upper: num(hi, f64::INFINITY)?,
    })
}

fn region_from(bounds: Vec<Bound>) -> Result<Option<BoxRegion>> {
    if bounds.is_empty() {
        Ok(None)
    } else {
        BoxRegion::new(bounds).map(Some)
    }
}

impl ModelArgs {
    /// Config file (if any) overlaid with these flags.
    fn spec(self, mut flags: RunSpec) -> Result<RunSpec> {
        let file = match &self.config {
            Some(path) => RunSpec::load(path)?,
            None => RunSpec::default(),
        };
        flags.model = self.model;
        flags.sigma = self.sigma;
        flags.seed = self.seed;
        flags.out = self.out;
        if !self.params.is_empty() {
            let map: Map<String, Value> = self.params.into_iter().map(|(k, v)| (k, Value::from(v))).collect();
            flags.params = Some(map);
        }
        Ok(file.overlay(flags))
    }
}

impl GridArgs {
    fn apply(self, flags: &mut RunSpec) {
        flags.t0 = self.t0;
        flags.t_end = self.t_end;
        flags.n_steps = self.n_steps;
        flags.dt = self.dt;
        flags.x0 = self.x0;
        flags.scheme = self.scheme;
    }
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| io_context(e, p))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush().map_err(|e| io_context(e, p))?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn io_context(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let flags = RunSpec {
        interpretation: args.interpretation,
        region: region_from(args.bounds)?,
        ..RunSpec::default()
    };
    let spec = args.model.spec(flags)?;
    let mut cfg = spec.check_config();
    cfg.n_face_samples = args.samples.unwrap_or(cfg.n_face_samples);
    cfg.n_time_samples = args.times.unwrap_or(cfg.n_time_samples);
    cfg.t_max_check = args.t_max.unwrap_or(cfg.t_max_check);
    let interpretation = spec.interpretations(Interpretation::Ito, false)?[0];
    let model = spec.model(interpretation)?;
    let report = check_box(&model.system, &spec.region(), &cfg)?;
    emit_json(spec.out.as_deref(), &report)?;
    eprintln!("{}", check_summary(&report));
    Ok(match report.verdict {
        Verdict::Satisfied => ExitCode::SUCCESS,
        Verdict::Violated => ExitCode::from(2),
    })
}

fn check_summary(report: &CheckReport) -> String {
    let faces_with_witnesses = report.faces.iter().filter(|f| !f.witnesses.is_empty()).count();
    format!(
        "{}: {:?} ({} of {} faces with witnesses)",
        report.model,
        report.verdict,
        faces_with_witnesses,
        report.faces.len()
    )
}

fn sim_config(spec: &RunSpec, region: BoxRegion) -> Result<SimConfig> {
    let mut cfg = SimConfig::new(spec.grid()?, spec.x0(), spec.seed()?).watching(region);
    if let Some(s) = spec.scheme {
        cfg = cfg.with_scheme(s);
    }
    Ok(cfg)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut flags = RunSpec {
        interpretation: args.interpretation,
        plot: args.plot.then_some(true),
        ..RunSpec::default()
    };
    args.grid.apply(&mut flags);
    let spec = args.model.spec(flags)?;
    let plot = spec.plot.unwrap_or(false);
    if plot && spec.out.is_none() {
        return Err(Error::Usage("--plot needs --out to name the figure files".into()));
    }
    let interpretation = spec.interpretations(Interpretation::Ito, false)?[0];
    let model = spec.model(interpretation)?;
    let cfg = sim_config(&spec, spec.region())?;
    let noise = WienerGrid::generate(cfg.seed, 0, cfg.grid, model.system.noise_dim());
    let (traj, divergence) = simulate_partial(&model.system, &cfg, &noise)?;
    let labels = model.system.labels().to_vec();
    emit(spec.out.as_deref(), |w| traj.write_csv(w, &labels))?;
    if let Some(out) = spec.out.as_deref().filter(|_| plot) {
        for (path, svg) in panels(out, &traj, &labels, &model) {
            fs::write(&path, svg).map_err(|e| io_context(e, &path))?;
        }
    }
    match traj.first_exit {
        Some(e) => eprintln!(
            "{}: left the box at t = {} ({} = {})",
            model.system.name(),
            e.t,
            labels[e.coordinate],
            e.value
        ),
        None => eprintln!("{}: stayed in the box", model.system.name()),
    }
    match divergence {
        // The files above hold the finite prefix.
        Some(err) => Err(err),
        None => Ok(ExitCode::SUCCESS),
    }
}

/// Gating and voltage panels, named after the CSV file.
fn panels(out: &Path, traj: &Trajectory, labels: &[String], model: &ResolvedModel) -> Vec<(PathBuf, String)> {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dir = out.parent().unwrap_or(Path::new(""));
    let t: Vec<f64> = traj.grid.times().collect();
    let column = |j: usize| traj.states().map(|x| x[j]).collect::<Vec<f64>>();
    let (voltage, gating): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&j| labels[j] == "V");
    let name = model.system.name();
    let mut out_files = Vec::new();
    for (suffix, title, cols) in [("gating", "Gating Variables", gating), ("voltage", "Voltage", voltage)] {
        if cols.is_empty() {
            continue;
        }
        let series: Vec<svg::Series<'_>> = cols
            .iter()
            .map(|&j| svg::Series {
                label: &labels[j],
                values: column(j),
            })
            .collect();
        let chart = svg::line_chart(&format!("{title} ({name})"), "t", &t, &series);
        out_files.push((dir.join(format!("{stem}_{suffix}.svg")), chart));
    }
    out_files
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<ExitCode> {
    let mut flags = RunSpec {
        interpretation: args.interpretation,
        n_paths: args.n_paths,
        region: region_from(args.bounds)?,
        tol: args.tol,
        workers: args.workers,
        dump_paths: args.dump_paths,
        ..RunSpec::default()
    };
    args.grid.apply(&mut flags);
    let spec = args.model.spec(flags)?;
    let n_paths = spec.n_paths.unwrap_or(1000);
    let region = spec.region();
    let opts = EnsembleOptions {
        workers: spec.workers,
        tol: spec.tol.unwrap_or(0.0),
        ..EnsembleOptions::default()
    };
    let interps = spec.interpretations(Interpretation::Ito, true)?;
    let mut runs = Map::new();
    for interpretation in &interps {
        let model = spec.model(*interpretation)?;
        let cfg = sim_config(&spec, region.clone())?;
        let started = Instant::now();
        let stats = viability_core::run_ensemble_with(&model.system, &cfg, n_paths, &region, &opts)?;
        eprintln!(
            "{} ({}): {} of {} paths left the box, {} diverged ({:.2} s)",
            stats.model,
            interpretation,
            stats.n_violating,
            stats.n_paths,
            stats.failed_paths.len(),
            started.elapsed().as_secs_f64()
        );
        if let Some(dir) = &spec.dump_paths {
            dump_paths(dir, &model, &cfg, n_paths, interps.len() > 1)?;
        }
        runs.insert(interpretation.to_string(), serde_json::to_value(stats)?);
    }
    if runs.len() == 1 {
        let (_, only) = runs.into_iter().next().expect("one run");
        emit_json(spec.out.as_deref(), &only)?;
    } else {
        emit_json(spec.out.as_deref(), &runs)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn dump_paths(dir: &Path, model: &ResolvedModel, cfg: &SimConfig, n_paths: usize, tag: bool) -> Result<()> {
    eprintln!(
        "warning: writing {n_paths} trajectories of {} rows each to {}",
        cfg.grid.n_steps() + 1,
        dir.display()
    );
    fs::create_dir_all(dir).map_err(|e| io_context(e, dir))?;
    let labels = model.system.labels().to_vec();
    let suffix = if tag {
        format!("_{}", model.system.interpretation())
    } else {
        String::new()
    };
    for id in 0..n_paths as u64 {
        let path = dir.join(format!("path_{id:06}{suffix}.csv"));
        match simulate_path(&model.system, cfg, id) {
            Ok(traj) => emit(Some(&path), |w| traj.write_csv(w, &labels))?,
            Err(Error::Integration { step, t, .. }) => {
                eprintln!("path {id} diverged at step {step} (t = {t}); no file written")
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CorrectionSample {
    x: Vec<f64>,
    analytic: Vec<f64>,
    central_difference: Vec<f64>,
    /// `σ_i² x_i (1 - x_i)(1 - 2 x_i)` for logistic noise, zero otherwise.
    formula: Vec<f64>,
}

#[derive(Serialize)]
struct ConvertSummary {
    model: String,
    sigma: Vec<f64>,
    from: Interpretation,
    to: Interpretation,
    /// The converted drift is `f + sign · h / 2` with `h` as sampled below.
    sign: f64,
    samples: Vec<CorrectionSample>,
    max_abs_correction: f64,
    max_analytic_vs_central_difference: f64,
    max_deviation_from_formula: f64,
    verdict_original: Verdict,
    verdict_converted: Verdict,
    verdict_equality: &'static str,
}

const GATE_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const VOLTAGE_LEVELS: [f64; 3] = [-80.0, -60.0, 20.0];

fn cmd_convert(args: ConvertArgs) -> Result<ExitCode> {
    let flags = RunSpec {
        interpretation: args.interpretation,
        ..RunSpec::default()
    };
    let spec = args.model.spec(flags)?;
    let from = spec.interpretations(Interpretation::Stratonovich, false)?[0];
    let model = spec.model(from)?;
    let sys = &model.system;
    let (converted, to, sign) = match from {
        Interpretation::Stratonovich => (
            stratonovich_to_ito(sys, JacobianPolicy::default())?,
            Interpretation::Ito,
            1.0,
        ),
        Interpretation::Ito => (
            ito_to_stratonovich(sys, JacobianPolicy::default())?,
            Interpretation::Stratonovich,
            -1.0,
        ),
    };
    let sigma: Vec<f64> = match model.opts.sigma.as_slice() {
        [s] => vec![*s; 3],
        s => s.to_vec(),
    };
    let logistic = model.base == "hh-logistic";
    let mut samples = Vec::new();
    let (mut max_h, mut max_fd, mut max_formula) = (0.0f64, 0.0f64, 0.0f64);
    for &v in &VOLTAGE_LEVELS {
        for &a in &GATE_LEVELS {
            for &b in &GATE_LEVELS {
                for &c in &GATE_LEVELS {
                    let x = vec![a, b, c, v];
                    let analytic = correction(sys, 0.0, &x, JacobianPolicy::Analytic)?;
                    let central = correction(sys, 0.0, &x, JacobianPolicy::default())?;
                    let formula: Vec<f64> = (0..4)
                        .map(|i| {
                            if logistic && i < 3 {
                                sigma[i] * sigma[i] * x[i] * (1.0 - x[i]) * (1.0 - 2.0 * x[i])
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    for i in 0..4 {
                        max_h = max_h.max(analytic[i].abs());
                        max_fd = max_fd.max((analytic[i] - central[i]).abs());
                        max_formula = max_formula.max((central[i] - formula[i]).abs());
                    }
                    samples.push(CorrectionSample {
                        x,
                        analytic,
                        central_difference: central,
                        formula,
                    });
                }
            }
        }
    }
    let region = spec.region();
    let cfg = spec.check_config();
    let original = check_box(sys, &region, &cfg)?;
    let after = check_box(&converted, &region, &cfg)?;
    let summary = ConvertSummary {
        model: sys.name().to_string(),
        sigma: if model.base == "hh-det" { Vec::new() } else { sigma },
        from,
        to,
        sign,
        samples,
        max_abs_correction: max_h,
        max_analytic_vs_central_difference: max_fd,
        max_deviation_from_formula: max_formula,
        verdict_original: original.verdict,
        verdict_converted: after.verdict,
        verdict_equality: if original.verdict == after.verdict {
            "equal"
        } else {
            "different"
        },
    };
    emit_json(spec.out.as_deref(), &summary)?;
    eprintln!(
        "{}: max |h| = {max_h:e}, verdicts {:?} -> {:?} ({})",
        summary.model, summary.verdict_original, summary.verdict_converted, summary.verdict_equality
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
