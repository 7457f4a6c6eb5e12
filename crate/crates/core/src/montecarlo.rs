//! Path ensembles and empirical invariance statistics.
//!
//! Paths are simulated in parallel but every reduction runs in path-id
//! order, so the statistics are bitwise independent of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{simulate, Scheme, SimConfig, WienerGrid};
use crate::system::{BoxRegion, Interpretation, SdeSystem};

/// Quantile levels of the summary trajectories.
pub const QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// A coordinate counts as outside when it leaves `[a - tol, b + tol]`.
    pub tol: f64,
    /// Grid points kept in the summary trajectories (the endpoint is always kept).
    pub summary_points: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            workers: None,
            tol: 0.0,
            summary_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstExit {
    pub path_id: u64,
    pub step: usize,
    pub t: f64,
    pub coordinate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPath {
    pub path_id: u64,
    pub step: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
}

/// Mean and nearest-rank quantiles across paths, on a thinned grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub times: Vec<f64>,
    pub quantile_levels: Vec<f64>,
    /// `mean[coordinate][point]`.
    pub mean: Vec<Vec<f64>>,
    /// `quantiles[level][coordinate][point]`.
    pub quantiles: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub model: String,
    pub interpretation: Interpretation,
    pub scheme: Scheme,
    pub seed: u64,
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub region: BoxRegion,
    pub tol: f64,
    pub n_paths: usize,
    /// Paths that left the region or diverged.
    pub n_violating: usize,
    pub violation_fraction: f64,
    pub first_exit_times: Vec<FirstExit>,
    pub failed_paths: Vec<FailedPath>,
    /// Over all finite paths and grid points.
    pub per_coordinate_extrema: Vec<Extrema>,
    pub summary: Summary,
}

impl EnsembleStats {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum PathOutcome {
    Finite {
        exit: Option<FirstExit>,
        min: Vec<f64>,
        max: Vec<f64>,
        /// Thinned states, `points x m`.
        thinned: Vec<f64>,
    },
    Failed(FailedPath),
}

fn summary_indices(n_steps: usize, points: usize) -> Vec<usize> {
    let points = points.clamp(2, n_steps + 1);
    let mut idx: Vec<usize> = (0..points).map(|k| k * n_steps / (points - 1)).collect();
    idx.dedup();
    idx
}

fn run_path(
    sys: &SdeSystem,
    cfg: &SimConfig,
    region: &BoxRegion,
    tol: f64,
    keep: &[usize],
    path_id: u64,
) -> PathOutcome {
    let noise = WienerGrid::generate(cfg.seed, path_id, cfg.grid, sys.noise_dim());
    match simulate(sys, cfg, &noise) {
        Ok(traj) => {
            let m = sys.dim();
            let mut min = vec![f64::INFINITY; m];
            let mut max = vec![f64::NEG_INFINITY; m];
            let mut exit = None;
            for (n, x) in traj.states().enumerate() {
                for j in 0..m {
                    min[j] = min[j].min(x[j]);
                    max[j] = max[j].max(x[j]);
                }
                if exit.is_none() {
                    if let Some(b) = region
                        .bounds()
                        .iter()
                        .find(|b| !(x[b.index] >= b.lower - tol && x[b.index] <= b.upper + tol))
                    {
                        exit = Some(FirstExit {
                            path_id,
                            step: n,
                            t: traj.grid.time(n),
                            coordinate: b.index,
                            value: x[b.index],
                        });
                    }
                }
            }
            let thinned = keep.iter().flat_map(|&n| traj.state(n).iter().copied()).collect();
            PathOutcome::Finite {
                exit,
                min,
                max,
                thinned,
            }
        }
        Err(Error::Integration { step, t, .. }) => PathOutcome::Failed(FailedPath { path_id, step, t }),
        // usage errors are rejected before the ensemble starts
        Err(e) => unreachable!("unexpected simulation error: {e}"),
    }
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(0) => Err(Error::usage("worker count must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Simulates paths `0..n_paths` and measures how often they leave `region`.
pub fn run_ensemble(sys: &SdeSystem, cfg: &SimConfig, n_paths: usize, region: &BoxRegion) -> Result<EnsembleStats> {
    run_ensemble_with(sys, cfg, n_paths, region, &EnsembleOptions::default())
}

pub fn run_ensemble_with(
    sys: &SdeSystem,
    cfg: &SimConfig,
    n_paths: usize,
    region: &BoxRegion,
    opts: &EnsembleOptions,
) -> Result<EnsembleStats> {
    if n_paths == 0 {
        return Err(Error::usage("n_paths must be at least 1"));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::usage("violation tolerance must be >= 0"));
    }
    region.check_dim(sys.dim())?;
    let scheme = cfg.resolve_scheme(sys)?;
    cfg.validate(sys)?;

    let keep = summary_indices(cfg.grid.n_steps(), opts.summary_points);
    let outcomes: Vec<PathOutcome> = in_pool(opts.workers, || {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|p| run_path(sys, cfg, region, opts.tol, &keep, p))
            .collect()
    })?;

    let m = sys.dim();
    let mut extrema = vec![
        Extrema {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY
        };
        m
    ];
    let mut first_exit_times = Vec::new();
    let mut failed_paths = Vec::new();
    let mut finite: Vec<&[f64]> = Vec::new();
    for outcome in &outcomes {
        match outcome {
            PathOutcome::Finite {
                exit,
                min,
                max,
                thinned,
            } => {
                for j in 0..m {
                    extrema[j].min = extrema[j].min.min(min[j]);
                    extrema[j].max = extrema[j].max.max(max[j]);
                }
                if let Some(e) = exit {
                    first_exit_times.push(e.clone());
                }
                finite.push(thinned);
            }
            PathOutcome::Failed(f) => failed_paths.push(f.clone()),
        }
    }
    let n_violating = first_exit_times.len() + failed_paths.len();

    let points = keep.len();
    let mut mean = vec![vec![0.0; points]; m];
    let mut quantiles = vec![vec![vec![0.0; points]; m]; QUANTILES.len()];
    if !finite.is_empty() {
        let mut column = Vec::with_capacity(finite.len());
        for j in 0..m {
            for p in 0..points {
                column.clear();
                column.extend(finite.iter().map(|s| s[p * m + j]));
                mean[j][p] = column.iter().sum::<f64>() / column.len() as f64;
                column.sort_by(f64::total_cmp);
                for (q, level) in QUANTILES.iter().enumerate() {
                    quantiles[q][j][p] = nearest_rank(&column, *level);
                }
            }
        }
    }

    Ok(EnsembleStats {
        model: sys.name().to_string(),
        interpretation: sys.interpretation(),
        scheme,
        seed: cfg.seed,
        t0: cfg.grid.t0(),
        t_end: cfg.grid.t_end(),
        n_steps: cfg.grid.n_steps(),
        region: region.clone(),
        tol: opts.tol,
        n_paths,
        n_violating,
        violation_fraction: n_violating as f64 / n_paths as f64,
        first_exit_times,
        failed_paths,
        per_coordinate_extrema: extrema,
        summary: Summary {
            times: keep.iter().map(|&n| cfg.grid.time(n)).collect(),
            quantile_levels: QUANTILES.to_vec(),
            mean,
            quantiles,
        },
    })
}

/// Endpoint gap between the Itô (Euler-Maruyama) and Stratonovich
/// (Euler-Heun) readings of one system on shared noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationGap {
    pub model: String,
    pub n_paths: usize,
    /// Paths where either scheme diverged; excluded from the gap.
    pub n_failed: usize,
    /// Root-mean-square endpoint difference per coordinate.
    pub rms_gap: Vec<f64>,
    pub max_abs_gap: f64,
}

pub fn compare_interpretations(
    sys: &SdeSystem,
    cfg: &SimConfig,
    n_paths: usize,
    workers: Option<usize>,
) -> Result<InterpretationGap> {
    if n_paths == 0 {
        return Err(Error::usage("n_paths must be at least 1"));
    }
    let ito = sys.clone().with_interpretation(Interpretation::Ito);
    let strat = sys.clone().with_interpretation(Interpretation::Stratonovich);
    let em_cfg = cfg.clone().forced(Scheme::EulerMaruyama);
    let heun_cfg = cfg.clone().forced(Scheme::EulerHeun);
    let m = sys.dim();

    let pairs: Vec<Result<Option<Vec<f64>>>> = in_pool(workers, || {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|p| {
                let noise = WienerGrid::generate(cfg.seed, p, cfg.grid, sys.noise_dim());
                let a = simulate(&ito, &em_cfg, &noise);
                let b = simulate(&strat, &heun_cfg, &noise);
                match (a, b) {
                    (Ok(a), Ok(b)) => Ok(Some(
                        a.endpoint().iter().zip(b.endpoint()).map(|(x, y)| x - y).collect(),
                    )),
                    (Err(Error::Integration { .. }), _) | (_, Err(Error::Integration { .. })) => Ok(None),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                }
            })
            .collect()
    })?;

    let mut sq = vec![0.0; m];
    let mut ok = 0usize;
    let mut max_abs: f64 = 0.0;
    for pair in pairs {
        if let Some(d) = pair? {
            ok += 1;
            for (s, v) in sq.iter_mut().zip(&d) {
                *s += v * v;
                max_abs = max_abs.max(v.abs());
            }
        }
    }
    let rms_gap = sq
        .iter()
        .map(|s| if ok == 0 { f64::NAN } else { (s / ok as f64).sqrt() })
        .collect();
    Ok(InterpretationGap {
        model: sys.name().to_string(),
        n_paths,
        n_failed: n_paths - ok,
        rms_gap,
        max_abs_gap: max_abs,
    })
}
