//! Fixed-step strong integrators driven by reproducible Wiener increments.
//!
//! Euler-Maruyama is consistent with the Itô reading of a system, Euler-Heun
//! with the Stratonovich reading. Both consume the same [`WienerGrid`], so a
//! path can be replayed under either scheme.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;
use crate::system::{BoxRegion, Exit, Interpretation, SdeSystem, TimeGrid, Trajectory};

/// Discretized `r`-dimensional Wiener process on a time grid.
///
/// Increment `(step, component)` is the `step * r + component`-th draw of
/// the ChaCha8 stream `(seed, path_id)`, mapped to `N(0, dt)` by the normal
/// quantile function. Distinct path ids use distinct streams.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerGrid {
    seed: u64,
    path_id: u64,
    grid: TimeGrid,
    noise_dim: usize,
    increments: Vec<f64>,
}

impl WienerGrid {
    pub fn generate(seed: u64, path_id: u64, grid: TimeGrid, noise_dim: usize) -> Self {
        let mut rng = sampling::stream(seed, path_id);
        let sd = grid.dt().sqrt();
        let increments = (0..grid.n_steps() * noise_dim)
            .map(|_| sd * sampling::next_normal(&mut rng))
            .collect();
        WienerGrid {
            seed,
            path_id,
            grid,
            noise_dim,
            increments,
        }
    }

    /// Wraps externally produced increments, row-major `n_steps x r`.
    pub fn from_increments(grid: TimeGrid, noise_dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() * noise_dim {
            return Err(Error::usage(format!(
                "{} increments supplied, grid needs {} x {noise_dim}",
                increments.len(),
                grid.n_steps()
            )));
        }
        Ok(WienerGrid {
            seed: 0,
            path_id: 0,
            grid,
            noise_dim,
            increments,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// `ΔW_n`.
    pub fn increment(&self, n: usize) -> &[f64] {
        &self.increments[n * self.noise_dim..(n + 1) * self.noise_dim]
    }

    /// `W(t_end) - W(t0)`.
    pub fn total(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.noise_dim];
        for dw in self.increments.chunks_exact(self.noise_dim.max(1)) {
            for (a, b) in w.iter_mut().zip(dw) {
                *a += b;
            }
        }
        w
    }

    /// Same Brownian path on a grid `factor` times coarser, by summing
    /// consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid.n_steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::usage(format!(
                "cannot coarsen {n} steps by a factor of {factor}"
            )));
        }
        let grid = TimeGrid::new(self.grid.t0(), self.grid.t_end(), n / factor)?;
        let r = self.noise_dim;
        let mut increments = vec![0.0; grid.n_steps() * r];
        for (coarse, chunk) in increments
            .chunks_exact_mut(r.max(1))
            .zip(self.increments.chunks_exact((factor * r).max(1)))
        {
            for fine in chunk.chunks_exact(r) {
                for (c, f) in coarse.iter_mut().zip(fine) {
                    *c += f;
                }
            }
        }
        Ok(WienerGrid {
            seed: self.seed,
            path_id: self.path_id,
            grid,
            noise_dim: r,
            increments,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    EulerHeun,
    /// Euler-Maruyama for Itô systems, Euler-Heun for Stratonovich ones.
    Auto,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::EulerMaruyama => "euler-maruyama",
            Scheme::EulerHeun => "euler-heun",
            Scheme::Auto => "auto",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler-maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "euler-heun" | "heun" => Ok(Scheme::EulerHeun),
            "auto" => Ok(Scheme::Auto),
            other => Err(Error::usage(format!(
                "unknown scheme `{other}` (expected euler-maruyama, euler-heun or auto)"
            ))),
        }
    }
}

/// What to do when a state leaves the watched region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampPolicy {
    None,
    /// Record the first exit in [`Trajectory::first_exit`]; states are never altered.
    #[default]
    ReportOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub scheme: Scheme,
    /// Allows Euler-Maruyama on a Stratonovich system and Euler-Heun on an Itô one.
    pub force_scheme: bool,
    pub seed: u64,
    pub clamp_policy: ClampPolicy,
    /// Region whose first exit is recorded under [`ClampPolicy::ReportOnly`].
    pub watch: Option<BoxRegion>,
}

impl SimConfig {
    pub fn new(grid: TimeGrid, x0: Vec<f64>, seed: u64) -> Self {
        SimConfig {
            grid,
            x0,
            scheme: Scheme::Auto,
            force_scheme: false,
            seed,
            clamp_policy: ClampPolicy::ReportOnly,
            watch: None,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn forced(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self.force_scheme = true;
        self
    }

    pub fn watching(mut self, region: BoxRegion) -> Self {
        self.watch = Some(region);
        self
    }

    /// Scheme actually used for `sys`.
    pub fn resolve_scheme(&self, sys: &SdeSystem) -> Result<Scheme> {
        let natural = match sys.interpretation() {
            Interpretation::Ito => Scheme::EulerMaruyama,
            Interpretation::Stratonovich => Scheme::EulerHeun,
        };
        match self.scheme {
            Scheme::Auto => Ok(natural),
            s if s == natural || self.force_scheme => Ok(s),
            s => Err(Error::usage(format!(
                "{s} is inconsistent with the {} reading of `{}`; set force_scheme to override",
                sys.interpretation(),
                sys.name()
            ))),
        }
    }

    pub(crate) fn validate(&self, sys: &SdeSystem) -> Result<()> {
        if self.x0.len() != sys.dim() {
            return Err(Error::usage(format!(
                "initial state has length {}, system `{}` has dimension {}",
                self.x0.len(),
                sys.name(),
                sys.dim()
            )));
        }
        if let Some(i) = self.x0.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("initial state component {i} is not finite")));
        }
        if let Some(w) = &self.watch {
            w.check_dim(sys.dim())?;
        }
        Ok(())
    }
}

struct ExitWatch<'a> {
    region: Option<&'a BoxRegion>,
    exit: Option<Exit>,
}

impl ExitWatch<'_> {
    fn observe(&mut self, step: usize, t: f64, x: &[f64]) {
        let Some(region) = self.region else { return };
        if self.exit.is_some() {
            return;
        }
        if let Some(b) = region
            .bounds()
            .iter()
            .find(|b| !(x[b.index] >= b.lower && x[b.index] <= b.upper))
        {
            self.exit = Some(Exit {
                step,
                t,
                coordinate: b.index,
                value: x[b.index],
            });
        }
    }
}

/// Integrates one path of `sys` against `noise`.
pub fn simulate(sys: &SdeSystem, cfg: &SimConfig, noise: &WienerGrid) -> Result<Trajectory> {
    match simulate_partial(sys, cfg, noise)? {
        (traj, None) => Ok(traj),
        (_, Some(err)) => Err(err),
    }
}

/// Like [`simulate`], but a diverging path yields its finite prefix together
/// with the [`Error::Integration`] describing where it stopped.
pub fn simulate_partial(sys: &SdeSystem, cfg: &SimConfig, noise: &WienerGrid) -> Result<(Trajectory, Option<Error>)> {
    cfg.validate(sys)?;
    if noise.grid != cfg.grid {
        return Err(Error::usage("noise grid differs from the simulation grid"));
    }
    if noise.noise_dim != sys.noise_dim() {
        return Err(Error::usage(format!(
            "noise has {} components, system `{}` has {}",
            noise.noise_dim,
            sys.name(),
            sys.noise_dim()
        )));
    }
    let heun = cfg.resolve_scheme(sys)? == Scheme::EulerHeun;
    let (m, r) = (sys.dim(), sys.noise_dim());
    let grid = cfg.grid;
    let dt = grid.dt();
    let n_steps = grid.n_steps();

    let mut states = Vec::with_capacity((n_steps + 1) * m);
    states.extend_from_slice(&cfg.x0);
    let mut watch = ExitWatch {
        region: match cfg.clamp_policy {
            ClampPolicy::ReportOnly => cfg.watch.as_ref(),
            ClampPolicy::None => None,
        },
        exit: None,
    };
    watch.observe(0, grid.time(0), &cfg.x0);

    let mut x = cfg.x0.clone();
    let mut next = vec![0.0; m];
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m * r];
    let mut predictor = vec![0.0; m];
    let mut g_pred = vec![0.0; m * r];

    for n in 0..n_steps {
        let t = grid.time(n);
        let dw = noise.increment(n);
        sys.drift_into(t, &x, &mut f);
        sys.diffusion_into(t, &x, &mut g);
        if heun {
            for i in 0..m {
                let mut acc = x[i] + f[i] * dt;
                for k in 0..r {
                    acc += g[i * r + k] * dw[k];
                }
                predictor[i] = acc;
            }
            sys.diffusion_into(grid.time(n + 1), &predictor, &mut g_pred);
            for i in 0..m {
                let mut acc = x[i] + f[i] * dt;
                for k in 0..r {
                    acc += (0.5 * (g[i * r + k] + g_pred[i * r + k])) * dw[k];
                }
                next[i] = acc;
            }
        } else {
            for i in 0..m {
                let mut acc = x[i] + f[i] * dt;
                for k in 0..r {
                    acc += g[i * r + k] * dw[k];
                }
                next[i] = acc;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            let err = Error::Integration {
                model: sys.name().to_string(),
                step: n + 1,
                t: grid.time(n + 1),
                last_state: x,
            };
            let mut traj = Trajectory::from_flat(grid, noise.path_id, m, states);
            traj.first_exit = watch.exit;
            return Ok((traj, Some(err)));
        }
        std::mem::swap(&mut x, &mut next);
        watch.observe(n + 1, grid.time(n + 1), &x);
        states.extend_from_slice(&x);
    }

    let mut traj = Trajectory::from_flat(grid, noise.path_id, m, states);
    traj.first_exit = watch.exit;
    Ok((traj, None))
}

/// Draws the noise for `path_id` from `cfg.seed` and integrates.
pub fn simulate_path(sys: &SdeSystem, cfg: &SimConfig, path_id: u64) -> Result<Trajectory> {
    let noise = WienerGrid::generate(cfg.seed, path_id, cfg.grid, sys.noise_dim());
    simulate(sys, cfg, &noise)
}

/// Forward-Euler trajectory of the drift alone, whatever the diffusion.
pub fn simulate_deterministic(sys: &SdeSystem, cfg: &SimConfig) -> Result<Trajectory> {
    let det = sys.determinized();
    let noise = WienerGrid::from_increments(
        cfg.grid,
        det.noise_dim(),
        vec![0.0; cfg.grid.n_steps() * det.noise_dim()],
    )?;
    let cfg = SimConfig {
        scheme: Scheme::EulerMaruyama,
        force_scheme: true,
        ..cfg.clone()
    };
    simulate(&det, &cfg, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hh_metadata, hh_system, HHParams, NoiseSpec};

    fn gbm(a: f64, b: f64) -> SdeSystem {
        SdeSystem::new(
            "gbm",
            1,
            1,
            move |_, x: &[f64], o: &mut [f64]| o[0] = a * x[0],
            move |_, x: &[f64], o: &mut [f64]| o[0] = b * x[0],
        )
        .unwrap()
    }

    #[test]
    fn wiener_grid_reproducible() {
        let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let a = WienerGrid::generate(9, 4, grid, 3);
        let b = WienerGrid::generate(9, 4, grid, 3);
        let c = WienerGrid::generate(9, 5, grid, 3);
        assert_eq!(a, b);
        assert_ne!(a.increment(0), c.increment(0));
        assert_eq!(a.increment(63).len(), 3);
    }

    #[test]
    fn coarsen_preserves_total() {
        let grid = TimeGrid::new(0.0, 1.0, 1024).unwrap();
        let w = WienerGrid::generate(1, 0, grid, 2);
        let c = w.coarsen(64).unwrap();
        assert_eq!(c.grid().n_steps(), 16);
        for (a, b) in w.total().iter().zip(c.total()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(w.coarsen(3).is_err());
    }

    #[test]
    fn zero_system_is_constant() {
        let sys = SdeSystem::zero(3, 2).unwrap();
        let cfg = SimConfig::new(TimeGrid::new(0.0, 2.0, 50).unwrap(), vec![1.0, -2.0, 0.5], 3);
        let traj = simulate_path(&sys, &cfg, 0).unwrap();
        assert_eq!(traj.len(), 51);
        assert!(traj.states().all(|x| x == [1.0, -2.0, 0.5]));
    }

    #[test]
    fn exponential_decay_deterministic() {
        let sys = SdeSystem::new(
            "decay",
            1,
            1,
            |_, x: &[f64], o: &mut [f64]| o[0] = -x[0],
            |_, _, o: &mut [f64]| o[0] = 1.0,
        )
        .unwrap();
        for n in [100usize, 1000] {
            let cfg = SimConfig::new(TimeGrid::new(0.0, 1.0, n).unwrap(), vec![1.0], 0);
            let end = simulate_deterministic(&sys, &cfg).unwrap().endpoint()[0];
            let dt = 1.0 / n as f64;
            // forward Euler gives (1 - dt)^n; global error ~ e^-1 dt / 2
            assert!((end - (-1.0f64).exp()).abs() < dt, "{n}: {end}");
            assert!((end - (1.0 - dt).powi(n as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn scheme_resolution() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let ito = gbm(0.1, 0.2);
        let strat = ito.clone().with_interpretation(Interpretation::Stratonovich);
        let cfg = SimConfig::new(grid, vec![1.0], 0);
        assert_eq!(cfg.resolve_scheme(&ito).unwrap(), Scheme::EulerMaruyama);
        assert_eq!(cfg.resolve_scheme(&strat).unwrap(), Scheme::EulerHeun);
        let em = cfg.clone().with_scheme(Scheme::EulerMaruyama);
        assert!(matches!(simulate_path(&strat, &em, 0), Err(Error::Usage(_))));
        let heun = cfg.clone().with_scheme(Scheme::EulerHeun);
        assert!(heun.resolve_scheme(&ito).is_err());
        assert!(cfg.forced(Scheme::EulerHeun).resolve_scheme(&ito).is_ok());
    }

    #[test]
    fn usage_errors() {
        let sys = gbm(0.1, 0.2);
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let cfg = SimConfig::new(grid, vec![1.0, 2.0], 0);
        assert!(matches!(simulate_path(&sys, &cfg, 0), Err(Error::Usage(_))));
        let cfg = SimConfig::new(grid, vec![1.0], 0);
        let other = WienerGrid::generate(0, 0, TimeGrid::new(0.0, 1.0, 8).unwrap(), 1);
        assert!(simulate(&sys, &cfg, &other).is_err());
        let wide = WienerGrid::generate(0, 0, grid, 2);
        assert!(simulate(&sys, &cfg, &wide).is_err());
    }

    #[test]
    fn divergence_reports_step_and_last_state() {
        let sys = SdeSystem::new(
            "blowup",
            1,
            0,
            |_, x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0],
            |_, _, _| {},
        )
        .unwrap();
        let cfg = SimConfig::new(TimeGrid::new(0.0, 10.0, 10).unwrap(), vec![10.0], 0);
        match simulate_path(&sys, &cfg, 0) {
            Err(Error::Integration { step, last_state, .. }) => {
                assert!(step > 1);
                assert!(last_state[0].is_finite());
            }
            other => panic!("{other:?}"),
        }
        let noise = WienerGrid::generate(0, 0, cfg.grid, 0);
        let (prefix, err) = simulate_partial(&sys, &cfg, &noise).unwrap();
        let Some(Error::Integration { step, last_state, .. }) = err else {
            panic!("{err:?}")
        };
        assert_eq!(prefix.len(), step);
        assert_eq!(prefix.endpoint(), last_state.as_slice());
        assert_eq!(prefix.state(1)[0], 110.0);
    }

    #[test]
    fn additive_noise_em_equals_heun() {
        let sys = hh_system(HHParams::default(), NoiseSpec::Additive([0.1; 3])).unwrap();
        let meta = hh_metadata();
        let grid = TimeGrid::new(0.0, 5.0, 500).unwrap();
        let noise = WienerGrid::generate(11, 0, grid, 3);
        let cfg = SimConfig::new(grid, meta.initial_state.to_vec(), 11);
        let em = simulate(&sys, &cfg.clone().forced(Scheme::EulerMaruyama), &noise).unwrap();
        let heun = simulate(&sys, &cfg.forced(Scheme::EulerHeun), &noise).unwrap();
        assert_eq!(em, heun);
    }

    #[test]
    fn report_only_records_exit_without_altering() {
        let sys = SdeSystem::new("drift-down", 1, 0, |_, _, o: &mut [f64]| o[0] = -1.0, |_, _, _| {}).unwrap();
        let cfg = SimConfig::new(TimeGrid::new(0.0, 1.0, 10).unwrap(), vec![0.25], 0)
            .watching(BoxRegion::positive_cone(&[0]).unwrap());
        let traj = simulate_path(&sys, &cfg, 0).unwrap();
        let exit = traj.first_exit.unwrap();
        assert_eq!(exit.step, 3);
        assert!(exit.value < 0.0);
        assert!(traj.endpoint()[0] < -0.7);
        let quiet = SimConfig {
            clamp_policy: ClampPolicy::None,
            ..cfg
        };
        assert!(simulate_path(&sys, &quiet, 0).unwrap().first_exit.is_none());
    }
}
