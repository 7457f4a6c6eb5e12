//! Core data model: evaluable SDE systems, candidate invariant regions, time
//! grids and trajectories.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldKind, Result};

/// Signature shared by drift, diffusion and diffusion-Jacobian fields.
///
/// The field writes into `out`, which the caller zeroes beforehand, so a
/// field only has to set its non-zero entries.
pub type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// How the stochastic integral of a system is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpretation {
    Ito,
    Stratonovich,
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpretation::Ito => "ito",
            Interpretation::Stratonovich => "stratonovich",
        })
    }
}

impl std::str::FromStr for Interpretation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ito" => Ok(Interpretation::Ito),
            "stratonovich" | "strat" => Ok(Interpretation::Stratonovich),
            other => Err(Error::usage(format!(
                "unknown interpretation `{other}` (expected ito or stratonovich)"
            ))),
        }
    }
}

/// Dense row-major `rows x cols` matrix, used for diffusion values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A system `dX = f(t, X) dt + g(t, X) dW` with `m` state and `r` noise
/// components.
///
/// Fields are black boxes. The struct is cheap to clone and immutable once
/// built; clones share the underlying closures.
#[derive(Clone)]
pub struct SdeSystem {
    name: String,
    dim: usize,
    noise_dim: usize,
    interpretation: Interpretation,
    drift: Arc<FieldFn>,
    diffusion: Arc<FieldFn>,
    diffusion_jacobian: Option<Arc<FieldFn>>,
    labels: Vec<String>,
    sample_ranges: Vec<(f64, f64)>,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("interpretation", &self.interpretation)
            .field("analytic_jacobian", &self.diffusion_jacobian.is_some())
            .finish()
    }
}

/// Coordinates without a declared range are sampled from this interval.
pub const DEFAULT_SAMPLE_RANGE: (f64, f64) = (-10.0, 10.0);

impl SdeSystem {
    /// Builds an Itô system. `dim` must be positive.
    pub fn new<F, G>(name: impl Into<String>, dim: usize, noise_dim: usize, drift: F, diffusion: G) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::usage("state dimension must be positive"));
        }
        Ok(SdeSystem {
            name: name.into(),
            dim,
            noise_dim,
            interpretation: Interpretation::Ito,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            diffusion_jacobian: None,
            labels: (1..=dim).map(|i| format!("x_{i}")).collect(),
            sample_ranges: vec![DEFAULT_SAMPLE_RANGE; dim],
        })
    }

    /// `f = 0`, `g = 0`.
    pub fn zero(dim: usize, noise_dim: usize) -> Result<Self> {
        SdeSystem::new("zero", dim, noise_dim, |_, _, _| {}, |_, _, _| {})
            .map(|s| s.with_diffusion_jacobian(|_, _, _| {}))
    }

    pub fn with_interpretation(mut self, interpretation: Interpretation) -> Self {
        self.interpretation = interpretation;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Supplies `∂g_ik/∂x_j`, written at offset `(i * r + k) * m + j`.
    pub fn with_diffusion_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != self.dim {
            return Err(Error::usage(format!(
                "{} labels given for a {}-dimensional system",
                labels.len(),
                self.dim
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Plausibility ranges used when a checker must sample coordinates the
    /// candidate region leaves free.
    pub fn with_sample_ranges(mut self, ranges: Vec<(f64, f64)>) -> Result<Self> {
        if ranges.len() != self.dim {
            return Err(Error::usage(format!(
                "{} sample ranges given for a {}-dimensional system",
                ranges.len(),
                self.dim
            )));
        }
        if let Some((lo, hi)) = ranges
            .iter()
            .find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi >= lo))
        {
            return Err(Error::usage(format!("invalid sample range [{lo}, {hi}]")));
        }
        self.sample_ranges = ranges;
        Ok(self)
    }

    pub(crate) fn replace_drift(mut self, drift: Arc<FieldFn>) -> Self {
        self.drift = drift;
        self
    }

    /// Same system with the diffusion switched off.
    pub fn determinized(&self) -> Self {
        let mut sys = self.clone();
        sys.diffusion = Arc::new(|_, _, _| {});
        sys.diffusion_jacobian = Some(Arc::new(|_, _, _| {}));
        sys
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn interpretation(&self) -> Interpretation {
        self.interpretation
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sample_ranges(&self) -> &[(f64, f64)] {
        &self.sample_ranges
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.diffusion_jacobian.is_some()
    }

    pub(crate) fn drift_field(&self) -> &Arc<FieldFn> {
        &self.drift
    }

    fn check_point(&self, t: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::usage(format!(
                "state has length {}, system `{}` has dimension {}",
                x.len(),
                self.name,
                self.dim
            )));
        }
        if !(t >= 0.0) {
            return Err(Error::usage(format!("time must be >= 0, got {t}")));
        }
        Ok(())
    }

    fn non_finite(&self, field: FieldKind, index: Vec<usize>, t: f64, x: &[f64]) -> Error {
        Error::ModelEval {
            model: self.name.clone(),
            field,
            index,
            t,
            x: x.to_vec(),
            context: None,
        }
    }

    /// `f(t, x)`.
    pub fn eval_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(t, x)?;
        let mut out = vec![0.0; self.dim];
        (self.drift)(t, x, &mut out);
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(self.non_finite(FieldKind::Drift, vec![i], t, x));
        }
        Ok(out)
    }

    /// `g(t, x)` as an `m x r` matrix.
    pub fn eval_diffusion(&self, t: f64, x: &[f64]) -> Result<Matrix> {
        self.check_point(t, x)?;
        let mut out = vec![0.0; self.dim * self.noise_dim];
        (self.diffusion)(t, x, &mut out);
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            let idx = vec![p / self.noise_dim, p % self.noise_dim];
            return Err(self.non_finite(FieldKind::Diffusion, idx, t, x));
        }
        Ok(Matrix {
            rows: self.dim,
            cols: self.noise_dim,
            data: out,
        })
    }

    /// Analytic `∂g_ik/∂x_j` laid out as `(i * r + k) * m + j`, when supplied.
    pub fn eval_diffusion_jacobian(&self, t: f64, x: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_point(t, x)?;
        let Some(jac) = &self.diffusion_jacobian else {
            return Ok(None);
        };
        let (m, r) = (self.dim, self.noise_dim);
        let mut out = vec![0.0; m * r * m];
        jac(t, x, &mut out);
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            let idx = vec![p / (r * m), (p / m) % r, p % m];
            return Err(self.non_finite(FieldKind::DiffusionJacobian, idx, t, x));
        }
        Ok(Some(out))
    }

    /// Unchecked drift evaluation into a caller buffer of length `m`.
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.drift)(t, x, out);
    }

    /// Unchecked diffusion evaluation into a row-major buffer of length `m * r`.
    #[inline]
    pub fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.diffusion)(t, x, out);
    }
}

/// Bounds on one coordinate of a [`BoxRegion`]. Infinite bounds are one-sided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub index: usize,
    #[serde(with = "unbounded_lower", default = "neg_inf")]
    pub lower: f64,
    #[serde(with = "unbounded_upper", default = "pos_inf")]
    pub upper: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

// JSON has no infinities: an absent or null bound means unbounded.
macro_rules! optional_bound {
    ($name:ident, $inf:expr) => {
        mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
                if v.is_finite() {
                    s.serialize_some(v)
                } else {
                    s.serialize_none()
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
            }
        }
    };
}
optional_bound!(unbounded_lower, f64::NEG_INFINITY);
optional_bound!(unbounded_upper, f64::INFINITY);

/// Candidate region `{x : a_i <= x_i <= b_i, i in I}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Bound>", into = "Vec<Bound>")]
pub struct BoxRegion {
    bounds: Vec<Bound>,
}

impl BoxRegion {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::usage("a box needs at least one constrained coordinate"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &bounds {
            if !seen.insert(b.index) {
                return Err(Error::usage(format!("coordinate {} constrained twice", b.index)));
            }
            if b.lower.is_nan() || b.upper.is_nan() {
                return Err(Error::usage(format!("NaN bound on coordinate {}", b.index)));
            }
            if !(b.upper > b.lower) {
                return Err(Error::usage(format!(
                    "coordinate {}: upper bound {} must exceed lower bound {}",
                    b.index, b.upper, b.lower
                )));
            }
            if b.lower == f64::INFINITY || b.upper == f64::NEG_INFINITY {
                return Err(Error::usage(format!("coordinate {}: empty interval", b.index)));
            }
        }
        Ok(BoxRegion { bounds })
    }

    /// `[lower, upper]` on each listed coordinate.
    pub fn uniform(indices: &[usize], lower: f64, upper: f64) -> Result<Self> {
        BoxRegion::new(indices.iter().map(|&index| Bound { index, lower, upper }).collect())
    }

    /// The cone `{x_i >= 0, i in I}`.
    pub fn positive_cone(indices: &[usize]) -> Result<Self> {
        BoxRegion::uniform(indices, 0.0, f64::INFINITY)
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn bound_for(&self, index: usize) -> Option<&Bound> {
        self.bounds.iter().find(|b| b.index == index)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.bounds.iter().find(|b| b.index >= dim) {
            Some(b) => Err(Error::usage(format!(
                "box constrains coordinate {} but the system has dimension {dim}",
                b.index
            ))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.bounds
            .iter()
            .all(|b| x[b.index] >= b.lower - tol && x[b.index] <= b.upper + tol)
    }

    /// Same region as an intersection of half-spaces `x_i >= a_i`, `x_i <= b_i`.
    pub fn to_polyhedron(&self, dim: usize) -> Result<Polyhedron> {
        self.check_dim(dim)?;
        let mut halfspaces = Vec::new();
        for b in &self.bounds {
            if b.lower.is_finite() {
                let mut point = vec![0.0; dim];
                let mut normal = vec![0.0; dim];
                point[b.index] = b.lower;
                normal[b.index] = 1.0;
                halfspaces.push(HalfSpace { point, normal });
            }
            if b.upper.is_finite() {
                let mut point = vec![0.0; dim];
                let mut normal = vec![0.0; dim];
                point[b.index] = b.upper;
                normal[b.index] = -1.0;
                halfspaces.push(HalfSpace { point, normal });
            }
        }
        Polyhedron::new(halfspaces)
    }
}

impl TryFrom<Vec<Bound>> for BoxRegion {
    type Error = Error;

    fn try_from(bounds: Vec<Bound>) -> Result<Self> {
        BoxRegion::new(bounds)
    }
}

impl From<BoxRegion> for Vec<Bound> {
    fn from(b: BoxRegion) -> Self {
        b.bounds
    }
}

/// `H_{a,n} = {x : <x - a, n> >= 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl HalfSpace {
    /// `<x - a, n>`; non-negative inside.
    pub fn signed_gap(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.point)
            .zip(&self.normal)
            .map(|((xi, ai), ni)| (xi - ai) * ni)
            .sum()
    }
}

/// Finite intersection of half-spaces. The empty list is all of `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    halfspaces: Vec<HalfSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interior_hint: Option<Vec<f64>>,
}

impl Polyhedron {
    pub fn new(halfspaces: Vec<HalfSpace>) -> Result<Self> {
        for (k, h) in halfspaces.iter().enumerate() {
            if h.point.len() != h.normal.len() {
                return Err(Error::usage(format!("half-space {k}: point and normal lengths differ")));
            }
            let norm2: f64 = h.normal.iter().map(|v| v * v).sum();
            if !(norm2 > 0.0) || !norm2.is_finite() {
                return Err(Error::usage(format!(
                    "half-space {k}: normal must be finite and nonzero"
                )));
            }
        }
        if let Some(w) = halfspaces.windows(2).find(|w| w[0].point.len() != w[1].point.len()) {
            return Err(Error::usage(format!(
                "half-spaces of dimension {} and {} mixed",
                w[0].point.len(),
                w[1].point.len()
            )));
        }
        Ok(Polyhedron {
            halfspaces,
            interior_hint: None,
        })
    }

    /// A point strictly inside, used instead of searching for one.
    pub fn with_interior_point(mut self, x: Vec<f64>) -> Self {
        self.interior_hint = Some(x);
        self
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn interior_hint(&self) -> Option<&[f64]> {
        self.interior_hint.as_deref()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.signed_gap(x) >= -tol)
    }
}

/// Uniform grid `t0 = t_0 < t_1 < ... < t_n = t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::usage(format!("t0 must be finite and >= 0, got {t0}")));
        }
        if !(t_end > t0 && t_end.is_finite()) {
            return Err(Error::usage(format!("t_end must be finite and > t0, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::usage("n_steps must be positive"));
        }
        let grid = TimeGrid { t0, t_end, n_steps };
        if !(grid.dt() > 0.0) {
            return Err(Error::usage("time step underflows to zero"));
        }
        Ok(grid)
    }

    /// Grid on `[t0, t_end]` whose step is as close as possible to `dt`.
    pub fn with_step(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::usage(format!("dt must be positive, got {dt}")));
        }
        let n = ((t_end - t0) / dt).round().max(1.0);
        TimeGrid::new(t0, t_end, n as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// Time of grid point `n`; the last point is exactly `t_end`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_end
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|n| self.time(n))
    }
}

/// First grid point at which a watched region was left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub step: usize,
    pub t: f64,
    pub coordinate: usize,
    pub value: f64,
}

/// One simulated path: states of dimension `m` at the leading grid points.
/// All `n_steps + 1` are present unless the path diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub path_id: u64,
    dim: usize,
    states: Vec<f64>,
    pub first_exit: Option<Exit>,
}

impl Trajectory {
    pub(crate) fn from_flat(grid: TimeGrid, path_id: u64, dim: usize, states: Vec<f64>) -> Self {
        debug_assert!(states.len() <= (grid.n_steps() + 1) * dim && states.len().is_multiple_of(dim));
        Trajectory {
            grid,
            path_id,
            dim,
            states,
            first_exit: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn endpoint(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Writes `t,<labels...>` followed by one row per grid point. Values use
    /// the shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, mut w: W, labels: &[String]) -> Result<()> {
        if labels.len() != self.dim {
            return Err(Error::usage(format!(
                "{} column labels for a {}-dimensional trajectory",
                labels.len(),
                self.dim
            )));
        }
        let mut line = String::from("t");
        for l in labels {
            line.push(',');
            line.push_str(l);
        }
        writeln!(w, "{line}")?;
        for (n, x) in self.states().enumerate() {
            line.clear();
            line.push_str(&self.grid.time(n).to_string());
            for v in x {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
