//! Sampling-based checkers for the boundary conditions that characterize
//! invariance of boxes, cones and polyhedra, and pathwise comparison of two
//! systems.
//!
//! Each checker evaluates the drift and diffusion on deterministic samples of
//! every boundary face at a grid of times. A report is a falsifier with
//! quantified coverage: `Violated` comes with concrete witness points,
//! `Satisfied` means no sample broke a condition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, Halton};
use crate::system::{Bound, BoxRegion, HalfSpace, Polyhedron, SdeSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    /// Points sampled on each face.
    pub n_face_samples: usize,
    /// Times in `[0, t_max_check]`, evenly spaced and always including 0.
    pub n_time_samples: usize,
    pub t_max_check: f64,
    /// Drift conditions tolerate `-eps_drift` of the wrong sign.
    pub eps_drift: f64,
    /// Diffusion conditions accept `|value| <= eps_diff`.
    pub eps_diff: f64,
    pub sampler_seed: u64,
    /// Witnesses kept per face; further violations are only counted.
    pub max_witnesses_per_face: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            n_face_samples: 4096,
            n_time_samples: 16,
            t_max_check: 100.0,
            eps_drift: 1e-9,
            eps_diff: 1e-12,
            sampler_seed: 0,
            max_witnesses_per_face: 8,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_face_samples == 0 {
            return Err(Error::usage("n_face_samples must be at least 1: empty face sample set"));
        }
        if self.n_time_samples == 0 {
            return Err(Error::usage("n_time_samples must be at least 1"));
        }
        if !(self.t_max_check >= 0.0 && self.t_max_check.is_finite()) {
            return Err(Error::usage(format!(
                "t_max_check must be finite and >= 0, got {}",
                self.t_max_check
            )));
        }
        if !(self.eps_drift > 0.0) || !(self.eps_diff > 0.0) {
            return Err(Error::usage("tolerances must be positive"));
        }
        if self.max_witnesses_per_face == 0 {
            return Err(Error::usage("max_witnesses_per_face must be at least 1"));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.n_time_samples;
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|k| self.t_max_check * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    DriftSign,
    DiffusionNonzero,
}

/// Which part of the boundary a face report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `x_i = a_i`.
    Lower,
    /// `x_i = b_i`.
    Upper,
    /// `<x - a, n> = 0` of a polyhedron.
    Hyperplane,
    /// Pairs with `x_i = y_i`.
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    /// Index of the sampled point on the face.
    pub sample: u64,
    pub x: Vec<f64>,
    /// Second point of a comparison pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub quantity: Quantity,
    /// Noise column for diffusion witnesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    /// Coordinate for box and comparison faces, half-space for polyhedra.
    pub index: usize,
    pub side: Side,
    /// Evaluated (point, time) pairs.
    pub samples: usize,
    /// Smallest drift margin seen; non-negative means the drift condition held.
    pub min_drift_margin: Option<f64>,
    /// Largest absolute diffusion quantity seen.
    pub max_diffusion_abs: Option<f64>,
    pub violations: usize,
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Box,
    Positivity,
    Polyhedron,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: CheckKind,
    pub model: String,
    pub verdict: Verdict,
    pub faces: Vec<FaceReport>,
    pub config_echo: CheckConfig,
}

impl CheckReport {
    fn assemble(check: CheckKind, model: &str, faces: Vec<FaceReport>, cfg: &CheckConfig) -> Self {
        let violated = faces.iter().any(|f| !f.witnesses.is_empty());
        CheckReport {
            check,
            model: model.to_string(),
            verdict: if violated {
                Verdict::Violated
            } else {
                Verdict::Satisfied
            },
            faces,
            config_echo: cfg.clone(),
        }
    }

    pub fn is_satisfied(&self) -> bool {
        self.verdict == Verdict::Satisfied
    }

    pub fn witnesses(&self) -> impl Iterator<Item = (&FaceReport, &Witness)> {
        self.faces.iter().flat_map(|f| f.witnesses.iter().map(move |w| (f, w)))
    }

    /// Largest diffusion quantity over all faces.
    pub fn max_diffusion_abs(&self) -> f64 {
        self.faces
            .iter()
            .filter_map(|f| f.max_diffusion_abs)
            .fold(0.0, f64::max)
    }

    /// Smallest drift margin over all faces.
    pub fn min_drift_margin(&self) -> Option<f64> {
        self.faces.iter().filter_map(|f| f.min_drift_margin).reduce(f64::min)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Condition values at one (time, sample) pair.
struct Probe {
    /// Quantity that must be `>= 0` (up to `eps_drift`).
    margin: f64,
    /// Raw drift quantity reported in witnesses.
    drift_value: f64,
    /// Quantities that must vanish, one per noise column.
    diffusion: Vec<f64>,
}

/// Evaluates `probe` over `times x points`, in that order, so witnesses come
/// out sorted by time and then sample index.
fn scan_face<P>(
    index: usize,
    side: Side,
    cfg: &CheckConfig,
    times: &[f64],
    points: &[Vec<f64>],
    partners: Option<&[Vec<f64>]>,
    mut probe: P,
) -> Result<FaceReport>
where
    P: FnMut(f64, &[f64], Option<&[f64]>) -> Result<Probe>,
{
    let mut report = FaceReport {
        index,
        side,
        samples: 0,
        min_drift_margin: None,
        max_diffusion_abs: None,
        violations: 0,
        witnesses: Vec::new(),
    };
    let mut min_margin = f64::INFINITY;
    let mut max_diff: f64 = 0.0;
    for &t in times {
        for (k, x) in points.iter().enumerate() {
            let y = partners.map(|p| p[k].as_slice());
            let p = probe(t, x, y)?;
            report.samples += 1;
            min_margin = min_margin.min(p.margin);
            let (col, worst) = p.diffusion.iter().enumerate().fold((None, 0.0f64), |(c, w), (j, v)| {
                if v.abs() > w {
                    (Some(j), v.abs())
                } else {
                    (c, w)
                }
            });
            max_diff = max_diff.max(worst);

            let mut found = Vec::new();
            if p.margin < -cfg.eps_drift {
                found.push((Quantity::DriftSign, None, p.drift_value));
            }
            if worst > cfg.eps_diff {
                let j = col.expect("nonzero entry has a column");
                found.push((Quantity::DiffusionNonzero, Some(j), p.diffusion[j]));
            }
            if !found.is_empty() {
                report.violations += 1;
            }
            for (quantity, column, value) in found {
                if report.witnesses.len() < cfg.max_witnesses_per_face {
                    report.witnesses.push(Witness {
                        t,
                        sample: k as u64,
                        x: x.to_vec(),
                        y: y.map(<[f64]>::to_vec),
                        quantity,
                        column,
                        value,
                    });
                }
            }
        }
    }
    if report.samples > 0 {
        report.min_drift_margin = Some(min_margin);
        report.max_diffusion_abs = Some(max_diff);
    }
    Ok(report)
}

/// Sampling interval for a coordinate, clipping infinite bounds to the
/// model's plausibility range.
fn coordinate_interval(bound: Option<&Bound>, range: (f64, f64)) -> (f64, f64) {
    let Some(b) = bound else { return range };
    let width = (range.1 - range.0).max(1.0);
    match (b.lower.is_finite(), b.upper.is_finite()) {
        (true, true) => (b.lower, b.upper),
        (true, false) => (b.lower, range.1.max(b.lower + width)),
        (false, true) => (range.0.min(b.upper - width), b.upper),
        (false, false) => range,
    }
}

#[inline]
fn lerp((lo, hi): (f64, f64), u: f64) -> f64 {
    lo + u * (hi - lo)
}

fn box_face_points(
    sys: &SdeSystem,
    region: &BoxRegion,
    fixed: usize,
    value: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let m = sys.dim();
    let intervals: Vec<(f64, f64)> = (0..m)
        .map(|j| coordinate_interval(region.bound_for(j), sys.sample_ranges()[j]))
        .collect();
    let halton = Halton::new(m, seed)?;
    let mut u = vec![0.0; m];
    Ok((0..n as u64)
        .map(|k| {
            halton.point(k, &mut u);
            (0..m)
                .map(|j| if j == fixed { value } else { lerp(intervals[j], u[j]) })
                .collect()
        })
        .collect())
}

fn check_box_inner(sys: &SdeSystem, region: &BoxRegion, cfg: &CheckConfig, kind: CheckKind) -> Result<CheckReport> {
    cfg.validate()?;
    region.check_dim(sys.dim())?;
    let times = cfg.times();
    let r = sys.noise_dim();

    let mut faces: Vec<(usize, &Bound, Side, f64)> = Vec::new();
    for (bi, b) in region.bounds().iter().enumerate() {
        if b.lower.is_finite() {
            faces.push((bi, b, Side::Lower, b.lower));
        }
        if b.upper.is_finite() {
            faces.push((bi, b, Side::Upper, b.upper));
        }
    }
    if faces.is_empty() {
        return Err(Error::usage("box has no finite face to check"));
    }

    let reports = faces
        .par_iter()
        .enumerate()
        .map(|(fi, &(_, b, side, value))| {
            let i = b.index;
            let seed = sampling::derive_seed(cfg.sampler_seed, fi as u64);
            let points = box_face_points(sys, region, i, value, cfg.n_face_samples, seed)?;
            let sign = if side == Side::Lower { 1.0 } else { -1.0 };
            let mut g = vec![0.0; sys.dim() * r];
            scan_face(i, side, cfg, &times, &points, None, |t, x, _| {
                let context = || format!("checking the {side:?} face of coordinate {i}");
                let f = sys.eval_drift(t, x).map_err(|e| e.with_context(context()))?;
                let gm = sys.eval_diffusion(t, x).map_err(|e| e.with_context(context()))?;
                g.copy_from_slice(gm.as_slice());
                Ok(Probe {
                    margin: sign * f[i],
                    drift_value: f[i],
                    diffusion: g[i * r..(i + 1) * r].to_vec(),
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport::assemble(kind, sys.name(), reports, cfg))
}

/// Checks `f_i >= 0` on `{x_i = a_i}`, `f_i <= 0` on `{x_i = b_i}` and
/// `g_ij = 0` on both, for every constrained coordinate.
///
/// The conditions do not depend on whether `sys` is read in the Itô or the
/// Stratonovich sense, so they are evaluated on `(f, g)` as given.
pub fn check_box(sys: &SdeSystem, region: &BoxRegion, cfg: &CheckConfig) -> Result<CheckReport> {
    check_box_inner(sys, region, cfg, CheckKind::Box)
}

/// Checks invariance of the cone `{x_i >= 0, i in indices}`.
pub fn check_positivity(sys: &SdeSystem, indices: &[usize], cfg: &CheckConfig) -> Result<CheckReport> {
    let cone = BoxRegion::positive_cone(indices)?;
    check_box_inner(sys, &cone, cfg, CheckKind::Positivity)
}

/// Candidate interior points tried before giving up.
const INTERIOR_SEARCH_BUDGET: u64 = 1 << 16;
/// Attempts at landing a first point on a face patch.
const FACE_SEED_BUDGET: usize = 4096;

struct Window {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Window {
    fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn find_interior(poly: &Polyhedron, window: &Window, seed: u64) -> Result<Vec<f64>> {
    let m = window.lo.len();
    if let Some(hint) = poly.interior_hint() {
        if hint.len() != m {
            return Err(Error::usage(format!(
                "interior point has length {}, expected {m}",
                hint.len()
            )));
        }
        if !poly.halfspaces().iter().all(|h| h.signed_gap(hint) > 0.0) {
            return Err(Error::usage(
                "supplied interior point is not strictly inside the polyhedron",
            ));
        }
        return Ok(hint.to_vec());
    }
    let halton = Halton::new(m, seed)?;
    let mut u = vec![0.0; m];
    for k in 0..INTERIOR_SEARCH_BUDGET {
        halton.point(k, &mut u);
        let x: Vec<f64> = (0..m).map(|j| lerp((window.lo[j], window.hi[j]), u[j])).collect();
        if poly.halfspaces().iter().all(|h| h.signed_gap(&x) > 0.0) {
            return Ok(x);
        }
    }
    Err(Error::usage(format!(
        "no interior point found in {INTERIOR_SEARCH_BUDGET} samples of the model's sampling window; \
         the polyhedron may have empty interior there, supply an explicit interior point"
    )))
}

/// Interval of `s` with `x + s d` inside every half-space except `skip` and inside the window.
fn chord(poly: &Polyhedron, window: &Window, skip: Option<usize>, x: &[f64], d: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut clip = |gap: f64, rate: f64| {
        // gap + s * rate >= 0
        if rate > 0.0 {
            lo = lo.max(-gap / rate);
        } else if rate < 0.0 {
            hi = hi.min(-gap / rate);
        }
    };
    for (mu, h) in poly.halfspaces().iter().enumerate() {
        if Some(mu) != skip {
            clip(h.signed_gap(x).max(0.0), dot(d, &h.normal));
        }
    }
    for j in 0..x.len() {
        clip((x[j] - window.lo[j]).max(0.0), d[j]);
        clip((window.hi[j] - x[j]).max(0.0), -d[j]);
    }
    (lo.min(0.0), hi.max(0.0))
}

/// Orthogonal projection onto `{<x - a, n> = 0}`. Axis-aligned planes are hit exactly.
fn project(h: &HalfSpace, x: &mut [f64]) {
    let nn = dot(&h.normal, &h.normal);
    let gap = h.signed_gap(x);
    for (xi, ni) in x.iter_mut().zip(&h.normal) {
        *xi -= gap / nn * ni;
    }
    let mut nz = h.normal.iter().enumerate().filter(|(_, v)| **v != 0.0);
    if let (Some((j, _)), None) = (nz.next(), nz.next()) {
        x[j] = h.point[j];
    }
}

fn face_hit_and_run(
    poly: &Polyhedron,
    window: &Window,
    nu: usize,
    interior: &[f64],
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let m = interior.len();
    let h = &poly.halfspaces()[nu];
    let nn = dot(&h.normal, &h.normal);
    let mut rng = sampling::stream(seed, nu as u64);
    let tol = 1e-9;
    let inside = |x: &[f64]| {
        window.contains(x, tol)
            && poly
                .halfspaces()
                .iter()
                .enumerate()
                .all(|(mu, hs)| mu == nu || hs.signed_gap(x) >= -tol)
    };

    // walk the interior chain and project until one projection lands on the patch
    let mut p = interior.to_vec();
    let mut d = vec![0.0; m];
    let mut start = None;
    for _ in 0..FACE_SEED_BUDGET {
        let mut q = p.clone();
        project(h, &mut q);
        if inside(&q) {
            start = Some(q);
            break;
        }
        // shoot along a random direction heading toward the plane
        for v in d.iter_mut() {
            *v = sampling::next_normal(&mut rng);
        }
        let rate = dot(&d, &h.normal);
        if rate != 0.0 {
            let s = -h.signed_gap(&p) / rate;
            if s > 0.0 {
                let mut q: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + s * b).collect();
                project(h, &mut q);
                if inside(&q) {
                    start = Some(q);
                    break;
                }
            }
        }
        for v in d.iter_mut() {
            *v = sampling::next_normal(&mut rng);
        }
        let (lo, hi) = chord(poly, window, None, &p, &d);
        let s = lerp((lo, hi), sampling::open_unit(rand_core::RngCore::next_u64(&mut rng)));
        for (pi, di) in p.iter_mut().zip(&d) {
            *pi += s * di;
        }
    }
    let Some(mut q) = start else {
        return Vec::new();
    };

    let burn_in = 8 * m;
    let mut out = Vec::with_capacity(n);
    let mut step = 0usize;
    while out.len() < n {
        for v in d.iter_mut() {
            *v = sampling::next_normal(&mut rng);
        }
        let along = dot(&d, &h.normal) / nn;
        for (di, ni) in d.iter_mut().zip(&h.normal) {
            *di -= along * ni;
        }
        if dot(&d, &d) > 1e-24 {
            let (lo, hi) = chord(poly, window, Some(nu), &q, &d);
            let s = lerp((lo, hi), sampling::open_unit(rand_core::RngCore::next_u64(&mut rng)));
            for (qi, di) in q.iter_mut().zip(&d) {
                *qi += s * di;
            }
            project(h, &mut q);
        }
        if step >= burn_in {
            out.push(q.clone());
        }
        step += 1;
    }
    out
}

/// Checks `<f, n_ν> >= 0` and `<g_j, n_ν> = 0` on every facet
/// `{<x - a_ν, n_ν> = 0} ∩ K` of `K = ∩ H_{a_ν, n_ν}`.
///
/// Facet points come from a hit-and-run walk inside the facet, restricted to
/// the model's sampling window. A facet the walk cannot reach is reported
/// with zero samples.
pub fn check_polyhedron(sys: &SdeSystem, poly: &Polyhedron, cfg: &CheckConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let m = sys.dim();
    if let Some(h) = poly.halfspaces().iter().find(|h| h.point.len() != m) {
        return Err(Error::usage(format!(
            "half-space of dimension {} for a {m}-dimensional system",
            h.point.len()
        )));
    }
    if poly.halfspaces().is_empty() {
        return Ok(CheckReport::assemble(
            CheckKind::Polyhedron,
            sys.name(),
            Vec::new(),
            cfg,
        ));
    }
    let window = Window {
        lo: sys.sample_ranges().iter().map(|r| r.0).collect(),
        hi: sys.sample_ranges().iter().map(|r| r.1).collect(),
    };
    let interior = find_interior(poly, &window, sampling::derive_seed(cfg.sampler_seed, u64::MAX))?;
    let times = cfg.times();
    let r = sys.noise_dim();

    let reports = (0..poly.halfspaces().len())
        .into_par_iter()
        .map(|nu| {
            let h = &poly.halfspaces()[nu];
            let seed = sampling::derive_seed(cfg.sampler_seed, nu as u64);
            let points = face_hit_and_run(poly, &window, nu, &interior, cfg.n_face_samples, seed);
            scan_face(nu, Side::Hyperplane, cfg, &times, &points, None, |t, x, _| {
                let context = || format!("checking facet {nu}");
                let f = sys.eval_drift(t, x).map_err(|e| e.with_context(context()))?;
                let g = sys.eval_diffusion(t, x).map_err(|e| e.with_context(context()))?;
                let fn_ = dot(&f, &h.normal);
                let diffusion = (0..r)
                    .map(|j| (0..m).map(|i| g.get(i, j) * h.normal[i]).sum())
                    .collect();
                Ok(Probe {
                    margin: fn_,
                    drift_value: fn_,
                    diffusion,
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport::assemble(CheckKind::Polyhedron, sys.name(), reports, cfg))
}

/// Checks `f_i(t, x) >= f̃_i(t, y)` and `g_ij(t, x) = g̃_ij(t, y)` for
/// `i` in `indices` and pairs with `x_i = y_i`, `x_k >= y_k` for `k` in `indices`.
///
/// `y` is drawn from `sys_a`'s sampling ranges, `x_k - y_k` for `k ≠ i` in
/// `indices` from `[0, width_k]`, and the remaining coordinates of `x`
/// independently of `y`.
pub fn check_comparison(
    sys_a: &SdeSystem,
    sys_b: &SdeSystem,
    indices: &[usize],
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    cfg.validate()?;
    let (m, r) = (sys_a.dim(), sys_a.noise_dim());
    if sys_b.dim() != m || sys_b.noise_dim() != r {
        return Err(Error::usage(format!(
            "systems differ in shape: {}x{} vs {}x{}",
            m,
            r,
            sys_b.dim(),
            sys_b.noise_dim()
        )));
    }
    if indices.is_empty() {
        return Err(Error::usage("comparison needs at least one index"));
    }
    if let Some(i) = indices.iter().find(|&&i| i >= m) {
        return Err(Error::usage(format!("index {i} out of range for dimension {m}")));
    }
    let mut set = indices.to_vec();
    set.sort_unstable();
    set.dedup();
    let times = cfg.times();
    let ranges = sys_a.sample_ranges();

    let reports = set
        .par_iter()
        .enumerate()
        .map(|(fi, &i)| {
            let halton = Halton::new(2 * m, sampling::derive_seed(cfg.sampler_seed, fi as u64))?;
            let mut u = vec![0.0; 2 * m];
            let mut xs = Vec::with_capacity(cfg.n_face_samples);
            let mut ys = Vec::with_capacity(cfg.n_face_samples);
            for k in 0..cfg.n_face_samples as u64 {
                halton.point(k, &mut u);
                let y: Vec<f64> = (0..m).map(|j| lerp(ranges[j], u[j])).collect();
                let x: Vec<f64> = (0..m)
                    .map(|j| {
                        let v = u[m + j];
                        if j == i {
                            y[j]
                        } else if set.contains(&j) {
                            y[j] + v * (ranges[j].1 - ranges[j].0).max(1.0)
                        } else {
                            lerp(ranges[j], v)
                        }
                    })
                    .collect();
                xs.push(x);
                ys.push(y);
            }
            scan_face(i, Side::Comparison, cfg, &times, &xs, Some(&ys), |t, x, y| {
                let y = y.expect("comparison pairs");
                let context = || format!("comparing coordinate {i}");
                let fa = sys_a.eval_drift(t, x).map_err(|e| e.with_context(context()))?;
                let fb = sys_b.eval_drift(t, y).map_err(|e| e.with_context(context()))?;
                let ga = sys_a.eval_diffusion(t, x).map_err(|e| e.with_context(context()))?;
                let gb = sys_b.eval_diffusion(t, y).map_err(|e| e.with_context(context()))?;
                Ok(Probe {
                    margin: fa[i] - fb[i],
                    drift_value: fa[i] - fb[i],
                    diffusion: ga.row(i).iter().zip(gb.row(i)).map(|(a, b)| a - b).collect(),
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport::assemble(CheckKind::Comparison, sys_a.name(), reports, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, hh_metadata, ModelOptions};

    fn small() -> CheckConfig {
        CheckConfig {
            n_face_samples: 256,
            n_time_samples: 4,
            ..Default::default()
        }
    }

    fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> SdeSystem {
        SdeSystem::new(
            "scalar",
            1,
            1,
            move |_, x: &[f64], o: &mut [f64]| o[0] = f(x[0]),
            move |_, x: &[f64], o: &mut [f64]| o[0] = g(x[0]),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = CheckConfig {
            n_face_samples: 0,
            ..Default::default()
        };
        let sys = SdeSystem::zero(1, 1).unwrap();
        let region = BoxRegion::uniform(&[0], 0.0, 1.0).unwrap();
        assert!(matches!(check_box(&sys, &region, &bad), Err(Error::Usage(_))));
        assert!(CheckConfig {
            eps_drift: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(small().times(), vec![0.0, 100.0 / 3.0, 200.0 / 3.0, 100.0]);
        assert_eq!(
            CheckConfig {
                n_time_samples: 1,
                ..Default::default()
            }
            .times(),
            vec![0.0]
        );
    }

    #[test]
    fn zero_fields_satisfy_any_box() {
        let sys = SdeSystem::zero(3, 2).unwrap();
        let region = BoxRegion::new(vec![
            Bound {
                index: 0,
                lower: -1.0,
                upper: 2.0,
            },
            Bound {
                index: 2,
                lower: 5.0,
                upper: f64::INFINITY,
            },
        ])
        .unwrap();
        let rep = check_box(&sys, &region, &small()).unwrap();
        assert_eq!(rep.verdict, Verdict::Satisfied);
        assert_eq!(rep.faces.len(), 3);
        for f in &rep.faces {
            assert_eq!(f.min_drift_margin, Some(0.0));
            assert_eq!(f.max_diffusion_abs, Some(0.0));
            assert_eq!(f.samples, 256 * 4);
        }
    }

    #[test]
    fn positivity_scalar_examples() {
        let mult = scalar(|x| 1.0 - x, |x| 0.3 * x);
        assert!(check_positivity(&mult, &[0], &small()).unwrap().is_satisfied());
        let add = scalar(|x| 1.0 - x, |_| 0.3);
        let rep = check_positivity(&add, &[0], &small()).unwrap();
        assert_eq!(rep.verdict, Verdict::Violated);
        let w = &rep.faces[0].witnesses[0];
        assert_eq!(w.quantity, Quantity::DiffusionNonzero);
        assert_eq!(w.value, 0.3);
        assert_eq!(w.x, vec![0.0]);
        assert_eq!(rep.faces.len(), 1);
        assert_eq!(rep.faces[0].side, Side::Lower);
        let zero = SdeSystem::zero(2, 1).unwrap();
        assert!(check_positivity(&zero, &[0, 1], &small()).unwrap().is_satisfied());
    }

    #[test]
    fn drift_sign_witness() {
        let sys = scalar(|x| -1.0 - x, |_| 0.0);
        let rep = check_positivity(&sys, &[0], &small()).unwrap();
        let w = &rep.faces[0].witnesses[0];
        assert_eq!(w.quantity, Quantity::DriftSign);
        assert_eq!(w.value, -1.0);
        assert_eq!(rep.faces[0].min_drift_margin, Some(-1.0));
    }

    #[test]
    fn tolerance_tie_is_satisfied() {
        let eps = CheckConfig::default().eps_drift;
        let sys = scalar(move |_| -eps, |_| 1e-12);
        assert!(check_positivity(&sys, &[0], &small()).unwrap().is_satisfied());
        let sys = scalar(move |_| -2.0 * eps, |_| 0.0);
        assert!(!check_positivity(&sys, &[0], &small()).unwrap().is_satisfied());
    }

    #[test]
    fn witnesses_capped_and_sorted() {
        let sys = scalar(|_| -1.0, |_| 1.0);
        let region = BoxRegion::uniform(&[0], 0.0, 1.0).unwrap();
        let rep = check_box(&sys, &region, &small()).unwrap();
        for f in &rep.faces {
            assert_eq!(f.witnesses.len(), 8);
            assert_eq!(f.violations, 256 * 4);
            let keys: Vec<(u64, u64)> = f.witnesses.iter().map(|w| (w.t.to_bits(), w.sample)).collect();
            assert!(keys.windows(2).all(|k| k[0] <= k[1]));
        }
        // lower face: drift -1 is wrong; upper face: drift -1 is fine
        assert!(rep.faces[0].witnesses.iter().any(|w| w.quantity == Quantity::DriftSign));
        assert!(rep.faces[1]
            .witnesses
            .iter()
            .all(|w| w.quantity == Quantity::DiffusionNonzero));
    }

    #[test]
    fn box_dimension_mismatch() {
        let sys = SdeSystem::zero(2, 1).unwrap();
        let region = BoxRegion::uniform(&[3], 0.0, 1.0).unwrap();
        assert!(matches!(check_box(&sys, &region, &small()), Err(Error::Usage(_))));
    }

    #[test]
    fn model_error_carries_face_context() {
        let sys = scalar(|x| 1.0 / x, |_| 0.0);
        let err = check_positivity(&sys, &[0], &small()).unwrap_err().to_string();
        assert!(err.contains("Lower face of coordinate 0"), "{err}");
    }

    #[test]
    fn hh_builtins() {
        let meta = hh_metadata();
        let cfg = small();
        let verdict = |name: &str, sigma: f64| {
            let opts = ModelOptions {
                sigma: vec![sigma],
                ..Default::default()
            };
            check_box(&build_model(name, &opts).unwrap(), &meta.region, &cfg).unwrap()
        };
        let add = verdict("hh-additive", 0.1);
        assert_eq!(add.verdict, Verdict::Violated);
        assert_eq!(add.faces.len(), 6);
        for f in &add.faces {
            assert!(f
                .witnesses
                .iter()
                .any(|w| w.quantity == Quantity::DiffusionNonzero && w.value == 0.1));
            assert!(f.min_drift_margin.unwrap() > 0.0);
        }
        assert!(verdict("hh-logistic", 0.5).is_satisfied());
        assert!(verdict("hh-det", 0.5).is_satisfied());
    }

    #[test]
    fn polyhedron_vacuous_and_halfspace() {
        let sys = scalar(|x| 1.0 - x, |_| 0.2);
        let all = Polyhedron::new(vec![]).unwrap();
        assert!(check_polyhedron(&sys, &all, &small()).unwrap().is_satisfied());

        let half = Polyhedron::new(vec![HalfSpace {
            point: vec![0.0],
            normal: vec![1.0],
        }])
        .unwrap();
        let rep = check_polyhedron(&sys, &half, &small()).unwrap();
        assert_eq!(rep.verdict, Verdict::Violated);
        assert!((rep.faces[0].witnesses[0].value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn polyhedron_slanted_facet_points_lie_on_plane() {
        // triangle x >= 0, y >= 0, x + y <= 1
        let sys = SdeSystem::new("tri", 2, 1, |_, _, _| {}, |_, _, _| {}).unwrap();
        let poly = Polyhedron::new(vec![
            HalfSpace {
                point: vec![0.0, 0.0],
                normal: vec![1.0, 0.0],
            },
            HalfSpace {
                point: vec![0.0, 0.0],
                normal: vec![0.0, 1.0],
            },
            HalfSpace {
                point: vec![1.0, 0.0],
                normal: vec![-1.0, -1.0],
            },
        ])
        .unwrap();
        let window = Window {
            lo: vec![-10.0; 2],
            hi: vec![10.0; 2],
        };
        let interior = find_interior(&poly, &window, 5).unwrap();
        let pts = face_hit_and_run(&poly, &window, 2, &interior, 200, 9);
        assert_eq!(pts.len(), 200);
        for p in &pts {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12, "{p:?}");
            assert!(p[0] >= -1e-9 && p[1] >= -1e-9);
        }
        let spread = pts.iter().map(|p| p[0]).fold(0.0f64, f64::max) - pts.iter().map(|p| p[0]).fold(1.0f64, f64::min);
        assert!(spread > 0.8, "walk should cover the edge, spread {spread}");
        assert!(check_polyhedron(&sys, &poly, &small()).unwrap().is_satisfied());
    }

    #[test]
    fn polyhedron_without_interior_is_usage_error() {
        let sys = SdeSystem::zero(1, 1).unwrap();
        let poly = Polyhedron::new(vec![
            HalfSpace {
                point: vec![1.0],
                normal: vec![1.0],
            },
            HalfSpace {
                point: vec![0.0],
                normal: vec![-1.0],
            },
        ])
        .unwrap();
        assert!(matches!(check_polyhedron(&sys, &poly, &small()), Err(Error::Usage(_))));
        let hinted = poly.with_interior_point(vec![0.5]);
        assert!(matches!(
            check_polyhedron(&sys, &hinted, &small()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn comparison_examples() {
        let cfg = small();
        let a = scalar(|x| x.sin(), |x| x * x);
        assert!(check_comparison(&a, &a.clone(), &[0], &cfg).unwrap().is_satisfied());

        let coupled = |g_cross: bool| {
            SdeSystem::new(
                "pair",
                2,
                2,
                |_, x: &[f64], o: &mut [f64]| {
                    o[0] = x[1];
                    o[1] = x[0];
                },
                move |_, x: &[f64], o: &mut [f64]| {
                    if g_cross {
                        o[0] = x[1];
                    } else {
                        o[0] = 0.3 * x[0];
                        o[3] = 0.3 * x[1];
                    }
                },
            )
            .unwrap()
        };
        let rep = check_comparison(&coupled(false), &coupled(false), &[0, 1], &cfg).unwrap();
        assert!(rep.is_satisfied());
        assert!(rep.faces[0].min_drift_margin.unwrap() > 0.0);
        let rep = check_comparison(&coupled(true), &coupled(true), &[0, 1], &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Violated);
        let w = &rep.faces[0].witnesses[0];
        assert_eq!(w.quantity, Quantity::DiffusionNonzero);
        let (x, y) = (&w.x, w.y.as_ref().unwrap());
        assert_eq!(x[0], y[0]);
        assert!(x[1] > y[1]);
        assert_eq!(w.value, x[1] - y[1]);

        let b = SdeSystem::zero(2, 1).unwrap();
        assert!(check_comparison(&a, &b, &[0], &cfg).is_err());
        assert!(check_comparison(&a, &a, &[], &cfg).is_err());
        assert!(check_comparison(&a, &a, &[1], &cfg).is_err());
    }

    #[test]
    fn report_json_shape() {
        let sys = scalar(|_| 0.0, |_| 1.0);
        let rep = check_positivity(
            &sys,
            &[0],
            &CheckConfig {
                n_face_samples: 2,
                n_time_samples: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json_pretty().unwrap()).unwrap();
        assert_eq!(v["verdict"], "violated");
        assert_eq!(v["faces"][0]["index"], 0);
        assert_eq!(v["faces"][0]["side"], "lower");
        assert_eq!(v["faces"][0]["witnesses"][0]["quantity"], "diffusion_nonzero");
        assert_eq!(v["config_echo"]["n_face_samples"], 2);
        assert!(v["faces"][0]["max_diffusion_abs"].is_number());
    }
}
