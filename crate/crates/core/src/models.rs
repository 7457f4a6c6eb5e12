//! Classical four-variable Hodgkin-Huxley model and its stochastic variants.
//!
//! State is `(x_1, x_2, x_3, V)`: sodium activation, potassium activation,
//! sodium inactivation and membrane potential in mV. Time is in ms. Noise
//! enters the three gating rows only; the voltage row of `g` is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{BoxRegion, Interpretation, SdeSystem};

/// Half-width of the window around a removable singularity where the limit
/// value is used instead of the quotient.
const SINGULARITY_WINDOW: f64 = 1e-7;

/// Gating variable, in state order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// `x_1`, sodium activation.
    NaActivation,
    /// `x_2`, potassium activation.
    KActivation,
    /// `x_3`, sodium inactivation.
    NaInactivation,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::NaActivation, Gate::KActivation, Gate::NaInactivation];

    /// Zero-based state index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Gate> {
        Gate::ALL.get(i).copied()
    }
}

/// `scale * u / (1 - exp(-u / 10))`, continuous at `u = 0` where it equals `10 * scale`.
fn exprel_rate(scale: f64, u: f64) -> f64 {
    let w = u / 10.0;
    if u.abs() < SINGULARITY_WINDOW {
        // w / (1 - e^-w) = 1 + w/2 + w^2/12 + O(w^4)
        10.0 * scale * (1.0 + w / 2.0 + w * w / 12.0)
    } else {
        scale * u / -(-w).exp_m1()
    }
}

/// Activation rate `α_i(V)` in 1/ms.
pub fn rate_alpha(gate: Gate, v: f64) -> f64 {
    match gate {
        Gate::NaActivation => exprel_rate(0.1, v + 35.0),
        Gate::KActivation => exprel_rate(0.01, v + 50.0),
        Gate::NaInactivation => 0.07 * (-0.05 * (v + 60.0)).exp(),
    }
}

/// Inactivation rate `β_i(V)` in 1/ms.
pub fn rate_beta(gate: Gate, v: f64) -> f64 {
    match gate {
        Gate::NaActivation => 4.0 * (-0.0556 * (v + 60.0)).exp(),
        Gate::KActivation => 0.125 * (-(v + 60.0) / 80.0).exp(),
        Gate::NaInactivation => 1.0 / (1.0 + (-0.1 * (v + 30.0)).exp()),
    }
}

/// Gating drift `α(V)(1 - x) - β(V) x`.
#[inline]
pub fn gating_drift(gate: Gate, v: f64, x: f64) -> f64 {
    rate_alpha(gate, v) * (1.0 - x) - rate_beta(gate, v) * x
}

/// Membrane and channel constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HHParams {
    /// Membrane capacitance, µF/cm².
    pub c: f64,
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    /// Applied current.
    pub i_app: f64,
    pub e_na: f64,
    pub e_k: f64,
    pub e_l: f64,
}

impl Default for HHParams {
    fn default() -> Self {
        HHParams {
            c: 0.01,
            g_na: 1.2,
            g_k: 0.36,
            g_l: 0.03,
            i_app: 0.1,
            e_na: 55.17,
            e_k: -72.14,
            e_l: -49.42,
        }
    }
}

impl HHParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c, self.g_na, self.g_k, self.g_l, self.i_app, self.e_na, self.e_k, self.e_l,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("HH parameters must be finite"));
        }
        if !(self.c > 0.0) {
            return Err(Error::usage(format!("capacitance must be positive, got {}", self.c)));
        }
        if self.g_na < 0.0 || self.g_k < 0.0 || self.g_l < 0.0 {
            return Err(Error::usage("conductances must be non-negative"));
        }
        Ok(())
    }

    /// `dV/dt` for the given gating state.
    #[inline]
    pub fn voltage_drift(&self, x: &[f64]) -> f64 {
        let (m, n, h, v) = (x[0], x[1], x[2], x[3]);
        let i_na = self.g_na * m * m * m * h * (v - self.e_na);
        let i_k = self.g_k * (n * n) * (n * n) * (v - self.e_k);
        let i_l = self.g_l * (v - self.e_l);
        (self.i_app - i_na - i_k - i_l) / self.c
    }
}

/// Noise on the gating rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sigma", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    /// `g_ii = σ_i`.
    Additive([f64; 3]),
    /// `g_ii = σ_i x_i (1 - x_i)`.
    Multiplicative([f64; 3]),
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Additive(s) | NoiseSpec::Multiplicative(s) => {
                if s.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::usage(format!(
                        "noise intensities must be positive and finite, got {s:?}"
                    )))
                }
            }
        }
    }
}

/// Builds the four-dimensional system with three noise channels.
pub fn hh_system(params: HHParams, noise: NoiseSpec) -> Result<SdeSystem> {
    params.validate()?;
    noise.validate()?;
    let name = match noise {
        NoiseSpec::None => "hh-det",
        NoiseSpec::Additive(_) => "hh-additive",
        NoiseSpec::Multiplicative(_) => "hh-logistic",
    };
    let drift = move |_t: f64, x: &[f64], out: &mut [f64]| {
        let v = x[3];
        for gate in Gate::ALL {
            let i = gate.index();
            out[i] = gating_drift(gate, v, x[i]);
        }
        out[3] = params.voltage_drift(x);
    };
    const R: usize = 3;
    const M: usize = 4;
    let sys = match noise {
        NoiseSpec::None => SdeSystem::new(name, M, R, drift, |_, _, _| {})?.with_diffusion_jacobian(|_, _, _| {}),
        NoiseSpec::Additive(sigma) => SdeSystem::new(name, M, R, drift, move |_, _, out: &mut [f64]| {
            for i in 0..R {
                out[i * R + i] = sigma[i];
            }
        })?
        .with_diffusion_jacobian(|_, _, _| {}),
        NoiseSpec::Multiplicative(sigma) => SdeSystem::new(name, M, R, drift, move |_, x: &[f64], out: &mut [f64]| {
            for i in 0..R {
                out[i * R + i] = sigma[i] * x[i] * (1.0 - x[i]);
            }
        })?
        .with_diffusion_jacobian(move |_, x: &[f64], out: &mut [f64]| {
            for i in 0..R {
                out[(i * R + i) * M + i] = sigma[i] * (1.0 - 2.0 * x[i]);
            }
        }),
    };
    let meta = hh_metadata();
    sys.with_labels(["x_1", "x_2", "x_3", "V"])?.with_sample_ranges(vec![
        (0.0, 1.0),
        (0.0, 1.0),
        (0.0, 1.0),
        meta.voltage_range,
    ])
}

/// Fixed facts about the HH family used by checkers and simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetadata {
    /// `[0, 1]³` on the gating coordinates.
    pub region: BoxRegion,
    /// Voltage range sampled when checking gating faces, mV.
    pub voltage_range: (f64, f64),
    /// Gating values at their steady state for `V = -60` mV.
    pub initial_state: [f64; 4],
    /// ms.
    pub horizon: f64,
}

pub const RESTING_POTENTIAL: f64 = -60.0;

pub fn hh_metadata() -> ModelMetadata {
    let v = RESTING_POTENTIAL;
    let steady = |g: Gate| {
        let a = rate_alpha(g, v);
        a / (a + rate_beta(g, v))
    };
    ModelMetadata {
        region: BoxRegion::uniform(&[0, 1, 2], 0.0, 1.0).expect("unit box is valid"),
        voltage_range: (-100.0, 60.0),
        initial_state: [
            steady(Gate::NaActivation),
            steady(Gate::KActivation),
            steady(Gate::NaInactivation),
            v,
        ],
        horizon: 100.0,
    }
}

/// Names accepted by [`build_model`].
pub const REGISTRY: [&str; 3] = ["hh-det", "hh-additive", "hh-logistic"];

pub const DEFAULT_SIGMA: f64 = 0.5;

/// Parameters for instantiating a registry model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub params: HHParams,
    /// One value for all gating rows, or three per-row values.
    pub sigma: Vec<f64>,
    pub interpretation: Interpretation,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            params: HHParams::default(),
            sigma: vec![DEFAULT_SIGMA],
            interpretation: Interpretation::Ito,
        }
    }
}

impl ModelOptions {
    fn sigma3(&self) -> Result<[f64; 3]> {
        match self.sigma.as_slice() {
            [s] => Ok([*s; 3]),
            [a, b, c] => Ok([*a, *b, *c]),
            other => Err(Error::usage(format!(
                "sigma takes one value or three per-gate values, got {}",
                other.len()
            ))),
        }
    }
}

/// Instantiates a model by registry name.
pub fn build_model(name: &str, opts: &ModelOptions) -> Result<SdeSystem> {
    let noise = match name {
        "hh-det" => NoiseSpec::None,
        "hh-additive" => NoiseSpec::Additive(opts.sigma3()?),
        "hh-logistic" => NoiseSpec::Multiplicative(opts.sigma3()?),
        other => {
            return Err(Error::usage(format!(
                "unknown model `{other}`; available: {}",
                REGISTRY.join(", ")
            )))
        }
    };
    Ok(hh_system(opts.params, noise)?.with_interpretation(opts.interpretation))
}
