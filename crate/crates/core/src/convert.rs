//! Itô ↔ Stratonovich conversion through the drift correction
//! `h_i = Σ_k Σ_j (∂g_ik/∂x_j) g_jk`.
//!
//! A Stratonovich system `(f, g)` has the same solutions as the Itô system
//! `(f + h/2, g)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldKind, Result};
use crate::system::{Interpretation, SdeSystem};

/// Where `∂g/∂x` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JacobianPolicy {
    /// The system's own `∂g/∂x` field; a usage error when absent.
    Analytic,
    /// Central differences with step `fd_step * max(1, |x_j|)`.
    CentralDifference { fd_step: f64 },
}

pub const DEFAULT_FD_STEP: f64 = 1e-6;

impl Default for JacobianPolicy {
    fn default() -> Self {
        JacobianPolicy::CentralDifference {
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

impl JacobianPolicy {
    fn validate(&self) -> Result<()> {
        match *self {
            JacobianPolicy::CentralDifference { fd_step } if !(fd_step > 0.0 && fd_step.is_finite()) => {
                Err(Error::usage(format!("fd_step must be positive, got {fd_step}")))
            }
            _ => Ok(()),
        }
    }
}

/// `∂g_ik/∂x_j` at offset `(i * r + k) * m + j`.
pub fn diffusion_jacobian(sys: &SdeSystem, t: f64, x: &[f64], policy: JacobianPolicy) -> Result<Vec<f64>> {
    policy.validate()?;
    match policy {
        JacobianPolicy::Analytic => sys.eval_diffusion_jacobian(t, x)?.ok_or_else(|| {
            Error::usage(format!(
                "system `{}` has no analytic diffusion Jacobian; use central differences",
                sys.name()
            ))
        }),
        JacobianPolicy::CentralDifference { fd_step } => central_difference_jacobian(sys, t, x, fd_step),
    }
}

fn central_difference_jacobian(sys: &SdeSystem, t: f64, x: &[f64], fd_step: f64) -> Result<Vec<f64>> {
    let (m, r) = (sys.dim(), sys.noise_dim());
    // validates shape and finiteness at the base point
    sys.eval_diffusion(t, x)?;
    let mut jac = vec![0.0; m * r * m];
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; m * r];
    let mut minus = vec![0.0; m * r];
    for j in 0..m {
        let step = fd_step * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        sys.diffusion_into(t, &xp, &mut plus);
        xp[j] = x[j] - step;
        sys.diffusion_into(t, &xp, &mut minus);
        xp[j] = x[j];
        // actual spacing after rounding of x ± step
        let width = (x[j] + step) - (x[j] - step);
        for i in 0..m {
            for k in 0..r {
                let d = (plus[i * r + k] - minus[i * r + k]) / width;
                if !d.is_finite() {
                    return Err(Error::ModelEval {
                        model: sys.name().to_string(),
                        field: FieldKind::DiffusionJacobian,
                        index: vec![i, k, j],
                        t,
                        x: x.to_vec(),
                        context: Some("differencing the diffusion".into()),
                    });
                }
                jac[(i * r + k) * m + j] = d;
            }
        }
    }
    Ok(jac)
}

/// Drift correction `h(t, x)`.
pub fn correction(sys: &SdeSystem, t: f64, x: &[f64], policy: JacobianPolicy) -> Result<Vec<f64>> {
    let g = sys.eval_diffusion(t, x)?;
    let jac = diffusion_jacobian(sys, t, x, policy)?;
    Ok(contract(sys.dim(), sys.noise_dim(), &jac, g.as_slice()))
}

fn contract(m: usize, r: usize, jac: &[f64], g: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..r {
                for j in 0..m {
                    acc += jac[(i * r + k) * m + j] * g[j * r + k];
                }
            }
            acc
        })
        .collect()
}

fn shifted(sys: &SdeSystem, policy: JacobianPolicy, sign: f64, target: Interpretation) -> Result<SdeSystem> {
    policy.validate()?;
    if let JacobianPolicy::Analytic = policy {
        if !sys.has_analytic_jacobian() {
            return Err(Error::usage(format!(
                "system `{}` has no analytic diffusion Jacobian",
                sys.name()
            )));
        }
    }
    let base = sys.clone();
    let drift = Arc::clone(sys.drift_field());
    let field = move |t: f64, x: &[f64], out: &mut [f64]| {
        drift(t, x, out);
        match correction(&base, t, x, policy) {
            Ok(h) => {
                for (o, hi) in out.iter_mut().zip(h) {
                    *o += sign * 0.5 * hi;
                }
            }
            // surfaces as a non-finite drift entry at the caller
            Err(_) => out.fill(f64::NAN),
        }
    };
    let suffix = match target {
        Interpretation::Ito => "ito",
        Interpretation::Stratonovich => "stratonovich",
    };
    let name = format!("{}+{suffix}", sys.name());
    Ok(sys
        .clone()
        .replace_drift(Arc::new(field))
        .with_interpretation(target)
        .with_name(name))
}

/// Itô system `(f + h/2, g)` with the same solutions as the Stratonovich system `(f, g)`.
pub fn stratonovich_to_ito(sys: &SdeSystem, policy: JacobianPolicy) -> Result<SdeSystem> {
    if sys.interpretation() != Interpretation::Stratonovich {
        return Err(Error::usage(format!(
            "stratonovich_to_ito needs a Stratonovich system, `{}` is {}",
            sys.name(),
            sys.interpretation()
        )));
    }
    shifted(sys, policy, 1.0, Interpretation::Ito)
}

/// Stratonovich system `(f - h/2, g)` with the same solutions as the Itô system `(f, g)`.
pub fn ito_to_stratonovich(sys: &SdeSystem, policy: JacobianPolicy) -> Result<SdeSystem> {
    if sys.interpretation() != Interpretation::Ito {
        return Err(Error::usage(format!(
            "ito_to_stratonovich needs an Itô system, `{}` is {}",
            sys.name(),
            sys.interpretation()
        )));
    }
    shifted(sys, policy, -1.0, Interpretation::Stratonovich)
}
