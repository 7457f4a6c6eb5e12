use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which field of a system produced a bad value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Drift,
    Diffusion,
    DiffusionJacobian,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Drift => "drift",
            FieldKind::Diffusion => "diffusion",
            FieldKind::DiffusionJacobian => "diffusion jacobian",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments: dimension mismatch, invalid configuration, wrong interpretation.
    #[error("usage error: {0}")]
    Usage(String),

    /// A model field returned a non-finite entry.
    #[error(
        "model `{model}` produced a non-finite {field} entry at index {index:?} (t = {t}, x = {x:?}){}",
        context.as_deref().map(|c| format!(" while {c}")).unwrap_or_default()
    )]
    ModelEval {
        model: String,
        field: FieldKind,
        index: Vec<usize>,
        t: f64,
        x: Vec<f64>,
        context: Option<String>,
    },

    /// The integrated state stopped being finite.
    #[error("integration of `{model}` diverged at step {step} (t = {t}); last finite state {last_state:?}")]
    Integration {
        model: String,
        step: usize,
        t: f64,
        last_state: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Attaches a description of where a model-evaluation error happened.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::ModelEval {
                model,
                field,
                index,
                t,
                x,
                context: None,
            } => Error::ModelEval {
                model,
                field,
                index,
                t,
                x,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }
}
