//! Text model files:
//!
//! ```text
//! # exponential decay with multiplicative noise
//! nequat=1
//! nparams=2
//! nnoise=1
//! drift: -p[0]*y[i]
//! diffusion: p[1]*y[i]*n[i]
//! ```
//!
//! `diffusion:` may be omitted when `nnoise=0`.

use thiserror::Error;

use super::{parse, validate, Diagnostic, Expr, ParseError, Role};

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub nequat: usize,
    pub nparams: usize,
    pub nnoise: usize,
    pub drift: Expr,
    pub diffusion: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{role} expression is invalid: {}", list(.diagnostics))]
    Invalid { role: &'static str, diagnostics: Vec<Diagnostic> },
}

fn list(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn parse_model_file(text: &str) -> Result<ModelFile, ModelFileError> {
    let mut nequat = None;
    let mut nparams = None;
    let mut nnoise = None;
    let mut drift = None;
    let mut diffusion = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let header = |message: String| ModelFileError::Header { line, message };

        if let Some((key, rest)) = content.split_once(':') {
            let key = key.trim();
            let slot = match key {
                "drift" => &mut drift,
                "diffusion" => &mut diffusion,
                _ => return Err(header(format!("unknown entry `{key}`"))),
            };
            if slot.is_some() {
                return Err(header(format!("duplicate `{key}`")));
            }
            let col = content.len() - rest.len();
            let expr = parse(rest).map_err(|e| e.shifted(line - 1, col))?;
            *slot = Some(expr);
        } else if let Some((key, value)) = content.split_once('=') {
            let key = key.trim();
            let slot = match key {
                "nequat" => &mut nequat,
                "nparams" => &mut nparams,
                "nnoise" => &mut nnoise,
                _ => return Err(header(format!("unknown entry `{key}`"))),
            };
            if slot.is_some() {
                return Err(header(format!("duplicate `{key}`")));
            }
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| header(format!("`{key}` must be a non-negative integer, got `{}`", value.trim())))?;
            *slot = Some(value);
        } else {
            return Err(header(format!("expected `key=value` or `drift:`/`diffusion:`, found `{}`", content.trim())));
        }
    }

    let nequat = nequat.ok_or(ModelFileError::Missing("nequat"))?;
    let nparams = nparams.ok_or(ModelFileError::Missing("nparams"))?;
    let nnoise = nnoise.ok_or(ModelFileError::Missing("nnoise"))?;
    let drift = drift.ok_or(ModelFileError::Missing("drift"))?;
    if nequat == 0 {
        return Err(ModelFileError::Header { line: 0, message: "nequat must be at least 1".into() });
    }
    if diffusion.is_none() && nnoise > 0 {
        return Err(ModelFileError::Missing("diffusion"));
    }

    let diagnostics = validate(&drift, nequat, nparams, nnoise, Role::Drift);
    if !diagnostics.is_empty() {
        return Err(ModelFileError::Invalid { role: "drift", diagnostics });
    }
    if let Some(d) = &diffusion {
        let diagnostics = validate(d, nequat, nparams, nnoise, Role::Diffusion);
        if !diagnostics.is_empty() {
            return Err(ModelFileError::Invalid { role: "diffusion", diagnostics });
        }
    }
    Ok(ModelFile { nequat, nparams, nnoise, drift, diffusion })
}
