//! Raw model text to renderable fragment shader: sanitize, wrap the uniform
//! interface, check structure, then (optionally) compile.
//!
//! Every function here is pure over its inputs.

mod compile;
mod sanitize;
pub(crate) mod source;
mod validate;
mod wrap;

pub use compile::{
    native_backend, AcceptingBackend, BackendUnavailable, CompileBackend, CompileVerdict,
    UnavailableBackend,
};
#[cfg(feature = "native-compile")]
pub use compile::NagaBackend;
pub use sanitize::{sanitize, SanitizeError, SanitizedShader};
pub use validate::{
    structural_validate, EntryRequirement, Stage, ValidationLimits, ValidationReport,
    DEFAULT_MAX_CODE_LENGTH,
};
pub use wrap::{wrap_code, wrap_interface, EntryPoint, WrapError, WrappedShader, STANDARD_UNIFORMS};

/// Runs `backend` on a structurally valid shader and merges its verdict.
pub fn compile_check(
    w: &WrappedShader,
    backend: &dyn CompileBackend,
) -> Result<ValidationReport, BackendUnavailable> {
    let code_length = w.user_code.chars().count();
    let verdict = backend.compile(&w.full_source)?;
    Ok(if verdict.ok {
        let mut r = ValidationReport::passed(code_length);
        r.diagnostics = verdict.diagnostics;
        r
    } else {
        ValidationReport::failed(Stage::Compile, verdict.diagnostics, code_length)
    })
}

/// A candidate that made it through the whole pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validated {
    pub shader: WrappedShader,
    pub report: ValidationReport,
}

/// Full pipeline over raw provider text. Returns the wrapped shader when every
/// stage passes, and the report either way. A missing compile backend
/// degrades to the structural verdict.
pub fn validate_candidate(
    raw: &str,
    limits: &ValidationLimits,
    backend: &dyn CompileBackend,
) -> Result<Validated, ValidationReport> {
    let sanitized = sanitize(raw).map_err(|e| {
        ValidationReport::failed(Stage::Sanitize, vec![e.to_string()], raw.chars().count())
    })?;
    let shader = wrap_interface(&sanitized).map_err(|e| {
        ValidationReport::failed(
            Stage::Structure,
            vec![e.to_string()],
            sanitized.code.chars().count(),
        )
    })?;
    let structural = structural_validate(&shader, limits);
    if !structural.ok {
        return Err(structural);
    }
    let report = match compile_check(&shader, backend) {
        Ok(r) if r.ok => r,
        Ok(r) => return Err(r),
        Err(unavailable) => {
            let mut r = structural;
            r.diagnostics.push(format!("compile skipped: {unavailable}"));
            r
        }
    };
    Ok(Validated { shader, report })
}

/// Wrap plus structural validation of already-clean code (seeds, stored
/// genomes).
pub fn check_source(code: &str, limits: &ValidationLimits) -> ValidationReport {
    match wrap_code(code) {
        Ok(w) => structural_validate(&w, limits),
        Err(e) => ValidationReport::failed(Stage::Structure, vec![e.to_string()], code.chars().count()),
    }
}
