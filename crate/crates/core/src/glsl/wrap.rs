//! Injection of the standard uniform interface around a shader body.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sanitize::SanitizedShader;
use super::source::{strip_comments, uniform_names, MAIN_DEF, MAIN_IMAGE_DEF};

/// Uniforms every shader receives, with the types the renderer uploads.
pub const STANDARD_UNIFORMS: [(&str, &str); 3] =
    [("iTime", "float"), ("iResolution", "vec3"), ("u_audio", "float")];

const DEFAULT_PRECISION: &str = "#ifdef GL_FRAGMENT_PRECISION_HIGH\nprecision highp float;\n#else\nprecision mediump float;\n#endif\n";

const FORWARDING_MAIN: &str = "void main() {\n    mainImage(gl_FragColor, gl_FragCoord.xy);\n}\n";

static PRECISION_FLOAT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bprecision\s+(?:lowp|mediump|highp)\s+float\s*;").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryPoint {
    MainImage,
    Main,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrappedShader {
    pub full_source: String,
    pub entry: EntryPoint,
    /// The sanitized body the interface was wrapped around.
    pub user_code: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WrapError {
    #[error("neither mainImage nor main is defined")]
    NoEntryPoint,
}

pub fn wrap_interface(s: &SanitizedShader) -> Result<WrappedShader, WrapError> {
    wrap_code(&s.code)
}

/// Wraps sanitized code: default precision (when absent), the standard
/// uniforms the code does not already declare, and a `main` forwarding to
/// `mainImage` (when the code has no `main`).
pub fn wrap_code(code: &str) -> Result<WrappedShader, WrapError> {
    let stripped = strip_comments(code).text;
    let entry = if MAIN_DEF.is_match(&stripped) {
        EntryPoint::Main
    } else if MAIN_IMAGE_DEF.is_match(&stripped) {
        EntryPoint::MainImage
    } else {
        return Err(WrapError::NoEntryPoint);
    };

    let declared = uniform_names(&stripped);
    let mut uniforms = String::new();
    for (name, ty) in STANDARD_UNIFORMS {
        if !declared.iter().any(|d| d == name) {
            uniforms.push_str(&format!("uniform {ty} {name};\n"));
        }
    }

    let body = code.trim_end();
    let mut full = String::with_capacity(body.len() + 512);
    match PRECISION_FLOAT.find(&stripped) {
        // Uniforms must follow the shader's own default precision.
        Some(m) => {
            let line_end = code[m.end()..]
                .find('\n')
                .map(|i| m.end() + i + 1)
                .unwrap_or(code.len());
            full.push_str(&code[..line_end]);
            if !full.ends_with('\n') {
                full.push('\n');
            }
            full.push_str(&uniforms);
            full.push_str(code[line_end..].trim_end());
        }
        None => {
            let (ext, rest) = split_extensions(body);
            full.push_str(ext);
            full.push_str(DEFAULT_PRECISION);
            full.push_str(&uniforms);
            full.push('\n');
            full.push_str(rest);
        }
    }
    full.push('\n');
    if entry == EntryPoint::MainImage {
        full.push('\n');
        full.push_str(FORWARDING_MAIN);
    }

    Ok(WrappedShader {
        full_source: full,
        entry,
        user_code: code.to_owned(),
    })
}

// Leading `#extension` lines stay ahead of everything else.
fn split_extensions(body: &str) -> (&str, &str) {
    let mut end = 0;
    for line in body.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with("#extension") || (end > 0 && t.is_empty()) {
            end += line.len();
        } else {
            break;
        }
    }
    body.split_at(end)
}
