use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::source::{check_brackets, strip_comments, MAIN_DEF, MAIN_IMAGE_SIGNATURE};
use super::wrap::{EntryPoint, WrappedShader};

/// Default cap on sanitized shader length, in characters.
pub const DEFAULT_MAX_CODE_LENGTH: usize = 8000;

/// Pipeline stage at which a candidate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    None,
    /// The provider call itself failed (transport, status, empty reply).
    Provider,
    Sanitize,
    Structure,
    Length,
    Compile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub stage_failed: Stage,
    pub diagnostics: Vec<String>,
    pub code_length: usize,
}

impl ValidationReport {
    pub fn passed(code_length: usize) -> Self {
        ValidationReport {
            ok: true,
            stage_failed: Stage::None,
            diagnostics: Vec::new(),
            code_length,
        }
    }

    pub fn failed(stage: Stage, diagnostics: Vec<String>, code_length: usize) -> Self {
        debug_assert!(stage != Stage::None);
        ValidationReport {
            ok: false,
            stage_failed: stage,
            diagnostics,
            code_length,
        }
    }
}

/// Which entry point a shader must provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryRequirement {
    /// `void mainImage(out vec4, in vec2)`, or a complete `main`.
    #[default]
    MainImageOrMain,
    MainImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationLimits {
    pub max_code_length: usize,
    #[serde(default)]
    pub required_entry: EntryRequirement,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        ValidationLimits {
            max_code_length: DEFAULT_MAX_CODE_LENGTH,
            required_entry: EntryRequirement::default(),
        }
    }
}

static VERSION_DIRECTIVE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*#[ \t]*version\b").unwrap());

static SAMPLER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(sampler2D|samplerCube)\b").unwrap());

/// Checks, in order: length cap, bracket balance, a single `main`, the
/// required entry point and banned constructs. The first failure decides
/// `stage_failed`.
pub fn structural_validate(w: &WrappedShader, limits: &ValidationLimits) -> ValidationReport {
    let code_length = w.user_code.chars().count();
    if code_length > limits.max_code_length {
        return ValidationReport::failed(
            Stage::Length,
            vec![format!(
                "code is {code_length} characters; the cap is {}",
                limits.max_code_length
            )],
            code_length,
        );
    }
    let structure = |msg: String| ValidationReport::failed(Stage::Structure, vec![msg], code_length);

    let stripped = strip_comments(&w.full_source);
    if stripped.unterminated_block {
        return structure("unterminated block comment".into());
    }
    let text = stripped.text;
    if let Err(e) = check_brackets(&text) {
        return structure(format!("unbalanced brackets: {}", e.message));
    }

    let mains = MAIN_DEF.find_iter(&text).count();
    if mains != 1 {
        return structure(format!("expected exactly one main(), found {mains}"));
    }

    let has_main_image = MAIN_IMAGE_SIGNATURE.is_match(&text);
    match (limits.required_entry, w.entry) {
        (_, EntryPoint::MainImage) | (EntryRequirement::MainImage, _) if !has_main_image => {
            return structure(
                "missing entry point: void mainImage(out vec4 fragColor, in vec2 fragCoord)".into(),
            );
        }
        _ => {}
    }

    if VERSION_DIRECTIVE.is_match(&text) {
        return structure("#version directives are not allowed; the wrapper owns the profile".into());
    }
    if let Some(m) = SAMPLER.find(&text) {
        return structure(format!("{} is not allowed; no textures are bound", m.as_str()));
    }

    ValidationReport::passed(code_length)
}
