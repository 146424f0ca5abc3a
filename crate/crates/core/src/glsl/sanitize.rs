//! Extraction of shader source from raw model output.
//!
//! Model replies arrive wrapped in markdown fences, introduced by a sentence
//! of prose, or followed by an explanation. The rules here are deliberately
//! mechanical: a line counts as code only if it starts with one of a fixed set
//! of GLSL tokens, so the result is predictable and `sanitize` is idempotent.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::source::strip_comments;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizedShader {
    pub code: String,
    pub removed_prefix_lines: usize,
    pub removed_fences: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("empty response")]
    Empty,
    #[error("no GLSL-like content found")]
    NoGlslContent,
}

const FENCE: &str = "```";

/// First words that mark a line as GLSL.
const LEADING_KEYWORDS: &[&str] = &[
    "void", "float", "int", "uint", "bool", "vec2", "vec3", "vec4", "ivec2", "ivec3", "ivec4",
    "uvec2", "uvec3", "uvec4", "bvec2", "bvec3", "bvec4", "mat2", "mat3", "mat4", "mat2x2",
    "mat2x3", "mat2x4", "mat3x2", "mat3x3", "mat3x4", "mat4x2", "mat4x3", "mat4x4", "struct",
    "uniform", "const", "precision", "highp", "mediump", "lowp", "varying", "layout",
];

static FUNCTION_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[A-Za-z_]\w*\s+[A-Za-z_]\w*\s*\([^()]*\)\s*\{?$").unwrap()
});

static FUNCTION_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Za-z_]\w*\s+[A-Za-z_]\w*\s*\([^;{}]*\)\s*\{").unwrap());

/// Whether a line plausibly begins GLSL code.
pub(crate) fn is_glsl_line(line: &str) -> bool {
    let t = line.trim();
    if t.starts_with('#') || t.starts_with("//") || t.starts_with("/*") {
        return true;
    }
    let word_end = t
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(t.len());
    if word_end > 0 && LEADING_KEYWORDS.contains(&&t[..word_end]) {
        return true;
    }
    FUNCTION_HEADER.is_match(t)
}

// Lines that may legitimately follow the last top-level block.
fn is_trailing_code_line(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with(['}', ';', ')']) || is_glsl_line(t)
}

/// Strips fences, leading prose and trailing prose from `raw`.
pub fn sanitize(raw: &str) -> Result<SanitizedShader, SanitizeError> {
    if raw.trim().is_empty() {
        return Err(SanitizeError::Empty);
    }
    let text = raw.replace("\r\n", "\n").replace('\r', "\n");

    let (body, removed_fences) = match extract_fenced(&text) {
        Some(block) => (block, true),
        None => (text, false),
    };
    let body = body.replace(FENCE, "");

    let lines: Vec<&str> = body.lines().map(str::trim_end).collect();
    let start = lines
        .iter()
        .position(|l| is_glsl_line(l))
        .ok_or(SanitizeError::NoGlslContent)?;
    let mut code = lines[start..].join("\n");

    trim_trailing_prose(&mut code);

    let mut code = code.trim_end().to_owned();
    code.push('\n');
    Ok(SanitizedShader {
        code,
        removed_prefix_lines: start,
        removed_fences,
    })
}

/// Picks the fenced block holding the shader, if the text has fences.
fn extract_fenced(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let fences: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with(FENCE))
        .map(|(i, _)| i)
        .collect();
    if fences.is_empty() {
        return None;
    }

    let mut blocks: Vec<(usize, usize)> = fences
        .chunks(2)
        .map(|pair| match pair {
            [open, close] => (open + 1, *close),
            [open] => (open + 1, lines.len()),
            _ => unreachable!(),
        })
        .collect();
    if fences.len() == 1 {
        // A lone fence may be a closing fence after unfenced code.
        blocks.push((0, fences[0]));
    }

    let join = |&(a, b): &(usize, usize)| lines[a..b].join("\n");
    let has_code = |s: &str| s.lines().any(is_glsl_line);
    blocks
        .iter()
        .map(join)
        .find(|b| has_code(b) && FUNCTION_DEF.is_match(&strip_comments(b).text))
        .or_else(|| blocks.iter().map(join).find(|b| has_code(b)))
        .or_else(|| blocks.first().map(join))
}

/// Cuts text after the last top-level closing brace when what follows is
/// not code.
fn trim_trailing_prose(code: &mut String) {
    let stripped = strip_comments(code).text;
    let mut depth: i64 = 0;
    let mut last_close = None;
    for (i, c) in stripped.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    last_close = Some(i);
                }
            }
            _ => {}
        }
    }
    let Some(close) = last_close else { return };

    let mut cut = close + 1;
    // Keep a `;` terminating a struct or block declaration.
    let after = &code[cut..];
    let line_rest = after.split('\n').next().unwrap_or("");
    if line_rest.trim_start().starts_with(';') {
        cut += line_rest.find(';').unwrap() + 1;
    }
    if code[cut..].lines().all(is_trailing_code_line) {
        return;
    }
    code.truncate(cut);
}

#[cfg(test)]
mod tests {
    use super::*;

    const BODY: &str = "void mainImage(out vec4 fragColor, in vec2 fragCoord) {\n    fragColor = vec4(1.0);\n}\n";

    #[test]
    fn strips_fences_with_language_tag() {
        let s = sanitize(&format!("```glsl\n{BODY}```")).unwrap();
        assert_eq!(s.code, BODY);
        assert!(s.removed_fences);
    }

    #[test]
    fn strips_bare_fences() {
        let s = sanitize(&format!("```\n{BODY}```\n")).unwrap();
        assert_eq!(s.code, BODY);
    }

    #[test]
    fn clean_text_is_unchanged() {
        let s = sanitize(BODY).unwrap();
        assert_eq!(s.code, BODY);
        assert_eq!(s.removed_prefix_lines, 0);
        assert!(!s.removed_fences);
    }

    #[test]
    fn drops_leading_prose() {
        let s = sanitize(&format!("Here is your shader:\n\n{BODY}")).unwrap();
        assert_eq!(s.code, BODY);
        assert_eq!(s.removed_prefix_lines, 2);
    }

    #[test]
    fn drops_trailing_prose() {
        let s = sanitize(&format!("{BODY}\nThis shader pulses with the beat.\n")).unwrap();
        assert_eq!(s.code, BODY);
    }

    #[test]
    fn keeps_trailing_comment_and_struct_semicolon() {
        let src = "struct Ray { vec3 o; vec3 d; };\n// end\n";
        assert_eq!(sanitize(src).unwrap().code, src);
    }

    #[test]
    fn prose_only_is_rejected() {
        assert_eq!(
            sanitize("I cannot help with that request.").unwrap_err(),
            SanitizeError::NoGlslContent
        );
        assert_eq!(sanitize("  \n ").unwrap_err(), SanitizeError::Empty);
    }

    #[test]
    fn prefers_block_with_function() {
        let raw = format!("```\nuniform float x;\n```\nand then:\n```glsl\n{BODY}```\n");
        assert_eq!(sanitize(&raw).unwrap().code, BODY);
    }

    #[test]
    fn lone_closing_fence() {
        assert_eq!(sanitize(&format!("{BODY}```\n")).unwrap().code, BODY);
    }

    #[test]
    fn prose_with_parenthesis_is_not_a_function() {
        assert!(!is_glsl_line("Sure thing (here it is):"));
        assert!(is_glsl_line("Ray makeRay(vec2 uv) {"));
        assert!(is_glsl_line("vec3 palette(float t)"));
    }
}
