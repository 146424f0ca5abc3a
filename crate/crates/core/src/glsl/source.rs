//! Lexical helpers shared by the pipeline stages.
//!
//! GLSL has no string literals, so comments are the only context in which
//! brackets and keywords must be ignored.

use std::sync::LazyLock;

use regex::Regex;

/// Result of blanking out comments.
pub(crate) struct Stripped {
    /// Source with every comment character replaced by a space. Newlines are
    /// kept so byte offsets and line numbers still line up with the input.
    pub text: String,
    pub unterminated_block: bool,
}

/// Blanks `//` line comments and `/* */` block comments. Block comments do
/// not nest.
pub(crate) fn strip_comments(src: &str) -> Stripped {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Code,
        Line,
        Block,
    }

    let mut out = String::with_capacity(src.len());
    let mut state = State::Code;
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match state {
            State::Code => {
                if c == '/' && chars.peek() == Some(&'/') {
                    chars.next();
                    out.push_str("  ");
                    state = State::Line;
                } else if c == '/' && chars.peek() == Some(&'*') {
                    chars.next();
                    out.push_str("  ");
                    state = State::Block;
                } else {
                    out.push(c);
                }
            }
            State::Line => {
                if c == '\n' {
                    out.push('\n');
                    state = State::Code;
                } else {
                    blank(&mut out, c);
                }
            }
            State::Block => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    out.push_str("  ");
                    state = State::Code;
                } else if c == '\n' {
                    out.push('\n');
                } else {
                    blank(&mut out, c);
                }
            }
        }
    }
    Stripped {
        text: out,
        unterminated_block: state == State::Block,
    }
}

// Keeps byte offsets aligned with the original text.
fn blank(out: &mut String, c: char) {
    for _ in 0..c.len_utf8() {
        out.push(' ');
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BracketError {
    pub line: usize,
    pub message: String,
}

/// Checks that `()`, `[]` and `{}` nest properly in comment-free text.
pub(crate) fn check_brackets(code: &str) -> Result<(), BracketError> {
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut line = 1;
    for c in code.chars() {
        match c {
            '\n' => line += 1,
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    Some((open, at)) => {
                        return Err(BracketError {
                            line,
                            message: format!(
                                "line {line}: '{c}' closes '{open}' opened on line {at}"
                            ),
                        })
                    }
                    None => {
                        return Err(BracketError {
                            line,
                            message: format!("line {line}: unmatched '{c}'"),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        None => Ok(()),
        Some((open, at)) => Err(BracketError {
            line: at,
            message: format!("line {at}: '{open}' is never closed"),
        }),
    }
}

pub(crate) static MAIN_IMAGE_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bvoid\s+mainImage\s*\(").unwrap());

/// `mainImage` with an `out vec4` color and an `in vec2` coordinate.
pub(crate) static MAIN_IMAGE_SIGNATURE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\bvoid\s+mainImage\s*\(\s*out\s+(?:(?:lowp|mediump|highp)\s+)?vec4\s+\w+\s*,\s*(?:in\s+)?(?:(?:lowp|mediump|highp)\s+)?vec2\s+\w+\s*\)\s*\{",
    )
    .unwrap()
});

/// A `main` definition (not a prototype).
pub(crate) static MAIN_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bvoid\s+main\s*\(\s*(?:void\s*)?\)\s*\{").unwrap());

static UNIFORM_DECL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\buniform\s+([^;{}]*);").unwrap());

static DECLARATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([A-Za-z_]\w*)\s*(?:\[[^\]]*\])?\s*$").unwrap());

const QUALIFIERS: &[&str] = &["lowp", "mediump", "highp", "const"];

/// Names declared by `uniform` statements in comment-free text, in order,
/// one entry per declaration (duplicates are kept).
pub(crate) fn uniform_names(code: &str) -> Vec<String> {
    let mut names = Vec::new();
    for cap in UNIFORM_DECL.captures_iter(code) {
        let body = cap[1].trim();
        // body: [qualifiers] type declarator(, declarator)*
        let mut words = body.splitn(2, char::is_whitespace);
        let mut first = words.next().unwrap_or("");
        let mut rest = words.next().unwrap_or("").trim_start();
        while QUALIFIERS.contains(&first) {
            let mut w = rest.splitn(2, char::is_whitespace);
            first = w.next().unwrap_or("");
            rest = w.next().unwrap_or("").trim_start();
        }
        for decl in rest.split(',') {
            if let Some(m) = DECLARATOR.captures(decl) {
                names.push(m[1].to_owned());
            }
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_both_comment_kinds() {
        let src = "a // { x\nb /* } \n */ c";
        let s = strip_comments(src);
        assert_eq!(s.text.len(), src.len());
        assert_eq!(s.text.lines().count(), 3);
        assert_eq!(s.text.split_whitespace().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(!s.unterminated_block);
        assert!(strip_comments("x /* open").unterminated_block);
    }

    #[test]
    fn block_comments_do_not_nest() {
        let s = strip_comments("/* /* */ } */");
        assert_eq!(s.text.trim(), "} */");
    }

    #[test]
    fn bracket_errors() {
        assert!(check_brackets("f(a[1]) { }").is_ok());
        assert!(check_brackets("{ ( }").is_err());
        assert!(check_brackets("}").is_err());
        assert!(check_brackets("{").is_err());
    }

    #[test]
    fn uniform_names_handles_lists_and_qualifiers() {
        let names = uniform_names(
            "uniform float iTime;\nuniform highp vec3 iResolution, extra[2];\nuniform float u_audio ;",
        );
        assert_eq!(names, ["iTime", "iResolution", "extra", "u_audio"]);
    }
}
