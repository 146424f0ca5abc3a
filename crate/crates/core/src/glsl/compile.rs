//! Pluggable compile backends.
//!
//! The wrapped source targets a GLSL ES 1.00 style profile (the one WebGL
//! compiles in the browser). The native backend re-expresses it as a
//! Vulkan-flavoured GLSL 450 unit and runs it through naga's frontend and
//! validator, which catches undefined symbols, type errors and syntax errors
//! without needing a GPU context.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileVerdict {
    pub ok: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no compile backend")]
pub struct BackendUnavailable;

pub trait CompileBackend: Send + Sync {
    fn name(&self) -> &str;
    fn compile(&self, full_source: &str) -> Result<CompileVerdict, BackendUnavailable>;
}

/// Accepts everything. Used when no compiler is wanted.
#[derive(Debug, Default, Clone, Copy)]
pub struct AcceptingBackend;

impl CompileBackend for AcceptingBackend {
    fn name(&self) -> &str {
        "accepting"
    }

    fn compile(&self, _: &str) -> Result<CompileVerdict, BackendUnavailable> {
        Ok(CompileVerdict {
            ok: true,
            diagnostics: Vec::new(),
        })
    }
}

/// Always unavailable; stands in for a host without a compiler.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableBackend;

impl CompileBackend for UnavailableBackend {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn compile(&self, _: &str) -> Result<CompileVerdict, BackendUnavailable> {
        Err(BackendUnavailable)
    }
}

/// The host's native compiler, when this build has one.
pub fn native_backend() -> Result<Box<dyn CompileBackend>, BackendUnavailable> {
    #[cfg(feature = "native-compile")]
    {
        Ok(Box::new(naga_backend::NagaBackend))
    }
    #[cfg(not(feature = "native-compile"))]
    {
        Err(BackendUnavailable)
    }
}

#[cfg(feature = "native-compile")]
pub use naga_backend::NagaBackend;

#[cfg(feature = "native-compile")]
mod naga_backend {
    use std::sync::LazyLock;

    use naga::front::glsl::{Frontend, Options};
    use naga::valid::{Capabilities, ValidationFlags, Validator};
    use naga::ShaderStage;
    use regex::Regex;

    use super::{BackendUnavailable, CompileBackend, CompileVerdict};
    use crate::glsl::source::strip_comments;

    const FRAG_OUT: &str = "_sb_fragColor";

    static UNIFORM_STMT: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\buniform\s+([^;{}]*);").unwrap());
    static PRECISION_QUALIFIER: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\b(?:lowp|mediump|highp)\s+").unwrap());
    static EXTENSION: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?m)^[ \t]*#[ \t]*extension\b.*$").unwrap());
    static FRAG_COLOR: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\bgl_FragColor\b").unwrap());

    #[derive(Debug, Default, Clone, Copy)]
    pub struct NagaBackend;

    impl CompileBackend for NagaBackend {
        fn name(&self) -> &str {
            "native"
        }

        fn compile(&self, full_source: &str) -> Result<CompileVerdict, BackendUnavailable> {
            let unit = translate(full_source);
            let mut frontend = Frontend::default();
            let module = match frontend.parse(&Options::from(ShaderStage::Fragment), &unit) {
                Ok(m) => m,
                Err(e) => {
                    return Ok(CompileVerdict {
                        ok: false,
                        diagnostics: vec![e.emit_to_string(&unit)],
                    })
                }
            };
            let mut validator = Validator::new(ValidationFlags::all(), Capabilities::all());
            Ok(match validator.validate(&module) {
                Ok(_) => CompileVerdict {
                    ok: true,
                    diagnostics: Vec::new(),
                },
                Err(e) => CompileVerdict {
                    ok: false,
                    diagnostics: vec![e.emit_to_string(&unit)],
                },
            })
        }
    }

    /// Moves loose uniforms into one block and routes `gl_FragColor` to an
    /// explicit output, which is what a 450 fragment unit requires.
    pub(crate) fn translate(src: &str) -> String {
        let stripped = strip_comments(src).text;
        let mut members = String::new();
        let mut body = String::with_capacity(src.len());
        let mut last = 0;
        for cap in UNIFORM_STMT.captures_iter(&stripped) {
            let whole = cap.get(0).unwrap();
            let decl = PRECISION_QUALIFIER.replace_all(cap[1].trim(), "");
            members.push_str(&format!("    {decl};\n"));
            body.push_str(&src[last..whole.start()]);
            last = whole.end();
        }
        body.push_str(&src[last..]);
        let body = EXTENSION.replace_all(&body, "");
        let body = FRAG_COLOR.replace_all(&body, FRAG_OUT);

        let mut unit = String::from("#version 450\n");
        if !members.is_empty() {
            unit.push_str("layout(set = 0, binding = 0) uniform ShaderInputs {\n");
            unit.push_str(&members);
            unit.push_str("};\n");
        }
        unit.push_str(&format!("layout(location = 0) out vec4 {FRAG_OUT};\n"));
        unit.push_str(&body);
        unit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepting_accepts() {
        assert!(AcceptingBackend.compile("garbage").unwrap().ok);
    }

    #[test]
    fn unavailable_is_unavailable() {
        assert_eq!(UnavailableBackend.compile("x"), Err(BackendUnavailable));
        assert_eq!(BackendUnavailable.to_string(), "no compile backend");
    }

    #[cfg(feature = "native-compile")]
    mod native {
        use super::super::*;
        use crate::glsl::wrap::wrap_code;
        use crate::seeds;

        #[test]
        fn seeds_compile() {
            for (i, code) in seeds::builtin().iter().enumerate() {
                let w = wrap_code(code).unwrap();
                let v = NagaBackend.compile(&w.full_source).unwrap();
                assert!(v.ok, "seed {i}: {:?}", v.diagnostics);
            }
        }

        #[test]
        fn undefined_function_is_rejected() {
            let code = "void mainImage(out vec4 fragColor, in vec2 fragCoord) {\n    fragColor = vec4(noise3(fragCoord), 1.0);\n}\n";
            let v = NagaBackend.compile(&wrap_code(code).unwrap().full_source).unwrap();
            assert!(!v.ok);
            assert!(v.diagnostics.iter().any(|d| d.contains("noise3")), "{:?}", v.diagnostics);
        }

        #[test]
        fn missing_semicolon_is_rejected() {
            let code = "void mainImage(out vec4 fragColor, in vec2 fragCoord) {\n    fragColor = vec4(1.0)\n}\n";
            let v = NagaBackend.compile(&wrap_code(code).unwrap().full_source).unwrap();
            assert!(!v.ok);
        }

        #[test]
        fn translation_collects_uniforms() {
            let unit = naga_backend::translate(
                "precision mediump float;\nuniform highp float iTime;\nvoid main() { gl_FragColor = vec4(iTime); }\n",
            );
            assert!(unit.starts_with("#version 450\n"));
            assert!(unit.contains("uniform ShaderInputs {\n    float iTime;\n};"));
            assert!(!unit.contains("gl_FragColor"));
        }
    }
}
