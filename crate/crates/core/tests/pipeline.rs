use std::fs;
use std::path::Path;

use proptest::prelude::*;
use shaderbreed_core::glsl::{
    compile_check, native_backend, sanitize, structural_validate, validate_candidate, wrap_code,
    wrap_interface, AcceptingBackend, Stage, UnavailableBackend, ValidationLimits,
};
use shaderbreed_core::operators::{build_crossover_prompt, build_mutation_prompt};
use shaderbreed_core::seeds;

fn fixture(rel: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel))
        .unwrap()
}

/// Strips comments with a simple scanner, independent of the library's.
fn without_comments(src: &str) -> String {
    let mut out = String::new();
    let mut rest = src;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix("//") {
            rest = r.find('\n').map_or("", |i| &r[i..]);
        } else if let Some(r) = rest.strip_prefix("/*") {
            rest = r.find("*/").map_or("", |i| &r[i + 2..]);
            out.push(' ');
        } else {
            let c = rest.chars().next().unwrap();
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

fn count_decl(src: &str, ty: &str, name: &str) -> usize {
    without_comments(src)
        .lines()
        .filter(|l| {
            let words: Vec<&str> = l
                .split(|c: char| c.is_whitespace() || c == ';' || c == ',')
                .filter(|w| !w.is_empty())
                .collect();
            words.first() == Some(&"uniform") && words.contains(&ty) && words.contains(&name)
        })
        .count()
}

fn count_main(src: &str) -> usize {
    without_comments(src).matches("void main(").count()
}

#[test]
fn mutation_prompt_matches_golden() {
    let golden = fixture("prompts/mutation.golden");
    let a = fixture("prompts/parent_a.glsl");
    assert_eq!(build_mutation_prompt(&a).unwrap(), golden);
}

#[test]
fn crossover_prompt_matches_golden() {
    let golden = fixture("prompts/crossover.golden");
    let a = fixture("prompts/parent_a.glsl");
    let b = fixture("prompts/parent_b.glsl");
    assert_eq!(build_crossover_prompt(&[&a, &b], None).unwrap(), golden);
}

#[test]
fn sanitize_examples() {
    let body = "void mainImage(out vec4 c, in vec2 p) {\n    c = vec4(1.0);\n}\n";
    let fenced = format!("```glsl\n{body}```");
    let s = sanitize(&fenced).unwrap();
    assert_eq!(s.code, body);
    assert!(s.removed_fences);
    assert_eq!(sanitize(body).unwrap().code, body);
    let prose = format!("Here is your shader:\n\n{body}");
    let s = sanitize(&prose).unwrap();
    assert_eq!(s.code, body);
    assert_eq!(s.removed_prefix_lines, 2);
    assert!(sanitize("Just words here.\nAnd more words.").is_err());
}

#[test]
fn wrapped_seeds_declare_each_uniform_once() {
    for seed in seeds::builtin() {
        let w = wrap_code(&seed).unwrap();
        assert_eq!(count_decl(&w.full_source, "float", "iTime"), 1);
        assert_eq!(count_decl(&w.full_source, "vec3", "iResolution"), 1);
        assert_eq!(count_decl(&w.full_source, "float", "u_audio"), 1);
        assert_eq!(count_main(&w.full_source), 1);
        assert!(structural_validate(&w, &ValidationLimits::default()).ok);
    }
}

#[test]
fn wrap_dedupes_and_keeps_own_main() {
    let own = "uniform float u_audio;\nvoid mainImage(out vec4 c, in vec2 p) {\n    c = vec4(u_audio);\n}\n";
    let w = wrap_code(own).unwrap();
    assert_eq!(count_decl(&w.full_source, "float", "u_audio"), 1);
    assert_eq!(count_decl(&w.full_source, "float", "iTime"), 1);

    let main = "void main() {\n    gl_FragColor = vec4(u_audio);\n}\n";
    let w = wrap_interface(&sanitize(main).unwrap()).unwrap();
    assert_eq!(count_main(&w.full_source), 1);
    assert!(!w.full_source.contains("mainImage(gl_FragColor"));

    assert!(wrap_code("float f() { return 1.0; }\n").is_err());
}

#[test]
fn structural_examples() {
    let limits = ValidationLimits::default();
    let seed = &seeds::builtin()[0];
    let extra = format!("{seed}}}\n");
    let r = structural_validate(&wrap_code(&extra).unwrap(), &limits);
    assert_eq!((r.ok, r.stage_failed), (false, Stage::Structure));

    let mut long = seed.clone();
    while long.chars().count() < 9000 {
        long.push_str("// padding padding padding padding padding padding padding\n");
    }
    let r = structural_validate(&wrap_code(&long).unwrap(), &limits);
    assert_eq!((r.ok, r.stage_failed), (false, Stage::Length));
}

#[test]
fn native_backend_rejects_bad_fixtures() {
    let backend = native_backend().expect("native backend is built by default");
    for name in ["undefined_function.glsl", "type_mismatch.glsl"] {
        let src = fixture(&format!("compile/{name}"));
        let w = wrap_code(&src).unwrap();
        assert!(structural_validate(&w, &ValidationLimits::default()).ok, "{name}");
        let r = compile_check(&w, backend.as_ref()).unwrap();
        assert!(!r.ok, "{name} compiled");
        assert_eq!(r.stage_failed, Stage::Compile);
        assert!(!r.diagnostics.is_empty());
    }
    let src = fixture("compile/undefined_function.glsl");
    let r = compile_check(&wrap_code(&src).unwrap(), backend.as_ref()).unwrap();
    assert!(r.diagnostics.join("\n").contains("noise3"), "{:?}", r.diagnostics);
}

#[test]
fn native_backend_accepts_every_seed() {
    let backend = native_backend().unwrap();
    for (i, seed) in seeds::builtin().iter().enumerate() {
        let r = compile_check(&wrap_code(seed).unwrap(), backend.as_ref()).unwrap();
        assert!(r.ok, "seed {i}: {:?}", r.diagnostics);
    }
}

#[test]
fn backends_degrade_as_documented() {
    let w = wrap_code(&seeds::builtin()[1]).unwrap();
    assert!(compile_check(&w, &AcceptingBackend).unwrap().ok);
    let err = compile_check(&w, &UnavailableBackend).unwrap_err();
    assert_eq!(err.to_string(), "no compile backend");
    let v = validate_candidate(&seeds::builtin()[1], &ValidationLimits::default(), &UnavailableBackend)
        .unwrap();
    assert!(v.report.ok);
}

const BRACES: [char; 6] = ['{', '}', '(', ')', '[', ']'];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    // Inserting or deleting one bracket character either breaks the balance
    // (and validation fails) or the result happens to stay balanced.
    #[test]
    fn single_brace_perturbation_is_caught(
        seed_index in 0usize..14,
        pos in any::<prop::sample::Index>(),
        brace in prop::sample::select(BRACES.to_vec()),
        delete in any::<bool>(),
    ) {
        let code = seeds::builtin()[seed_index].clone();
        let stripped = without_comments(&code);
        let perturbed = if delete {
            let positions: Vec<usize> = code
                .char_indices()
                .filter(|(_, c)| BRACES.contains(c))
                .map(|(i, _)| i)
                .collect();
            let at = positions[pos.index(positions.len())];
            let mut s = code.clone();
            s.remove(at);
            s
        } else {
            let boundaries: Vec<usize> = code.char_indices().map(|(i, _)| i).collect();
            let at = boundaries[pos.index(boundaries.len())];
            let mut s = code.clone();
            s.insert(at, brace);
            s
        };
        let balanced = {
            let text = without_comments(&perturbed);
            let mut stack = Vec::new();
            let mut ok = true;
            for c in text.chars() {
                match c {
                    '{' | '(' | '[' => stack.push(c),
                    '}' | ')' | ']' => {
                        let open = match c { '}' => '{', ')' => '(', _ => '[' };
                        if stack.pop() != Some(open) { ok = false; break; }
                    }
                    _ => {}
                }
            }
            ok && stack.is_empty()
        };
        let report = match wrap_code(&perturbed) {
            Ok(w) => structural_validate(&w, &ValidationLimits::default()),
            Err(_) => return Ok(()),
        };
        if !balanced {
            prop_assert!(!report.ok, "accepted unbalanced code");
        }
        // A perturbation inside a comment leaves the code unchanged.
        if without_comments(&perturbed) == stripped {
            prop_assert!(report.ok);
        }
    }
}
