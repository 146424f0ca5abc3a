use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shaderbreed_core::glsl::sanitize;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sanitize")
}

fn raw_fixtures() -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "raw"))
        .collect();
    v.sort();
    v
}

#[test]
fn corpus_matches_goldens() {
    let fixtures = raw_fixtures();
    assert!(fixtures.len() >= 20, "only {} fixtures", fixtures.len());
    let mut failures = Vec::new();
    for raw_path in &fixtures {
        let raw = fs::read_to_string(raw_path).unwrap();
        let expected = raw_path.with_extension("expected");
        let error = raw_path.with_extension("error");
        let name = raw_path.file_stem().unwrap().to_string_lossy().into_owned();
        match (sanitize(&raw), expected.exists()) {
            (Ok(s), true) => {
                let want = fs::read_to_string(&expected).unwrap();
                if s.code != want {
                    failures.push(format!("{name}: got\n{}\nwant\n{want}", s.code));
                }
            }
            (Err(e), false) => {
                let want = fs::read_to_string(&error).unwrap();
                if e.to_string() != want.trim_end() {
                    failures.push(format!("{name}: error {e:?}, want {want:?}"));
                }
            }
            (Ok(s), false) => failures.push(format!("{name}: expected an error, got {:?}", s.code)),
            (Err(e), true) => failures.push(format!("{name}: unexpected error {e}")),
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n---\n"));
}

#[test]
fn goldens_are_fixed_points() {
    for raw_path in raw_fixtures() {
        let expected = raw_path.with_extension("expected");
        if let Ok(want) = fs::read_to_string(&expected) {
            assert_eq!(sanitize(&want).unwrap().code, want, "{}", expected.display());
        }
    }
}

const FRAGMENTS: &[&str] = &[
    "```glsl\n",
    "```\n",
    "```",
    "Here is the shader:\n",
    "This adds motion.\n",
    "- bullet point about sin()\n",
    "void mainImage(out vec4 c, in vec2 p) {\n",
    "void main() {\n",
    "    c = vec4(1.0);\n",
    "float f(float x) { return x * 2.0; }\n",
    "}\n",
    "};\n",
    "{\n",
    "/* block\n",
    "comment */\n",
    "// line comment }\n",
    "#define K 3.0\n",
    "precision highp float;\n",
    "\n",
    "   \n",
    "\r\n",
    "\t",
    ")",
    ";",
    "`",
    "uniform float iTime;\n",
    "struct S { float a; };\n",
];

fn fuzz_input(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..24);
    let mut s = String::new();
    for _ in 0..n {
        if rng.gen_bool(0.1) {
            let len = rng.gen_range(1..12);
            for _ in 0..len {
                s.push(rng.gen_range(' '..='~'));
            }
        } else {
            s.push_str(FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())]);
        }
    }
    s
}

#[test]
fn sanitize_is_idempotent_on_fuzzed_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a17);
    let mut accepted = 0;
    for i in 0..10_000 {
        let raw = fuzz_input(&mut rng);
        if let Ok(once) = sanitize(&raw) {
            accepted += 1;
            let twice = sanitize(&once.code)
                .unwrap_or_else(|e| panic!("input {i}: second pass failed: {e}\n{raw:?}"));
            assert_eq!(twice.code, once.code, "input {i}: {raw:?}");
        }
    }
    assert!(accepted > 5_000, "only {accepted} inputs produced code");
}
