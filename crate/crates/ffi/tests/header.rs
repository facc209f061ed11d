use std::path::Path;
use std::process::Command;

/// Compiles the generated header as C and C++ when a compiler is around.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"seg4d.h\"\n\
         int main(void) {\n\
           Seg4dScores s;\n\
           Seg4dEvaluator *ev = seg4d_evaluator_new();\n\
           Seg4dStatus st = seg4d_evaluator_compute(ev, 0, &s);\n\
           seg4d_evaluator_free(ev);\n\
           return st == SEG4D_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected seg4d.h"),
            Err(_) => eprintln!("{compiler} not found, skipping"),
        }
    }
}
