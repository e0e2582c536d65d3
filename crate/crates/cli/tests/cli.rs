use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

fn minisa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minisa")).args(args).output().unwrap()
}

fn analyze(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    minisa(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const DIV: &str = "int f(int x) {\n  int c = 0;\n  if (x > 1)\n    return 4 / c;\n  return 0;\n}\n";

#[test]
fn exit_codes_follow_the_outcome() {
    let out = tempfile::tempdir().unwrap();
    let clean = corpus("path_sensitivity.mc");
    assert_eq!(analyze(out.path(), &[clean.to_str().unwrap()]).status.code(), Some(0));

    let src = tempfile::tempdir().unwrap();
    let buggy = write(src.path(), "div.mc", DIV);
    let o = analyze(out.path(), &[buggy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("div.mc:4:14: warning: Division by zero [core.DivideZero]"), "{}", stdout(&o));

    let missing = src.path().join("nope.json");
    assert_eq!(analyze(out.path(), &[missing.to_str().unwrap()]).status.code(), Some(2));
    let o = analyze(out.path(), &["--ctu-dir", "x", buggy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = analyze(out.path(), &["--refute-width", "12", buggy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let parse_error = write(src.path(), "bad.mc", "int f( {\n");
    assert_eq!(analyze(out.path(), &[parse_error.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn compilation_database_drives_ctu() {
    let proj = tempfile::tempdir().unwrap();
    for f in ["main.mc", "lib.mc"] {
        fs::copy(corpus("ctu_fn").join(f), proj.path().join(f)).unwrap();
    }
    let db = write(
        proj.path(),
        "compile_commands.json",
        r#"[{"directory": ".", "file": "main.mc", "command": "cc -c main.mc"},
            {"directory": ".", "file": "lib.mc", "command": "cc -c lib.mc"}]"#,
    );
    let out = tempfile::tempdir().unwrap();
    let db = db.to_str().unwrap();
    assert_eq!(analyze(out.path(), &[db]).status.code(), Some(0));
    let o = analyze(out.path(), &["--ctu", "--stats", db]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("STAT: translation_units = 2"), "{err}");
    assert!(out.path().join("ctu").is_dir());
    assert!(out.path().join("main.plist").is_file() && out.path().join("lib.plist").is_file());
}

#[test]
fn suppression_by_comment_and_by_hash() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let commented = DIV.replace("  if (x > 1)\n", "  if (x > 1)\n    // minisa-suppress core.DivideZero\n");
    let f = write(src.path(), "a.mc", &commented);
    let o = analyze(out.path(), &["--stats", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("STAT: suppressed_by_comment = 1"));

    let f = write(src.path(), "a.mc", DIV);
    assert_eq!(analyze(out.path(), &[f.to_str().unwrap()]).status.code(), Some(1));
    let hashes = minisa_hashes(out.path());
    assert_eq!(hashes.len(), 1);
    let list = write(src.path(), "suppress.txt", &format!("# known issues\n{}\n", hashes[0]));
    let o = analyze(out.path(), &["--suppress-file", list.to_str().unwrap(), f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

fn minisa_hashes(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("a.plist")).unwrap();
    text.split("<key>issue_hash</key>")
        .skip(1)
        .map(|rest| rest.split("<string>").nth(1).unwrap().split('<').next().unwrap().to_string())
        .collect()
}

#[test]
fn diff_tracks_issues_across_edits() {
    let src = tempfile::tempdir().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let f = write(src.path(), "a.mc", DIV);
    analyze(a.path(), &[f.to_str().unwrap()]);
    // Moving the function down and reindenting keeps its hash.
    let moved = format!("int g(void) {{\n  return 1;\n}}\n\n{}", DIV.replace("  ", "    "));
    write(src.path(), "a.mc", &moved);
    analyze(b.path(), &[f.to_str().unwrap()]);
    let o = minisa(&["diff", a.path().to_str().unwrap(), b.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).ends_with("0 new, 0 resolved, 1 common\n"), "{}", stdout(&o));

    write(src.path(), "a.mc", "int f(int x) {\n  return x;\n}\n");
    analyze(b.path(), &[f.to_str().unwrap()]);
    let o = minisa(&["diff", a.path().to_str().unwrap(), b.path().to_str().unwrap()]);
    assert!(stdout(&o).contains("resolved: "), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("0 new, 1 resolved, 0 common\n"));
}

#[test]
fn formats_coverage_and_cfg_dump() {
    let out = tempfile::tempdir().unwrap();
    let f = corpus("coverage_loop.mc");
    let o = analyze(out.path(), &["--format", "both", "--coverage", "--dump-cfg", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("B0"), "{}", stdout(&o));
    assert!(out.path().join("index.html").is_file());
    assert!(out.path().join("coverage_loop.plist").is_file());
    let gcov = fs::read_to_string(out.path().join("coverage/coverage_loop.mc.gcov")).unwrap();
    assert!(gcov.contains("0:6:  int done = i;"), "{gcov}");
    assert!(out.path().join("stats.txt").is_file());

    let html = tempfile::tempdir().unwrap();
    analyze(html.path(), &["--format", "html", f.to_str().unwrap()]);
    assert!(!html.path().join("coverage_loop.plist").exists());
}

#[test]
fn refute_and_emit_smt() {
    let out = tempfile::tempdir().unwrap();
    let smt = tempfile::tempdir().unwrap();
    let f = corpus("refutation.mc");
    assert_eq!(analyze(out.path(), &[f.to_str().unwrap()]).status.code(), Some(1));
    let o = analyze(out.path(), &["--refute", "--emit-smt", smt.path().to_str().unwrap(), f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let n = fs::read_dir(smt.path()).unwrap().count();
    assert_eq!(n, 1);
    // Two pointer symbols at width 16 exceed the search budget, so the report stays.
    let o = analyze(out.path(), &["--refute", "--refute-width", "16", "--stats", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("STAT: refutation_unknown = 1"));
}
