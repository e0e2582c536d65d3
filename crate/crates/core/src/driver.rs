//! Run orchestration and report output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cfg::build_cfg;
use crate::checkers::BugReport;
use crate::ctu::{ctu_pass1, CtuError, CtuIndex, CtuLoader};
use crate::engine::{analyze_tu, AnalysisOptions, DefinitionSource};
use crate::frontend::{parse_translation_unit, Ast, FrontendError};
use crate::refutation::{emit_smtlib, refute_exact, Verdict};
use crate::solver::Width;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{0}: no such file")]
    MissingFile(PathBuf),
    #[error("malformed compilation database {path}: {message}")]
    BadDatabase { path: PathBuf, message: String },
    #[error("{0}")]
    Frontend(#[from] FrontendError),
    #[error("{0}")]
    Ctu(#[from] CtuError),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read plist {path}: {message}")]
    BadPlist { path: PathBuf, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Plist,
    Html,
    Both,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub analysis: AnalysisOptions,
    pub ctu: bool,
    pub ctu_dir: Option<PathBuf>,
    pub refute: bool,
    pub refute_width: u32,
    pub emit_smt: Option<PathBuf>,
    pub coverage: bool,
    pub output_dir: PathBuf,
    pub format: Format,
    pub suppress_file: Option<PathBuf>,
    pub jobs: usize,
    pub dump_cfg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            analysis: AnalysisOptions::default(),
            ctu: false,
            ctu_dir: None,
            refute: false,
            refute_width: 8,
            emit_smt: None,
            coverage: false,
            output_dir: PathBuf::from("minisa-out"),
            format: Format::Plist,
            suppress_file: None,
            jobs: 1,
            dump_cfg: false,
        }
    }
}

#[derive(Deserialize)]
struct DbEntry {
    directory: String,
    file: String,
    #[serde(default)]
    #[allow(dead_code)]
    arguments: Vec<String>,
}

/// Reads a compile-commands file. Paths are resolved against each entry's directory, which
/// is itself resolved against the database location when relative.
pub fn read_compilation_database(path: &Path) -> Result<Vec<PathBuf>, DriverError> {
    let text = fs::read_to_string(path).map_err(|_| DriverError::MissingFile(path.to_path_buf()))?;
    let entries: Vec<DbEntry> = serde_json::from_str(&text).map_err(|e| DriverError::BadDatabase {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(entries
        .into_iter()
        .map(|e| {
            let dir = base.join(&e.directory);
            dir.join(&e.file)
        })
        .collect())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, DriverError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.extension().is_some_and(|e| e == "json") {
            files.extend(read_compilation_database(p)?);
        } else {
            files.push(p.clone());
        }
    }
    for f in &files {
        if !f.is_file() {
            return Err(DriverError::MissingFile(f.clone()));
        }
    }
    Ok(files)
}

/// One analyzed translation unit after post-processing.
#[derive(Clone, Debug)]
pub struct UnitResult {
    pub file: String,
    /// Reports that reach the output.
    pub reports: Vec<BugReport>,
    /// Reports hidden by visitors or suppression, and reports refuted.
    pub hidden: Vec<BugReport>,
}

#[derive(Clone, Debug, Default)]
pub struct RunResult {
    pub units: Vec<UnitResult>,
    pub stats: BTreeMap<String, u64>,
    pub coverage: BTreeMap<String, BTreeMap<u32, u64>>,
    pub cfg_dump: String,
}

impl RunResult {
    pub fn emitted(&self) -> impl Iterator<Item = &BugReport> {
        self.units.iter().flat_map(|u| u.reports.iter())
    }
}

/// Content digest of a warning that survives unrelated edits and file renames.
pub fn issue_hash(checker: &str, fn_usr: &str, line_text: &str, col: u32) -> String {
    let normalized = line_text.split_whitespace().collect::<Vec<_>>().join(" ");
    let token = token_index(line_text, col);
    let mut h = Sha256::new();
    h.update(format!("{checker}|{fn_usr}|{normalized}|{token}"));
    hex::encode(h.finalize())
}

/// Zero-based index of the token containing (or following) 1-based column `col`.
fn token_index(line: &str, col: u32) -> usize {
    let mut count: usize = 0;
    let mut prev_word = false;
    for (i, ch) in line.chars().enumerate() {
        let word = ch.is_alphanumeric() || ch == '_';
        let starts = if ch.is_whitespace() { false } else { !(word && prev_word) };
        prev_word = word;
        if starts {
            if i + 1 > col as usize {
                break;
            }
            count += 1;
        }
    }
    count.saturating_sub(1)
}

fn comment_suppresses(lines: &[&str], line: u32, checker: &str) -> bool {
    let idx = line as usize;
    [idx.checked_sub(1), idx.checked_sub(2)].into_iter().flatten().any(|i| {
        lines.get(i).is_some_and(|l| {
            l.split("// minisa-suppress")
                .skip(1)
                .any(|rest| rest.split_whitespace().next().is_some_and(|id| id == checker || id == "all"))
        })
    })
}

fn read_suppress_file(path: &Path) -> Result<BTreeSet<String>, DriverError> {
    let text = fs::read_to_string(path).map_err(|_| DriverError::MissingFile(path.to_path_buf()))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn bump(stats: &mut BTreeMap<String, u64>, k: &str, n: u64) {
    *stats.entry(k.to_string()).or_default() += n;
}

/// Runs the whole pipeline without writing outputs.
pub fn analyze(cfg: &RunConfig) -> Result<RunResult, DriverError> {
    if cfg.ctu_dir.is_some() && !cfg.ctu {
        return Err(DriverError::Options("--ctu-dir requires --ctu".into()));
    }
    if !matches!(cfg.refute_width, 4 | 8 | 16) {
        return Err(DriverError::Options("--refute-width must be 4, 8 or 16".into()));
    }
    let files = expand_inputs(&cfg.inputs)?;
    let mut sources: BTreeMap<String, String> = BTreeMap::new();
    let mut asts = Vec::new();
    for f in &files {
        let name = f.to_string_lossy().into_owned();
        let src = fs::read_to_string(f).map_err(io(f))?;
        asts.push(parse_translation_unit(&src, &name)?);
        sources.insert(name, src);
    }

    let mut cfg_dump = String::new();
    if cfg.dump_cfg {
        for a in &asts {
            for f in a.definitions() {
                cfg_dump.push_str(&format!("== {} ({})\n{}", f.name, a.file, build_cfg(f).dump()));
            }
        }
    }

    let ctu = if cfg.ctu {
        let dir = cfg.ctu_dir.clone().unwrap_or_else(|| cfg.output_dir.join("ctu"));
        let index = ctu_pass1(&asts, &dir)?;
        Some((dir, Arc::new(index)))
    } else {
        None
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<_> = pool.install(|| {
        asts.par_iter()
            .map(|ast| {
                let mut loader = ctu
                    .as_ref()
                    .map(|(dir, idx)| CtuLoader::new(dir, Rc::new(CtuIndex::clone(idx)), ast));
                let src = loader.as_mut().map(|l| l as &mut dyn DefinitionSource);
                analyze_tu(ast, &cfg.analysis, src)
            })
            .collect()
    });

    let suppress_hashes = match &cfg.suppress_file {
        Some(p) => read_suppress_file(p)?,
        None => BTreeSet::new(),
    };
    let mut out = RunResult {
        cfg_dump,
        ..Default::default()
    };
    let mut units: Vec<(Ast, crate::engine::TuResult)> = asts.into_iter().zip(results).collect();
    units.sort_by(|a, b| a.0.file.cmp(&b.0.file));
    for (ast, res) in units {
        for (k, v) in &res.stats {
            bump(&mut out.stats, k, *v);
        }
        for (file, lines) in &res.coverage {
            let m = out.coverage.entry(file.clone()).or_default();
            for (l, c) in lines {
                *m.entry(*l).or_default() += c;
            }
        }
        let mut unit = UnitResult {
            file: ast.file.clone(),
            reports: Vec::new(),
            hidden: Vec::new(),
        };
        for mut r in res.reports {
            if !sources.contains_key(&r.file) {
                if let Ok(s) = fs::read_to_string(&r.file) {
                    sources.insert(r.file.clone(), s);
                }
            }
            let lines: Vec<&str> = sources.get(&r.file).map(|s| s.lines().collect()).unwrap_or_default();
            let line_text = lines.get(r.loc.line as usize - 1).copied().unwrap_or("");
            r.issue_hash = issue_hash(&r.checker, r.fn_usr.as_str(), line_text, r.loc.col);
            if r.suppressed.is_some() {
                unit.hidden.push(r);
                continue;
            }
            if comment_suppresses(&lines, r.loc.line, &r.checker) {
                r.suppressed = Some("comment".into());
                bump(&mut out.stats, "suppressed_by_comment", 1);
                unit.hidden.push(r);
                continue;
            }
            if suppress_hashes.contains(&r.issue_hash) {
                r.suppressed = Some("hash".into());
                bump(&mut out.stats, "suppressed_by_hash", 1);
                unit.hidden.push(r);
                continue;
            }
            if let Some(dir) = &cfg.emit_smt {
                fs::create_dir_all(dir).map_err(io(dir))?;
                match emit_smtlib(&r.conditions, Width::W32) {
                    Ok(text) => {
                        let p = dir.join(format!("{}.smt2", r.issue_hash));
                        fs::write(&p, text).map_err(io(&p))?;
                    }
                    Err(_) => bump(&mut out.stats, "smt_unsupported", 1),
                }
            }
            if cfg.refute {
                match refute_exact(&r.conditions, Width(cfg.refute_width), 3) {
                    Verdict::Infeasible => {
                        bump(&mut out.stats, "refuted_reports", 1);
                        r.suppressed = Some("refuted".into());
                        unit.hidden.push(r);
                        continue;
                    }
                    Verdict::Unknown => bump(&mut out.stats, "refutation_unknown", 1),
                    Verdict::Feasible(_) => {}
                }
            }
            unit.reports.push(r);
        }
        bump(&mut out.stats, "reports", unit.reports.len() as u64);
        out.units.push(unit);
    }
    bump(&mut out.stats, "translation_units", out.units.len() as u64);
    Ok(out)
}

fn loc_dict(files: &[String], file: &str, line: u32, col: u32) -> plist::Value {
    let mut d = plist::Dictionary::new();
    let idx = files.iter().position(|f| f == file).unwrap_or(0);
    d.insert("file".into(), plist::Value::Integer((idx as u64).into()));
    d.insert("line".into(), plist::Value::Integer((line as u64).into()));
    d.insert("col".into(), plist::Value::Integer((col as u64).into()));
    plist::Value::Dictionary(d)
}

/// The plist document for one unit's reports.
pub fn render_plist(reports: &[BugReport]) -> Vec<u8> {
    let mut reports: Vec<&BugReport> = reports.iter().collect();
    reports.sort_by(|a, b| (&a.file, a.loc, &a.checker, &a.issue_hash).cmp(&(&b.file, b.loc, &b.checker, &b.issue_hash)));
    let files: Vec<String> = reports
        .iter()
        .flat_map(|r| std::iter::once(r.file.clone()).chain(r.path.iter().map(|e| e.file.clone())))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let diags = reports
        .iter()
        .map(|r| {
            let mut d = plist::Dictionary::new();
            d.insert("check_name".into(), r.checker.clone().into());
            d.insert("description".into(), r.message.clone().into());
            d.insert("issue_hash".into(), r.issue_hash.clone().into());
            d.insert("location".into(), loc_dict(&files, &r.file, r.loc.line, r.loc.col));
            let path = r
                .path
                .iter()
                .map(|e| {
                    let mut ev = plist::Dictionary::new();
                    ev.insert("kind".into(), e.kind.as_str().into());
                    ev.insert("location".into(), loc_dict(&files, &e.file, e.loc.line, e.loc.col));
                    ev.insert("message".into(), e.message.clone().into());
                    plist::Value::Dictionary(ev)
                })
                .collect();
            d.insert("path".into(), plist::Value::Array(path));
            plist::Value::Dictionary(d)
        })
        .collect();
    let mut top = plist::Dictionary::new();
    top.insert(
        "files".into(),
        plist::Value::Array(files.into_iter().map(plist::Value::String).collect()),
    );
    top.insert("diagnostics".into(), plist::Value::Array(diags));
    let mut buf = Vec::new();
    plist::Value::Dictionary(top)
        .to_writer_xml(&mut buf)
        .expect("writing plist to memory");
    buf.push(b'\n');
    buf
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_html(result: &RunResult) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>minisa report</title></head><body>\n<h1>Analysis results</h1>\n<table border=\"1\">\n<tr><th>File</th><th>Line</th><th>Checker</th><th>Message</th><th>Path</th></tr>\n",
    );
    for r in result.emitted() {
        s.push_str(&format!(
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td><details><summary>{} events</summary><ol>",
            escape_html(&r.file),
            r.loc.line,
            escape_html(&r.checker),
            escape_html(&r.message),
            r.path.len()
        ));
        for e in &r.path {
            s.push_str(&format!(
                "<li>{}:{}:{} {}</li>",
                escape_html(&e.file),
                e.loc.line,
                e.loc.col,
                escape_html(&e.message)
            ));
        }
        s.push_str("</ol></details></td></tr>\n");
    }
    s.push_str("</table>\n</body></html>\n");
    s
}

/// gcov-like text: `count:line:source`, with `-` for lines holding no statement.
pub fn render_gcov(source: &str, executable: &BTreeSet<u32>, counts: &BTreeMap<u32, u64>) -> String {
    let mut s = String::new();
    for (i, text) in source.lines().enumerate() {
        let line = i as u32 + 1;
        let count = if executable.contains(&line) || counts.contains_key(&line) {
            counts.get(&line).copied().unwrap_or(0).to_string()
        } else {
            "-".into()
        };
        s.push_str(&format!("{count}:{line}:{text}\n"));
    }
    s
}

pub fn render_stats(stats: &BTreeMap<String, u64>) -> String {
    stats.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn unique_stems(files: &[String]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    files
        .iter()
        .map(|f| {
            let stem = Path::new(f).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{}", *n - 1)
            }
        })
        .collect()
}

/// Writes plist/HTML, coverage and stats files into the output directory.
pub fn write_outputs(cfg: &RunConfig, result: &RunResult) -> Result<(), DriverError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io(out))?;
    let files: Vec<String> = result.units.iter().map(|u| u.file.clone()).collect();
    if matches!(cfg.format, Format::Plist | Format::Both) {
        for (u, stem) in result.units.iter().zip(unique_stems(&files)) {
            let p = out.join(format!("{stem}.plist"));
            fs::write(&p, render_plist(&u.reports)).map_err(io(&p))?;
        }
    }
    if matches!(cfg.format, Format::Html | Format::Both) {
        let p = out.join("index.html");
        fs::write(&p, render_html(result)).map_err(io(&p))?;
    }
    if cfg.coverage {
        let dir = out.join("coverage");
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut executable: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for f in &files {
            let src = fs::read_to_string(f).map_err(io(Path::new(f)))?;
            let ast = parse_translation_unit(&src, f)?;
            let lines = executable.entry(f.clone()).or_default();
            for d in ast.definitions() {
                lines.extend(build_cfg(d).lines());
            }
        }
        let empty = BTreeMap::new();
        for (f, stem) in files.iter().zip(unique_stems(&files)) {
            let src = fs::read_to_string(f).map_err(io(Path::new(f)))?;
            let text = render_gcov(&src, &executable[f], result.coverage.get(f).unwrap_or(&empty));
            let p = dir.join(format!("{stem}.mc.gcov"));
            fs::write(&p, text).map_err(io(&p))?;
        }
    }
    let p = out.join("stats.txt");
    fs::write(&p, render_stats(&result.stats)).map_err(io(&p))?;
    Ok(())
}

/// Issue hashes of one run directory, with a printable location for each.
pub fn read_run(dir: &Path) -> Result<BTreeMap<String, String>, DriverError> {
    let mut out = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "plist"))
        .collect();
    entries.sort();
    for p in entries {
        let bad = |m: &str| DriverError::BadPlist {
            path: p.clone(),
            message: m.to_string(),
        };
        let v = plist::Value::from_file(&p).map_err(|e| bad(&e.to_string()))?;
        let top = v.as_dictionary().ok_or_else(|| bad("top level is not a dictionary"))?;
        let files: Vec<String> = top
            .get("files")
            .and_then(|f| f.as_array())
            .map(|a| a.iter().filter_map(|s| s.as_string().map(str::to_string)).collect())
            .unwrap_or_default();
        let diags = top
            .get("diagnostics")
            .and_then(|d| d.as_array())
            .ok_or_else(|| bad("missing diagnostics"))?;
        for d in diags {
            let d = d.as_dictionary().ok_or_else(|| bad("diagnostic is not a dictionary"))?;
            let hash = d
                .get("issue_hash")
                .and_then(|h| h.as_string())
                .ok_or_else(|| bad("missing issue_hash"))?;
            let loc = d.get("location").and_then(|l| l.as_dictionary());
            let num = |k: &str| loc.and_then(|l| l.get(k)).and_then(|v| v.as_unsigned_integer()).unwrap_or(0);
            let file = files.get(num("file") as usize).cloned().unwrap_or_default();
            let checker = d.get("check_name").and_then(|c| c.as_string()).unwrap_or("");
            out.insert(hash.to_string(), format!("{file}:{}:{} {checker}", num("line"), num("col")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiffResult {
    pub new: BTreeSet<String>,
    pub resolved: BTreeSet<String>,
    pub common: BTreeSet<String>,
}

pub fn diff_runs(a: &Path, b: &Path) -> Result<(DiffResult, String), DriverError> {
    let ra = read_run(a)?;
    let rb = read_run(b)?;
    let ka: BTreeSet<String> = ra.keys().cloned().collect();
    let kb: BTreeSet<String> = rb.keys().cloned().collect();
    let d = DiffResult {
        new: &kb - &ka,
        resolved: &ka - &kb,
        common: &ka & &kb,
    };
    let mut text = String::new();
    for h in &d.new {
        text.push_str(&format!("new: {} {h}\n", rb[h]));
    }
    for h in &d.resolved {
        text.push_str(&format!("resolved: {} {h}\n", ra[h]));
    }
    text.push_str(&format!(
        "{} new, {} resolved, {} common\n",
        d.new.len(),
        d.resolved.len(),
        d.common.len()
    ));
    Ok((d, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_whitespace_but_not_column_token() {
        let a = issue_hash("core.DivideZero", "F:f#i", "  return 9/c;", 12);
        let b = issue_hash("core.DivideZero", "F:f#i", "return 9/c;", 10);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, issue_hash("core.DivideZero", "F:f#i", "return 9/c;", 8));
    }

    #[test]
    fn token_indices() {
        assert_eq!(token_index("return 9/c;", 1), 0);
        assert_eq!(token_index("return 9/c;", 3), 0);
        assert_eq!(token_index("return 9/c;", 8), 1);
        assert_eq!(token_index("return 9/c;", 9), 2);
    }

    #[test]
    fn comment_suppression_rules() {
        let lines = ["int x;", "// minisa-suppress core.DivideZero", "y = 1/x;", "z = 1/x; // minisa-suppress all"];
        assert!(comment_suppresses(&lines, 3, "core.DivideZero"));
        assert!(!comment_suppresses(&lines, 3, "unix.Malloc"));
        assert!(comment_suppresses(&lines, 4, "unix.Malloc"));
        assert!(!comment_suppresses(&lines, 1, "core.DivideZero"));
    }

    #[test]
    fn gcov_marks_non_executable_lines() {
        let src = "int f() {\n  return 1;\n}\n";
        let text = render_gcov(src, &BTreeSet::from([2]), &BTreeMap::new());
        assert_eq!(text, "-:1:int f() {\n0:2:  return 1;\n-:3:}\n");
    }

    #[test]
    fn empty_plist_is_valid() {
        let bytes = render_plist(&[]);
        let v = plist::Value::from_reader_xml(&bytes[..]).unwrap();
        assert!(v.as_dictionary().unwrap().get("diagnostics").unwrap().as_array().unwrap().is_empty());
    }
}
