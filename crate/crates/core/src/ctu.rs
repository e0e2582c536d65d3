//! Cross-translation-unit analysis.
//!
//! Pass one writes every unit's AST to `<dir>/asts/<stem>.ast` and a sorted `index.txt`
//! mapping function USRs to those files. Pass two loads bodies on demand through
//! [`CtuLoader`], which caches deserialized files and imported definitions separately.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use thiserror::Error;

use crate::engine::{DefinitionSource, IdAlloc};
use crate::frontend::{deserialize_ast, serialize_ast, Ast, Expr, ExprId, ExprKind, FunctionDecl, Loc, Stmt, StmtKind, Usr, VarId};

#[derive(Debug, Error)]
pub enum CtuError {
    #[error("conflicting definitions of {usr} in {file_a} and {file_b}")]
    IndexConflict { usr: String, file_a: String, file_b: String },
    #[error("one definition rule violation: record {usr} differs between {file_a} and {file_b}")]
    OdrViolation { usr: String, file_a: String, file_b: String },
    #[error("malformed index line {line}: {text:?}")]
    BadIndex { line: usize, text: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CtuError + '_ {
    move |source| CtuError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// USR to relative `.ast` path, kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CtuIndex {
    pub entries: BTreeMap<Usr, String>,
}

impl CtuIndex {
    pub fn render(&self) -> String {
        self.entries.iter().map(|(u, p)| format!("{} {p}\n", u.as_str())).collect()
    }

    pub fn parse(text: &str) -> Result<CtuIndex, CtuError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((usr, path)) = line.split_once(' ') else {
                return Err(CtuError::BadIndex {
                    line: i + 1,
                    text: line.into(),
                });
            };
            entries.insert(Usr(usr.to_string()), path.to_string());
        }
        Ok(CtuIndex { entries })
    }

    pub fn read(dir: &Path) -> Result<CtuIndex, CtuError> {
        let p = dir.join("index.txt");
        Self::parse(&fs::read_to_string(&p).map_err(io_err(&p))?)
    }
}

/// A function's body with locations, expression ids and variable numbering erased, so the
/// same definition seen from two units compares equal.
pub fn body_fingerprint(f: &FunctionDecl) -> Vec<u8> {
    let mut f = f.clone();
    f.file.clear();
    f.loc = Loc::default();
    let mut vars: HashMap<VarId, VarId> = HashMap::new();
    let mut renumber = |v: &mut VarId| {
        let n = vars.len() as u32;
        *v = *vars.entry(*v).or_insert(VarId(n));
    };
    for p in &mut f.params {
        renumber(&mut p.id);
        p.loc = Loc::default();
    }
    if let Some(body) = &mut f.body {
        body.walk_decls_mut(&mut |d| {
            renumber(&mut d.id);
            d.loc = Loc::default();
        });
        clear_stmt_locs(body);
        body.walk_exprs_mut(&mut |e| {
            e.loc = Loc::default();
            e.id = ExprId(0);
            if let ExprKind::DeclRef { var, .. } = &mut e.kind {
                // Globals keep their names only.
                *var = vars.get(var).copied().unwrap_or(VarId(u32::MAX));
            }
        });
    }
    bincode::serialize(&f).expect("in-memory serialization")
}

fn clear_stmt_locs(s: &mut Stmt) {
    s.loc = Loc::default();
    match &mut s.kind {
        StmtKind::Compound(v) => v.iter_mut().for_each(clear_stmt_locs),
        StmtKind::If { then, els, .. } => {
            clear_stmt_locs(then);
            if let Some(e) = els {
                clear_stmt_locs(e);
            }
        }
        StmtKind::While { body, .. } => clear_stmt_locs(body),
        _ => {}
    }
}

fn file_stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tu".into())
}

/// Pass one: serializes every unit and writes the definition index. Units are processed in
/// file-name order so the output does not depend on the order they were given in.
pub fn ctu_pass1(units: &[Ast], dir: &Path) -> Result<CtuIndex, CtuError> {
    let asts_dir = dir.join("asts");
    fs::create_dir_all(&asts_dir).map_err(io_err(&asts_dir))?;
    let mut order: Vec<&Ast> = units.iter().collect();
    order.sort_by(|a, b| a.file.cmp(&b.file));

    let mut stems: BTreeMap<String, usize> = BTreeMap::new();
    let mut index = CtuIndex::default();
    let mut bodies: BTreeMap<Usr, (Vec<u8>, String)> = BTreeMap::new();
    let mut records: BTreeMap<Usr, (String, String)> = BTreeMap::new();
    for ast in order {
        let stem = file_stem(&ast.file);
        let n = stems.entry(stem.clone()).or_insert(0);
        let rel = if *n == 0 {
            format!("asts/{stem}.ast")
        } else {
            format!("asts/{stem}_{n}.ast")
        };
        *n += 1;
        let path = dir.join(&rel);
        fs::write(&path, serialize_ast(ast)).map_err(io_err(&path))?;

        for r in ast.records() {
            let fp = r.fingerprint();
            match records.get(&r.usr) {
                Some((old, file)) if *old != fp => {
                    return Err(CtuError::OdrViolation {
                        usr: r.usr.as_str().into(),
                        file_a: file.clone(),
                        file_b: ast.file.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    records.insert(r.usr.clone(), (fp, ast.file.clone()));
                }
            }
        }
        for f in ast.definitions() {
            let fp = body_fingerprint(f);
            match bodies.get(&f.usr) {
                Some((old, file)) if *old != fp => {
                    return Err(CtuError::IndexConflict {
                        usr: f.usr.as_str().into(),
                        file_a: file.clone(),
                        file_b: ast.file.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    bodies.insert(f.usr.clone(), (fp, ast.file.clone()));
                    index.entries.insert(f.usr.clone(), rel.clone());
                }
            }
        }
    }
    let p = dir.join("index.txt");
    fs::write(&p, index.render()).map_err(io_err(&p))?;
    Ok(index)
}

/// On-demand definition loader for one analysis. Not shared between threads.
pub struct CtuLoader {
    dir: PathBuf,
    index: Rc<CtuIndex>,
    /// Record fingerprints of the unit being analyzed.
    local_records: BTreeMap<String, String>,
    files: HashMap<String, Option<Rc<Ast>>>,
    imported: HashMap<Usr, Option<FunctionDecl>>,
}

impl CtuLoader {
    pub fn new(dir: &Path, index: Rc<CtuIndex>, unit: &Ast) -> CtuLoader {
        CtuLoader {
            dir: dir.to_path_buf(),
            index,
            local_records: unit.records().map(|r| (r.name.clone(), r.fingerprint())).collect(),
            files: HashMap::new(),
            imported: HashMap::new(),
        }
    }

    fn file(&mut self, rel: &str, stats: &mut BTreeMap<String, u64>) -> Option<Rc<Ast>> {
        if let Some(a) = self.files.get(rel) {
            return a.clone();
        }
        let loaded = fs::read(self.dir.join(rel)).ok().and_then(|b| deserialize_ast(&b).ok());
        if loaded.is_some() {
            *stats.entry("ctu_ast_loads".into()).or_default() += 1;
        } else {
            *stats.entry("ctu_load_errors".into()).or_default() += 1;
        }
        let a = loaded.map(Rc::new);
        self.files.insert(rel.to_string(), a.clone());
        a
    }
}

impl DefinitionSource for CtuLoader {
    fn load(&mut self, usr: &Usr, ids: &mut IdAlloc, stats: &mut BTreeMap<String, u64>) -> Option<FunctionDecl> {
        if let Some(d) = self.imported.get(usr) {
            return d.clone();
        }
        let rel = self.index.entries.get(usr)?.clone();
        let ast = self.file(&rel, stats)?;
        let decl = ast.definitions().find(|f| &f.usr == usr)?;
        // Records used by the definition must agree with this unit's layout.
        let compatible = ast
            .records()
            .all(|r| self.local_records.get(&r.name).is_none_or(|fp| *fp == r.fingerprint()));
        let out = if compatible {
            Some(import(decl, &ast, ids))
        } else {
            *stats.entry("ctu_odr_rejections".into()).or_default() += 1;
            None
        };
        self.imported.insert(usr.clone(), out.clone());
        out
    }
}

/// Copies a definition into the importing unit's id space. Globals are matched by name.
pub fn import(decl: &FunctionDecl, from: &Ast, ids: &mut IdAlloc) -> FunctionDecl {
    let globals: HashMap<VarId, String> = from.globals().map(|g| (g.id, g.name.clone())).collect();
    let mut d = decl.clone();
    let mut map: HashMap<VarId, VarId> = HashMap::new();
    let fresh_var = |ids: &mut IdAlloc| {
        let v = VarId(ids.next_var);
        ids.next_var += 1;
        v
    };
    for p in &mut d.params {
        let v = fresh_var(ids);
        map.insert(p.id, v);
        p.id = v;
    }
    if let Some(body) = &mut d.body {
        body.walk_decls_mut(&mut |v| {
            let n = fresh_var(ids);
            map.insert(v.id, n);
            v.id = n;
        });
        body.walk_exprs_mut(&mut |e: &mut Expr| {
            e.id = ExprId(ids.next_expr);
            ids.next_expr += 1;
            if let ExprKind::DeclRef { var, .. } = &mut e.kind {
                if let Some(n) = map.get(var) {
                    *var = *n;
                } else if let Some(name) = globals.get(var) {
                    *var = match ids.globals.get(name) {
                        Some(v) => *v,
                        None => {
                            let v = VarId(ids.next_var);
                            ids.next_var += 1;
                            ids.globals.insert(name.clone(), v);
                            v
                        }
                    };
                }
            }
        });
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_translation_unit;

    fn parse(src: &str, file: &str) -> Ast {
        parse_translation_unit(src, file).unwrap()
    }

    #[test]
    fn index_maps_external_definition() {
        let a = parse("int f(int x);\nvoid g() { int x = f(42); }\n", "A.mc");
        let b = parse("int f(int x) { return 5 / (x - 42); }\n", "B.mc");
        let dir = tempfile::tempdir().unwrap();
        let idx = ctu_pass1(&[a, b], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("index.txt")).unwrap();
        assert!(text.ends_with('\n'));
        assert!(text.contains(" asts/B.ast"));
        assert_eq!(idx, CtuIndex::read(dir.path()).unwrap());
    }

    #[test]
    fn conflicts_and_odr() {
        let dir = tempfile::tempdir().unwrap();
        let a = parse("int f(int x) { return x; }\n", "a.mc");
        let same = parse("\n\nint f(int x) {\n  return x;\n}\n", "b.mc");
        let other = parse("int f(int x) { return x + 1; }\n", "c.mc");
        assert!(ctu_pass1(&[a.clone(), same], dir.path()).is_ok());
        assert!(matches!(ctu_pass1(&[a, other], dir.path()), Err(CtuError::IndexConflict { .. })));
        let r1 = parse("struct X { int a; };\n", "r1.mc");
        let r2 = parse("struct X { int a; int b; };\n", "r2.mc");
        assert!(matches!(ctu_pass1(&[r1, r2], dir.path()), Err(CtuError::OdrViolation { .. })));
    }

    #[test]
    fn duplicate_stems_get_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let a = parse("int f() { return 1; }\n", "x/u.mc");
        let b = parse("int g() { return 2; }\n", "y/u.mc");
        let idx = ctu_pass1(&[b, a], dir.path()).unwrap();
        let paths: Vec<&String> = idx.entries.values().collect();
        assert_eq!(paths, ["asts/u.ast", "asts/u_1.ast"]);
    }

    #[test]
    fn files_are_loaded_once() {
        let dir = tempfile::tempdir().unwrap();
        let lib = parse(
            "int a() { return 1; }\nint b() { return 2; }\nint c() { return 3; }\n",
            "lib.mc",
        );
        let main = parse("int a();\nint b();\nint c();\n", "main.mc");
        let idx = Rc::new(ctu_pass1(&[lib.clone(), main.clone()], dir.path()).unwrap());
        let mut loader = CtuLoader::new(dir.path(), idx, &main);
        let mut ids = IdAlloc {
            next_expr: main.expr_count,
            next_var: main.var_count,
            ..Default::default()
        };
        let mut stats = BTreeMap::new();
        for f in lib.definitions() {
            assert!(loader.load(&f.usr, &mut ids, &mut stats).is_some());
            assert!(loader.load(&f.usr, &mut ids, &mut stats).is_some());
        }
        assert_eq!(stats["ctu_ast_loads"], 1);
        assert!(loader.load(&Usr("F:nope#".into()), &mut ids, &mut stats).is_none());
    }

    #[test]
    fn corrupt_files_count_as_unindexed() {
        let dir = tempfile::tempdir().unwrap();
        let lib = parse("int a() { return 1; }\n", "lib.mc");
        let idx = Rc::new(ctu_pass1(std::slice::from_ref(&lib), dir.path()).unwrap());
        fs::write(dir.path().join("asts/lib.ast"), b"garbage").unwrap();
        let mut loader = CtuLoader::new(dir.path(), idx, &lib);
        let mut stats = BTreeMap::new();
        let usr = lib.definitions().next().unwrap().usr.clone();
        assert!(loader.load(&usr, &mut IdAlloc::default(), &mut stats).is_none());
        assert_eq!(stats["ctu_load_errors"], 1);
    }
}
