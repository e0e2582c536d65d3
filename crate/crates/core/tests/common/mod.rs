//! Test oracles shared by the integration suites: two concrete interpreters (one over the AST,
//! one over the CFG), a flow-insensitive division checker, and a random program generator.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use minisa::cfg::{Cfg, Elem, Terminator, ENTRY};
use minisa::frontend::{BinaryOp, Expr, ExprKind, FunctionDecl, Stmt, StmtKind, UnaryOp, VarId};
use proptest::prelude::*;

pub fn corpus(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Returned(Option<i32>),
    /// Division or remainder by zero at this line.
    DivZero(u32),
    OutOfFuel,
}

enum Flow {
    Next,
    Ret(Option<i32>),
}

struct Fault(Outcome);

type Env = HashMap<VarId, i32>;

fn eval(e: &Expr, env: &mut Env) -> Result<i32, Fault> {
    Ok(match &e.kind {
        ExprKind::IntLit(v) => *v,
        ExprKind::DeclRef { var, .. } => *env.get(var).unwrap_or(&0),
        ExprKind::Unary { op, operand } => {
            let v = eval(operand, env)?;
            match op {
                UnaryOp::Neg => v.wrapping_neg(),
                UnaryOp::Not => (v == 0) as i32,
                _ => panic!("pointer operations are outside the oracle's language"),
            }
        }
        ExprKind::Binary { op, lhs, rhs } => match op {
            BinaryOp::Assign => {
                let v = eval(rhs, env)?;
                let ExprKind::DeclRef { var, .. } = &lhs.kind else {
                    panic!("assignment to non-variable")
                };
                env.insert(*var, v);
                v
            }
            BinaryOp::LAnd => (eval(lhs, env)? != 0 && eval(rhs, env)? != 0) as i32,
            BinaryOp::LOr => (eval(lhs, env)? != 0 || eval(rhs, env)? != 0) as i32,
            op => {
                let a = eval(lhs, env)?;
                let b = eval(rhs, env)?;
                match op {
                    BinaryOp::Add => a.wrapping_add(b),
                    BinaryOp::Sub => a.wrapping_sub(b),
                    BinaryOp::Mul => a.wrapping_mul(b),
                    BinaryOp::Div | BinaryOp::Rem if b == 0 => return Err(Fault(Outcome::DivZero(e.loc.line))),
                    BinaryOp::Div => a.wrapping_div(b),
                    BinaryOp::Rem => a.wrapping_rem(b),
                    BinaryOp::Lt => (a < b) as i32,
                    BinaryOp::Le => (a <= b) as i32,
                    BinaryOp::Gt => (a > b) as i32,
                    BinaryOp::Ge => (a >= b) as i32,
                    BinaryOp::Eq => (a == b) as i32,
                    BinaryOp::Ne => (a != b) as i32,
                    _ => unreachable!(),
                }
            }
        },
        _ => panic!("calls and memory are outside the oracle's language"),
    })
}

fn exec(s: &Stmt, env: &mut Env, fuel: &mut u32) -> Result<Flow, Fault> {
    Ok(match &s.kind {
        StmtKind::Compound(v) => {
            for s in v {
                if let Flow::Ret(r) = exec(s, env, fuel)? {
                    return Ok(Flow::Ret(r));
                }
            }
            Flow::Next
        }
        StmtKind::If { cond, then, els } => {
            if eval(cond, env)? != 0 {
                exec(then, env, fuel)?
            } else if let Some(e) = els {
                exec(e, env, fuel)?
            } else {
                Flow::Next
            }
        }
        StmtKind::While { cond, body } => {
            while eval(cond, env)? != 0 {
                if *fuel == 0 {
                    return Err(Fault(Outcome::OutOfFuel));
                }
                *fuel -= 1;
                if let Flow::Ret(r) = exec(body, env, fuel)? {
                    return Ok(Flow::Ret(r));
                }
            }
            Flow::Next
        }
        StmtKind::Return(e) => Flow::Ret(match e {
            Some(e) => Some(eval(e, env)?),
            None => None,
        }),
        StmtKind::Decl(v) => {
            let init = match &v.init {
                Some(e) => eval(e, env)?,
                None => 0,
            };
            env.insert(v.id, init);
            Flow::Next
        }
        StmtKind::Expr(e) => {
            eval(e, env)?;
            Flow::Next
        }
        StmtKind::Empty => Flow::Next,
    })
}

/// Runs an integer-only function directly on its syntax tree.
pub fn run_ast(f: &FunctionDecl, args: &[i32], fuel: u32) -> Outcome {
    let mut env: Env = f.params.iter().zip(args).map(|(p, a)| (p.id, *a)).collect();
    let mut fuel = fuel;
    match exec(f.body.as_ref().unwrap(), &mut env, &mut fuel) {
        Ok(Flow::Ret(r)) => Outcome::Returned(r),
        Ok(Flow::Next) => Outcome::Returned(None),
        Err(Fault(o)) => o,
    }
}

/// Runs an integer-only function by walking its CFG blocks.
pub fn run_cfg(f: &FunctionDecl, cfg: &Cfg, args: &[i32], fuel: u32) -> Outcome {
    let mut env: Env = f.params.iter().zip(args).map(|(p, a)| (p.id, *a)).collect();
    let mut steps = 0u32;
    let mut b = ENTRY;
    let run = |env: &mut Env, b: &mut usize, steps: &mut u32| -> Result<Option<i32>, Fault> {
        loop {
            *steps += 1;
            if *steps > fuel.saturating_mul(64) + 1000 {
                return Err(Fault(Outcome::OutOfFuel));
            }
            let block = &cfg.blocks[*b];
            for el in &block.elems {
                match el {
                    Elem::Decl(v) => {
                        let init = match &v.init {
                            Some(e) => eval(e, env)?,
                            None => 0,
                        };
                        env.insert(v.id, init);
                    }
                    Elem::Expr(e) => {
                        eval(e, env)?;
                    }
                }
            }
            match &block.term {
                Terminator::Goto(t) => *b = *t,
                Terminator::Branch { cond, t, f } => *b = if eval(cond, env)? != 0 { *t } else { *f },
                Terminator::Return { value, .. } => {
                    return Ok(match value {
                        Some(e) => Some(eval(e, env)?),
                        None => None,
                    })
                }
                Terminator::NoReturn | Terminator::None => return Ok(None),
            }
        }
    };
    match run(&mut env, &mut b, &mut steps) {
        Ok(r) => Outcome::Returned(r),
        Err(Fault(o)) => o,
    }
}

/// Lines of divisions whose divisor variable is assigned the literal 0 anywhere in the
/// function, ignoring control flow entirely.
pub fn flow_insensitive_divzero(f: &FunctionDecl) -> BTreeSet<u32> {
    let body = f.body.as_ref().unwrap();
    let mut zeroed = BTreeSet::new();
    let mut b = body.clone();
    b.walk_decls_mut(&mut |v| {
        if matches!(v.init.as_ref().map(|e| &e.kind), Some(ExprKind::IntLit(0))) {
            zeroed.insert(v.id);
        }
    });
    body.walk_exprs(&mut |e| {
        if let ExprKind::Binary {
            op: BinaryOp::Assign,
            lhs,
            rhs,
        } = &e.kind
        {
            if let (ExprKind::DeclRef { var, .. }, ExprKind::IntLit(0)) = (&lhs.kind, &rhs.kind) {
                zeroed.insert(*var);
            }
        }
    });
    let mut out = BTreeSet::new();
    body.walk_exprs(&mut |e| {
        if let ExprKind::Binary {
            op: BinaryOp::Div | BinaryOp::Rem,
            rhs,
            ..
        } = &e.kind
        {
            if matches!(&rhs.kind, ExprKind::DeclRef { var, .. } if zeroed.contains(var)) {
                out.insert(e.loc.line);
            }
        }
    });
    out
}

/// Random integer programs over one parameter `x` and locals `a`, `b`.
/// Every statement sits on its own line so outcomes can be compared by line.
#[derive(Clone, Debug)]
pub enum GStmt {
    Assign(&'static str, String),
    Div(&'static str, String),
    If(String, Vec<GStmt>, Vec<GStmt>),
    While(&'static str, i32, Vec<GStmt>),
}

const VARS: [&str; 3] = ["x", "a", "b"];
const CMPS: [&str; 6] = ["<", "<=", ">", ">=", "==", "!="];

fn var() -> impl Strategy<Value = &'static str> {
    prop::sample::select(&VARS[..])
}

fn small() -> impl Strategy<Value = i32> {
    -6i32..=6
}

/// Linear expressions with at most one variable.
pub fn gexpr() -> impl Strategy<Value = String> {
    prop_oneof![
        small().prop_map(|k| k.to_string()),
        (var(), small()).prop_map(|(v, k)| format!("{v} + {k}")),
        (var(), small()).prop_map(|(v, k)| format!("{v} - {k}")),
        var().prop_map(|v| v.to_string()),
    ]
}

pub fn gcond() -> impl Strategy<Value = String> {
    (var(), prop::sample::select(&CMPS[..]), small()).prop_map(|(v, c, k)| format!("{v} {c} {k}"))
}

pub fn gstmt(allow_loops: bool) -> impl Strategy<Value = GStmt> {
    let leaf = prop_oneof![
        (prop::sample::select(&VARS[1..]), gexpr()).prop_map(|(v, e)| GStmt::Assign(v, e)),
        (prop::sample::select(&VARS[1..]), gexpr()).prop_map(|(v, e)| GStmt::Assign(v, e)),
        (small(), gexpr()).prop_map(|(k, e)| GStmt::Div(if k % 2 == 0 { "r" } else { "s" }, e)),
    ];
    leaf.prop_recursive(2, 12, 3, move |inner| {
        let branch = (gcond(), prop::collection::vec(inner.clone(), 1..3), prop::collection::vec(inner.clone(), 0..3))
            .prop_map(|(c, t, e)| GStmt::If(c, t, e));
        if allow_loops {
            prop_oneof![
                3 => branch,
                1 => (prop::sample::select(&VARS[1..]), 1i32..5, prop::collection::vec(inner, 0..2))
                    .prop_map(|(v, n, body)| GStmt::While(v, n, body)),
            ]
            .boxed()
        } else {
            branch.boxed()
        }
    })
}

fn render(stmts: &[GStmt], indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    for s in stmts {
        match s {
            GStmt::Assign(v, e) => out.push_str(&format!("{pad}{v} = {e};\n")),
            GStmt::Div(v, e) => out.push_str(&format!("{pad}{v} = 12 / ({e});\n")),
            GStmt::If(c, t, e) => {
                out.push_str(&format!("{pad}if ({c}) {{\n"));
                render(t, indent + 1, out);
                if e.is_empty() {
                    out.push_str(&format!("{pad}}}\n"));
                } else {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    render(e, indent + 1, out);
                    out.push_str(&format!("{pad}}}\n"));
                }
            }
            GStmt::While(v, n, body) => {
                out.push_str(&format!("{pad}{v} = 0;\n{pad}while ({v} < {n}) {{\n"));
                render(body, indent + 1, out);
                out.push_str(&format!("{pad}  {v} = {v} + 1;\n{pad}}}\n"));
            }
        }
    }
}

pub fn gprogram(allow_loops: bool) -> impl Strategy<Value = String> {
    prop::collection::vec(gstmt(allow_loops), 1..6).prop_map(|stmts| {
        let mut s = String::from("int f(int x) {\n  int a = 0;\n  int b = 1;\n  int r = 0;\n  int s = 0;\n");
        render(&stmts, 1, &mut s);
        s.push_str("  return a + b;\n}\n");
        s
    })
}
