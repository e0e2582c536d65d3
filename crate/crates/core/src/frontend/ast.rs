//! Typed MiniC syntax tree.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::usr::Usr;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Type {
    Int,
    Void,
    Pointer(Box<Type>),
    Record(String),
    Array(Box<Type>, u32),
}

impl Type {
    pub fn pointer_to(t: Type) -> Type {
        Type::Pointer(Box::new(t))
    }

    pub fn is_pointer(&self) -> bool {
        matches!(self, Type::Pointer(_))
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Type::Int | Type::Pointer(_))
    }

    pub fn pointee(&self) -> Option<&Type> {
        match self {
            Type::Pointer(t) => Some(t),
            _ => None,
        }
    }

    /// Type after array-to-pointer decay.
    pub fn decayed(&self) -> Type {
        match self {
            Type::Array(elem, _) => Type::pointer_to((**elem).clone()),
            t => t.clone(),
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => write!(f, "int"),
            Type::Void => write!(f, "void"),
            Type::Pointer(t) => write!(f, "{t} *"),
            Type::Record(n) => write!(f, "struct {n}"),
            Type::Array(t, n) => write!(f, "{t}[{n}]"),
        }
    }
}

/// 1-based line and column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Loc {
    pub line: u32,
    pub col: u32,
}

impl Loc {
    pub fn new(line: u32, col: u32) -> Self {
        Loc { line, col }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExprId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ast {
    pub file: String,
    pub decls: Vec<Decl>,
    /// One past the largest expression id in use.
    pub expr_count: u32,
    /// One past the largest variable id in use.
    pub var_count: u32,
}

impl Ast {
    pub fn functions(&self) -> impl Iterator<Item = &FunctionDecl> {
        self.decls.iter().filter_map(|d| match d {
            Decl::Function(f) => Some(f),
            _ => None,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &RecordDecl> {
        self.decls.iter().filter_map(|d| match d {
            Decl::Record(r) => Some(r),
            _ => None,
        })
    }

    pub fn globals(&self) -> impl Iterator<Item = &VarDecl> {
        self.decls.iter().filter_map(|d| match d {
            Decl::Var(v) => Some(v),
            _ => None,
        })
    }

    /// Functions with a body, in declaration order.
    pub fn definitions(&self) -> impl Iterator<Item = &FunctionDecl> {
        self.functions().filter(|f| f.body.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decl {
    Function(FunctionDecl),
    Var(VarDecl),
    Record(RecordDecl),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub name: String,
    pub usr: Usr,
    pub ret: Type,
    pub params: Vec<VarDecl>,
    pub body: Option<Stmt>,
    pub loc: Loc,
    /// Source file the declaration was parsed from.
    pub file: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Storage {
    Global,
    Local,
    Param,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub id: VarId,
    pub name: String,
    pub ty: Type,
    pub init: Option<Expr>,
    pub storage: Storage,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldDecl {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDecl {
    pub name: String,
    pub usr: Usr,
    pub fields: Vec<FieldDecl>,
    pub loc: Loc,
}

impl RecordDecl {
    /// Field names and types in order; two records with the same USR must agree on it.
    pub fn fingerprint(&self) -> String {
        self.fields
            .iter()
            .map(|f| format!("{}:{}", f.name, f.ty))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtKind {
    Compound(Vec<Stmt>),
    If {
        cond: Expr,
        then: Box<Stmt>,
        els: Option<Box<Stmt>>,
    },
    While {
        cond: Expr,
        body: Box<Stmt>,
    },
    Return(Option<Expr>),
    Decl(VarDecl),
    Expr(Expr),
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Not,
    Deref,
    AddrOf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    LAnd,
    LOr,
    Assign,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinaryOp::LAnd | BinaryOp::LOr)
    }

    pub fn spelling(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::LAnd => "&&",
            BinaryOp::LOr => "||",
            BinaryOp::Assign => "=",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Assign => 1,
            BinaryOp::LOr => 2,
            BinaryOp::LAnd => 3,
            BinaryOp::Eq | BinaryOp::Ne => 4,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 5,
            BinaryOp::Add | BinaryOp::Sub => 6,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expr {
    pub id: ExprId,
    pub ty: Type,
    pub loc: Loc,
    pub kind: ExprKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExprKind {
    IntLit(i32),
    DeclRef {
        var: VarId,
        name: String,
    },
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        callee: String,
        usr: Usr,
        args: Vec<Expr>,
    },
    Member {
        base: Box<Expr>,
        field: String,
        arrow: bool,
    },
    Index {
        base: Box<Expr>,
        index: Box<Expr>,
    },
}

impl Expr {
    /// Pre-order walk over this expression and its children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::IntLit(_) | ExprKind::DeclRef { .. } => {}
            ExprKind::Unary { operand, .. } => operand.walk(f),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            ExprKind::Member { base, .. } => base.walk(f),
            ExprKind::Index { base, index } => {
                base.walk(f);
                index.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match &mut self.kind {
            ExprKind::IntLit(_) | ExprKind::DeclRef { .. } => {}
            ExprKind::Unary { operand, .. } => operand.walk_mut(f),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.walk_mut(f);
                rhs.walk_mut(f);
            }
            ExprKind::Call { args, .. } => args.iter_mut().for_each(|a| a.walk_mut(f)),
            ExprKind::Member { base, .. } => base.walk_mut(f),
            ExprKind::Index { base, index } => {
                base.walk_mut(f);
                index.walk_mut(f);
            }
        }
    }

    pub fn is_null_constant(&self) -> bool {
        matches!(self.kind, ExprKind::IntLit(0)) && self.ty.is_pointer()
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary { op, .. } => op.precedence(),
            ExprKind::Unary { .. } => 8,
            _ => 9,
        }
    }

    fn fmt_child(&self, child: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() < min {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::IntLit(v) => write!(f, "{v}"),
            ExprKind::DeclRef { name, .. } => write!(f, "{name}"),
            ExprKind::Unary { op, operand } => {
                let s = match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Not => "!",
                    UnaryOp::Deref => "*",
                    UnaryOp::AddrOf => "&",
                };
                write!(f, "{s}")?;
                self.fmt_child(operand, 8, f)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                // assignment is right-associative, the rest left-associative
                let (lp, rp) = if *op == BinaryOp::Assign { (p + 1, p) } else { (p, p + 1) };
                self.fmt_child(lhs, lp, f)?;
                write!(f, " {} ", op.spelling())?;
                self.fmt_child(rhs, rp, f)
            }
            ExprKind::Call { callee, args, .. } => {
                write!(f, "{callee}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            ExprKind::Member { base, field, arrow } => {
                self.fmt_child(base, 9, f)?;
                write!(f, "{}{field}", if *arrow { "->" } else { "." })
            }
            ExprKind::Index { base, index } => {
                self.fmt_child(base, 9, f)?;
                write!(f, "[{index}]")
            }
        }
    }
}

impl Stmt {
    /// Visits every expression reachable from this statement, including nested statements.
    pub fn walk_exprs<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        match &self.kind {
            StmtKind::Compound(stmts) => stmts.iter().for_each(|s| s.walk_exprs(f)),
            StmtKind::If { cond, then, els } => {
                cond.walk(f);
                then.walk_exprs(f);
                if let Some(e) = els {
                    e.walk_exprs(f);
                }
            }
            StmtKind::While { cond, body } => {
                cond.walk(f);
                body.walk_exprs(f);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    e.walk(f);
                }
            }
            StmtKind::Decl(v) => {
                if let Some(e) = &v.init {
                    e.walk(f);
                }
            }
            StmtKind::Expr(e) => e.walk(f),
            StmtKind::Empty => {}
        }
    }

    pub fn walk_exprs_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        match &mut self.kind {
            StmtKind::Compound(stmts) => stmts.iter_mut().for_each(|s| s.walk_exprs_mut(f)),
            StmtKind::If { cond, then, els } => {
                cond.walk_mut(f);
                then.walk_exprs_mut(f);
                if let Some(e) = els {
                    e.walk_exprs_mut(f);
                }
            }
            StmtKind::While { cond, body } => {
                cond.walk_mut(f);
                body.walk_exprs_mut(f);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    e.walk_mut(f);
                }
            }
            StmtKind::Decl(v) => {
                if let Some(e) = &mut v.init {
                    e.walk_mut(f);
                }
            }
            StmtKind::Expr(e) => e.walk_mut(f),
            StmtKind::Empty => {}
        }
    }

    /// Visits every local variable declaration in this statement.
    pub fn walk_decls_mut(&mut self, f: &mut impl FnMut(&mut VarDecl)) {
        match &mut self.kind {
            StmtKind::Compound(stmts) => stmts.iter_mut().for_each(|s| s.walk_decls_mut(f)),
            StmtKind::If { then, els, .. } => {
                then.walk_decls_mut(f);
                if let Some(e) = els {
                    e.walk_decls_mut(f);
                }
            }
            StmtKind::While { body, .. } => body.walk_decls_mut(f),
            StmtKind::Decl(v) => f(v),
            StmtKind::Return(_) | StmtKind::Expr(_) | StmtKind::Empty => {}
        }
    }
}
