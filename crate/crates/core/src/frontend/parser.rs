//! Recursive-descent parser that resolves names and assigns types as it goes.
//!
//! MiniC follows C's declare-before-use rule, so a single pass is enough.

use std::collections::HashMap;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::usr::{function_usr, record_usr, Usr};
use super::FrontendError;

#[derive(Clone)]
struct FnSig {
    usr: Usr,
    ret: Type,
    params: Vec<Type>,
    defined: bool,
    builtin: bool,
}

pub const BUILTINS: &[&str] = &["malloc", "free", "abort"];

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    file: &'a str,
    next_expr: u32,
    next_var: u32,
    records: HashMap<String, RecordDecl>,
    functions: HashMap<String, FnSig>,
    globals: HashMap<String, (VarId, Type)>,
    scopes: Vec<HashMap<String, (VarId, Type)>>,
    ret_ty: Type,
    decls: Vec<Decl>,
}

type PResult<T> = Result<T, FrontendError>;

pub fn parse(src: &str, file: &str) -> PResult<Ast> {
    let toks = lex(src, file)?;
    let mut functions = HashMap::new();
    let vp = Type::pointer_to(Type::Void);
    for (name, ret, params) in [
        ("malloc", vp.clone(), vec![Type::Int]),
        ("free", Type::Void, vec![vp]),
        ("abort", Type::Void, vec![]),
    ] {
        functions.insert(
            name.to_string(),
            FnSig {
                usr: function_usr(name, &params),
                ret,
                params,
                defined: false,
                builtin: true,
            },
        );
    }
    let mut p = Parser {
        toks,
        pos: 0,
        file,
        next_expr: 0,
        next_var: 0,
        records: HashMap::new(),
        functions,
        globals: HashMap::new(),
        scopes: Vec::new(),
        ret_ty: Type::Void,
        decls: Vec::new(),
    };
    while p.peek() != &Tok::Eof {
        p.top_level()?;
    }
    Ok(Ast {
        file: file.to_string(),
        decls: p.decls,
        expr_count: p.next_expr,
        var_count: p.next_var,
    })
}

impl<'a> Parser<'a> {
    // ----- token helpers -------------------------------------------------

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn loc(&self) -> Loc {
        self.toks[self.pos].loc
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Kw(q) if *q == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<Loc> {
        if self.is_punct(p) {
            Ok(self.bump().loc)
        } else {
            Err(self.syntax(format!("expected '{p}', found {}", describe(self.peek()))))
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Loc)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let loc = self.bump().loc;
                Ok((s, loc))
            }
            t => Err(self.syntax(format!("expected identifier, found {}", describe(&t)))),
        }
    }

    fn syntax(&self, message: String) -> FrontendError {
        FrontendError::Syntax {
            file: self.file.to_string(),
            loc: self.loc(),
            message,
        }
    }

    fn type_err(&self, loc: Loc, message: impl Into<String>) -> FrontendError {
        FrontendError::Type {
            file: self.file.to_string(),
            loc,
            message: message.into(),
        }
    }

    fn fresh_expr(&mut self) -> ExprId {
        let id = ExprId(self.next_expr);
        self.next_expr += 1;
        id
    }

    fn fresh_var(&mut self) -> VarId {
        let id = VarId(self.next_var);
        self.next_var += 1;
        id
    }

    fn mk(&mut self, kind: ExprKind, ty: Type, loc: Loc) -> Expr {
        Expr {
            id: self.fresh_expr(),
            ty,
            loc,
            kind,
        }
    }

    /// Deep copy with fresh expression ids, used when desugaring `++x`.
    fn dup(&mut self, e: &Expr) -> Expr {
        let mut c = e.clone();
        c.walk_mut(&mut |n| {
            n.id = ExprId(self.next_expr);
            self.next_expr += 1;
        });
        c
    }

    // ----- types ---------------------------------------------------------

    fn is_type_start(&self) -> bool {
        match self.peek() {
            Tok::Kw("int") | Tok::Kw("void") | Tok::Kw("struct") => true,
            Tok::Ident(name) => {
                self.records.contains_key(name)
                    && self.lookup_var(name).is_none()
                    && matches!(self.peek_at(1), Tok::Ident(_) | Tok::Punct("*"))
            }
            _ => false,
        }
    }

    fn base_type(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Kw("int") => {
                self.bump();
                Ok(Type::Int)
            }
            Tok::Kw("void") => {
                self.bump();
                Ok(Type::Void)
            }
            Tok::Kw("struct") => {
                self.bump();
                let (name, _) = self.expect_ident()?;
                Ok(Type::Record(name))
            }
            Tok::Ident(name) if self.records.contains_key(&name) => {
                self.bump();
                Ok(Type::Record(name))
            }
            t => Err(self.syntax(format!("expected a type, found {}", describe(&t)))),
        }
    }

    /// Parses `*`s, an optional name and array suffixes.
    fn declarator(&mut self, base: &Type, name_required: bool) -> PResult<(Option<String>, Type, Loc)> {
        let mut ty = base.clone();
        while self.eat_punct("*") {
            ty = Type::pointer_to(ty);
        }
        let loc = self.loc();
        let name = match self.peek() {
            Tok::Ident(_) => Some(self.expect_ident()?.0),
            _ if name_required => return Err(self.syntax(format!("expected identifier, found {}", describe(self.peek())))),
            _ => None,
        };
        let mut dims = Vec::new();
        while self.eat_punct("[") {
            let dloc = self.loc();
            let n = match self.bump().tok {
                Tok::Int(n) => n,
                t => return Err(self.syntax(format!("expected array length, found {}", describe(&t)))),
            };
            if n <= 0 || n > u32::MAX as i64 {
                return Err(self.type_err(dloc, "array length must be positive"));
            }
            dims.push(n as u32);
            self.expect_punct("]")?;
        }
        for n in dims.into_iter().rev() {
            ty = Type::Array(Box::new(ty), n);
        }
        Ok((name, ty, loc))
    }

    fn check_object_type(&self, ty: &Type, loc: Loc) -> PResult<()> {
        match ty {
            Type::Void => Err(self.type_err(loc, "variable has incomplete type 'void'")),
            Type::Record(n) if !self.records.contains_key(n) => {
                Err(self.type_err(loc, format!("variable has incomplete type 'struct {n}'")))
            }
            Type::Array(inner, _) => self.check_object_type(inner, loc),
            _ => Ok(()),
        }
    }

    // ----- declarations --------------------------------------------------

    fn top_level(&mut self) -> PResult<()> {
        if self.is_kw("struct")
            && matches!(self.peek_at(1), Tok::Ident(_))
            && matches!(self.peek_at(2), Tok::Punct("{"))
        {
            return self.record_decl();
        }
        if self.is_kw("struct") && matches!(self.peek_at(1), Tok::Ident(_)) && matches!(self.peek_at(2), Tok::Punct(";")) {
            // forward declaration
            self.bump();
            self.bump();
            self.bump();
            return Ok(());
        }
        let base = self.base_type()?;
        loop {
            let (name, ty, loc) = self.declarator(&base, true)?;
            let name = name.expect("name required");
            if self.is_punct("(") {
                return self.function(name, ty, loc);
            }
            self.global_var(name, ty, loc)?;
            if self.eat_punct(",") {
                continue;
            }
            self.expect_punct(";")?;
            return Ok(());
        }
    }

    fn record_decl(&mut self) -> PResult<()> {
        let loc = self.bump().loc;
        let (name, _) = self.expect_ident()?;
        if self.records.contains_key(&name) {
            return Err(self.type_err(loc, format!("redefinition of 'struct {name}'")));
        }
        self.expect_punct("{")?;
        let mut fields: Vec<FieldDecl> = Vec::new();
        while !self.is_punct("}") {
            let base = self.base_type()?;
            loop {
                let (fname, fty, floc) = self.declarator(&base, true)?;
                let fname = fname.expect("name required");
                if let Type::Record(r) = &fty {
                    if r == &name {
                        return Err(self.type_err(floc, "record cannot contain itself"));
                    }
                }
                self.check_object_type(&fty, floc)?;
                if fields.iter().any(|f| f.name == fname) {
                    return Err(self.type_err(floc, format!("duplicate field '{fname}'")));
                }
                fields.push(FieldDecl { name: fname, ty: fty });
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(";")?;
        }
        self.expect_punct("}")?;
        self.expect_punct(";")?;
        let rec = RecordDecl {
            usr: record_usr(&name),
            name: name.clone(),
            fields,
            loc,
        };
        self.records.insert(name, rec.clone());
        self.decls.push(Decl::Record(rec));
        Ok(())
    }

    fn global_var(&mut self, name: String, ty: Type, loc: Loc) -> PResult<()> {
        self.check_object_type(&ty, loc)?;
        if self.globals.contains_key(&name) || self.functions.contains_key(&name) {
            return Err(self.type_err(loc, format!("redefinition of '{name}'")));
        }
        let init = if self.eat_punct("=") {
            let e = self.assignment()?;
            let e = self.coerce(&ty, e)?;
            let constant = match &e.kind {
                ExprKind::IntLit(_) => true,
                ExprKind::Unary { op: UnaryOp::Neg, operand } => matches!(operand.kind, ExprKind::IntLit(_)),
                _ => false,
            };
            if !constant {
                return Err(self.type_err(e.loc, "global initializer must be an integer constant"));
            }
            Some(e)
        } else {
            None
        };
        let id = self.fresh_var();
        self.globals.insert(name.clone(), (id, ty.clone()));
        self.decls.push(Decl::Var(VarDecl {
            id,
            name,
            ty,
            init,
            storage: Storage::Global,
            loc,
        }));
        Ok(())
    }

    fn function(&mut self, name: String, ret: Type, loc: Loc) -> PResult<()> {
        if matches!(ret, Type::Array(..) | Type::Record(_)) {
            return Err(self.type_err(loc, "functions may only return int, void or pointers"));
        }
        self.expect_punct("(")?;
        let mut params: Vec<(Option<String>, Type, Loc)> = Vec::new();
        if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        if !self.is_punct(")") {
            loop {
                let base = self.base_type()?;
                let (pname, pty, ploc) = self.declarator(&base, false)?;
                let pty = pty.decayed();
                self.check_object_type(&pty, ploc)?;
                if !pty.is_scalar() {
                    return Err(self.type_err(ploc, "parameters must have scalar type"));
                }
                params.push((pname, pty, ploc));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let ptys: Vec<Type> = params.iter().map(|p| p.1.clone()).collect();
        let usr = function_usr(&name, &ptys);
        let has_body = self.is_punct("{");
        match self.functions.get(&name) {
            Some(sig) => {
                if sig.ret != ret || sig.params != ptys {
                    return Err(self.type_err(loc, format!("conflicting types for '{name}'")));
                }
                if has_body && (sig.defined || sig.builtin) {
                    return Err(self.type_err(loc, format!("redefinition of '{name}'")));
                }
            }
            None => {
                if self.globals.contains_key(&name) {
                    return Err(self.type_err(loc, format!("redefinition of '{name}'")));
                }
            }
        }
        let builtin = BUILTINS.contains(&name.as_str());
        let entry = self.functions.entry(name.clone()).or_insert(FnSig {
            usr: usr.clone(),
            ret: ret.clone(),
            params: ptys.clone(),
            defined: false,
            builtin,
        });
        entry.defined |= has_body;

        let mut param_decls = Vec::new();
        self.scopes.push(HashMap::new());
        for (pname, pty, ploc) in params {
            let id = self.fresh_var();
            let pname = pname.unwrap_or_else(|| format!("<param{}>", id.0));
            if self.scopes[0].insert(pname.clone(), (id, pty.clone())).is_some() {
                self.scopes.pop();
                return Err(self.type_err(ploc, format!("duplicate parameter '{pname}'")));
            }
            param_decls.push(VarDecl {
                id,
                name: pname,
                ty: pty,
                init: None,
                storage: Storage::Param,
                loc: ploc,
            });
        }
        let body = if has_body {
            self.ret_ty = ret.clone();
            let b = self.compound(false);
            match b {
                Ok(b) => Some(b),
                Err(e) => {
                    self.scopes.clear();
                    return Err(e);
                }
            }
        } else {
            self.expect_punct(";")?;
            None
        };
        self.scopes.clear();
        self.decls.push(Decl::Function(FunctionDecl {
            name,
            usr,
            ret,
            params: param_decls,
            body,
            loc,
            file: self.file.to_string(),
        }));
        Ok(())
    }

    // ----- statements ----------------------------------------------------

    fn compound(&mut self, new_scope: bool) -> PResult<Stmt> {
        let loc = self.expect_punct("{")?;
        if new_scope {
            self.scopes.push(HashMap::new());
        }
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if self.peek() == &Tok::Eof {
                return Err(self.syntax("expected '}' before end of file".into()));
            }
            stmts.extend(self.block_item()?);
        }
        self.bump();
        if new_scope {
            self.scopes.pop();
        }
        Ok(Stmt {
            kind: StmtKind::Compound(stmts),
            loc,
        })
    }

    fn block_item(&mut self) -> PResult<Vec<Stmt>> {
        if self.is_type_start() {
            return self.local_decls();
        }
        Ok(vec![self.statement()?])
    }

    fn local_decls(&mut self) -> PResult<Vec<Stmt>> {
        let base = self.base_type()?;
        let mut out = Vec::new();
        loop {
            let (name, ty, loc) = self.declarator(&base, true)?;
            let name = name.expect("name required");
            self.check_object_type(&ty, loc)?;
            let init = if self.eat_punct("=") {
                if !ty.is_scalar() {
                    return Err(self.type_err(loc, "aggregate initializers are not supported"));
                }
                let e = self.assignment()?;
                check_logical(&e, false, self)?;
                Some(self.coerce(&ty, e)?)
            } else {
                None
            };
            let id = self.fresh_var();
            let scope = self.scopes.last_mut().expect("inside a function");
            if scope.insert(name.clone(), (id, ty.clone())).is_some() {
                return Err(self.type_err(loc, format!("redefinition of '{name}'")));
            }
            out.push(Stmt {
                kind: StmtKind::Decl(VarDecl {
                    id,
                    name,
                    ty,
                    init,
                    storage: Storage::Local,
                    loc,
                }),
                loc,
            });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(out)
    }

    fn sub_statement(&mut self) -> PResult<Stmt> {
        if self.is_type_start() {
            return Err(self.syntax("a declaration is not allowed here".into()));
        }
        // a single statement body gets its own scope like C
        self.scopes.push(HashMap::new());
        let s = self.statement();
        self.scopes.pop();
        s
    }

    fn condition(&mut self) -> PResult<Expr> {
        self.expect_punct("(")?;
        let cond = self.expression()?;
        self.expect_punct(")")?;
        if !cond.ty.decayed().is_scalar() {
            return Err(self.type_err(cond.loc, "condition must have scalar type"));
        }
        check_logical(&cond, true, self)?;
        Ok(cond)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let loc = self.loc();
        if self.is_punct("{") {
            return self.compound(true);
        }
        if self.eat_punct(";") {
            return Ok(Stmt {
                kind: StmtKind::Empty,
                loc,
            });
        }
        if self.is_kw("if") {
            self.bump();
            let cond = self.condition()?;
            let then = Box::new(self.sub_statement()?);
            let els = if self.is_kw("else") {
                self.bump();
                Some(Box::new(self.sub_statement()?))
            } else {
                None
            };
            return Ok(Stmt {
                kind: StmtKind::If { cond, then, els },
                loc,
            });
        }
        if self.is_kw("while") {
            self.bump();
            let cond = self.condition()?;
            let body = Box::new(self.sub_statement()?);
            return Ok(Stmt {
                kind: StmtKind::While { cond, body },
                loc,
            });
        }
        if self.is_kw("return") {
            self.bump();
            let value = if self.is_punct(";") {
                if self.ret_ty != Type::Void {
                    return Err(self.type_err(loc, "non-void function must return a value"));
                }
                None
            } else {
                let e = self.expression()?;
                check_logical(&e, false, self)?;
                if self.ret_ty == Type::Void {
                    return Err(self.type_err(e.loc, "void function cannot return a value"));
                }
                let ret = self.ret_ty.clone();
                Some(self.coerce(&ret, e)?)
            };
            self.expect_punct(";")?;
            return Ok(Stmt {
                kind: StmtKind::Return(value),
                loc,
            });
        }
        if self.is_kw("else") {
            return Err(self.syntax("'else' without a previous 'if'".into()));
        }
        let e = self.expression()?;
        check_logical(&e, false, self)?;
        self.expect_punct(";")?;
        Ok(Stmt {
            kind: StmtKind::Expr(e),
            loc,
        })
    }

    // ----- expressions ---------------------------------------------------

    fn expression(&mut self) -> PResult<Expr> {
        self.assignment()
    }

    fn assignment(&mut self) -> PResult<Expr> {
        let lhs = self.binary(2)?;
        if self.is_punct("=") {
            let loc = self.bump().loc;
            let rhs = self.assignment()?;
            return self.make_assign(lhs, rhs, loc);
        }
        Ok(lhs)
    }

    fn make_assign(&mut self, lhs: Expr, rhs: Expr, loc: Loc) -> PResult<Expr> {
        if !is_lvalue(&lhs) {
            return Err(self.type_err(lhs.loc, "expression is not assignable"));
        }
        if !lhs.ty.is_scalar() {
            return Err(self.type_err(lhs.loc, "aggregate assignment is not supported"));
        }
        let ty = lhs.ty.clone();
        let rhs = self.coerce(&ty, rhs)?;
        Ok(self.mk(
            ExprKind::Binary {
                op: BinaryOp::Assign,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            ty,
            loc,
        ))
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let (op, prec) = match self.peek() {
                Tok::Punct("||") => (BinaryOp::LOr, 2),
                Tok::Punct("&&") => (BinaryOp::LAnd, 3),
                Tok::Punct("==") => (BinaryOp::Eq, 4),
                Tok::Punct("!=") => (BinaryOp::Ne, 4),
                Tok::Punct("<") => (BinaryOp::Lt, 5),
                Tok::Punct("<=") => (BinaryOp::Le, 5),
                Tok::Punct(">") => (BinaryOp::Gt, 5),
                Tok::Punct(">=") => (BinaryOp::Ge, 5),
                Tok::Punct("+") => (BinaryOp::Add, 6),
                Tok::Punct("-") => (BinaryOp::Sub, 6),
                Tok::Punct("*") => (BinaryOp::Mul, 7),
                Tok::Punct("/") => (BinaryOp::Div, 7),
                Tok::Punct("%") => (BinaryOp::Rem, 7),
                _ => return Ok(lhs),
            };
            if prec < min_prec {
                return Ok(lhs);
            }
            let loc = self.bump().loc;
            let rhs = self.binary(prec + 1)?;
            lhs = self.make_binary(op, lhs, rhs, loc)?;
        }
    }

    fn make_binary(&mut self, op: BinaryOp, lhs: Expr, rhs: Expr, loc: Loc) -> PResult<Expr> {
        let lt = lhs.ty.decayed();
        let rt = rhs.ty.decayed();
        let (lhs, rhs, ty) = match op {
            BinaryOp::Add | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => {
                if lt != Type::Int || rt != Type::Int {
                    return Err(self.type_err(loc, format!(
                        "invalid operands to '{}' ('{lt}' and '{rt}'); pointer arithmetic is not supported",
                        op.spelling()
                    )));
                }
                (lhs, rhs, Type::Int)
            }
            BinaryOp::Sub => {
                if lt == Type::Int && rt == Type::Int {
                    (lhs, rhs, Type::Int)
                } else if lt.is_pointer() && lt == rt {
                    // pointer difference yields an int
                    (lhs, rhs, Type::Int)
                } else {
                    return Err(self.type_err(loc, format!("invalid operands to '-' ('{lt}' and '{rt}')")));
                }
            }
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne => {
                if lt == Type::Int && rt == Type::Int {
                    (lhs, rhs, Type::Int)
                } else if lt.is_pointer() && is_zero_literal(&rhs) {
                    let rhs = self.coerce(&lt, rhs)?;
                    (lhs, rhs, Type::Int)
                } else if rt.is_pointer() && is_zero_literal(&lhs) {
                    let lhs = self.coerce(&rt, lhs)?;
                    (lhs, rhs, Type::Int)
                } else if lt.is_pointer() && rt.is_pointer() && pointers_compatible(&lt, &rt) {
                    (lhs, rhs, Type::Int)
                } else {
                    return Err(self.type_err(loc, format!(
                        "invalid operands to '{}' ('{lt}' and '{rt}')",
                        op.spelling()
                    )));
                }
            }
            BinaryOp::LAnd | BinaryOp::LOr => {
                if !lt.is_scalar() || !rt.is_scalar() {
                    return Err(self.type_err(loc, "logical operands must have scalar type"));
                }
                (lhs, rhs, Type::Int)
            }
            BinaryOp::Assign => return self.make_assign(lhs, rhs, loc),
        };
        Ok(self.mk(
            ExprKind::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            ty,
            loc,
        ))
    }

    fn unary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        let op = match self.peek() {
            Tok::Punct("-") => Some(UnaryOp::Neg),
            Tok::Punct("!") => Some(UnaryOp::Not),
            Tok::Punct("*") => Some(UnaryOp::Deref),
            Tok::Punct("&") => Some(UnaryOp::AddrOf),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let operand = self.unary()?;
            return self.make_unary(op, operand, loc);
        }
        if self.is_punct("++") || self.is_punct("--") {
            let inc = self.bump().tok == Tok::Punct("++");
            let target = self.unary()?;
            return self.increment(target, inc, loc);
        }
        self.postfix()
    }

    /// `++x` is `x = x + 1`.
    fn increment(&mut self, target: Expr, inc: bool, loc: Loc) -> PResult<Expr> {
        if !is_lvalue(&target) || target.ty != Type::Int {
            return Err(self.type_err(target.loc, "increment operand must be an int lvalue"));
        }
        let read = self.dup(&target);
        let one = self.mk(ExprKind::IntLit(1), Type::Int, loc);
        let op = if inc { BinaryOp::Add } else { BinaryOp::Sub };
        let sum = self.make_binary(op, read, one, loc)?;
        self.make_assign(target, sum, loc)
    }

    fn make_unary(&mut self, op: UnaryOp, operand: Expr, loc: Loc) -> PResult<Expr> {
        let ot = operand.ty.decayed();
        let ty = match op {
            UnaryOp::Neg => {
                if ot != Type::Int {
                    return Err(self.type_err(loc, "unary '-' requires an int operand"));
                }
                Type::Int
            }
            UnaryOp::Not => {
                if !ot.is_scalar() {
                    return Err(self.type_err(loc, "'!' requires a scalar operand"));
                }
                Type::Int
            }
            UnaryOp::Deref => match ot {
                Type::Pointer(inner) if *inner != Type::Void => *inner,
                Type::Pointer(_) => return Err(self.type_err(loc, "cannot dereference 'void *'")),
                t => return Err(self.type_err(loc, format!("indirection requires pointer operand ('{t}' invalid)"))),
            },
            UnaryOp::AddrOf => {
                if !is_lvalue(&operand) {
                    return Err(self.type_err(loc, "cannot take the address of an rvalue"));
                }
                Type::pointer_to(operand.ty.clone())
            }
        };
        Ok(self.mk(
            ExprKind::Unary {
                op,
                operand: Box::new(operand),
            },
            ty,
            loc,
        ))
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            let loc = self.loc();
            if self.eat_punct("[") {
                let index = self.expression()?;
                self.expect_punct("]")?;
                let elem = match e.ty.decayed() {
                    Type::Pointer(inner) if *inner != Type::Void => *inner,
                    t => return Err(self.type_err(loc, format!("subscripted value is not an array or pointer ('{t}')"))),
                };
                if index.ty != Type::Int {
                    return Err(self.type_err(index.loc, "array subscript is not an int"));
                }
                e = self.mk(
                    ExprKind::Index {
                        base: Box::new(e),
                        index: Box::new(index),
                    },
                    elem,
                    loc,
                );
            } else if self.is_punct(".") || self.is_punct("->") {
                let arrow = self.bump().tok == Tok::Punct("->");
                let (field, _) = self.expect_ident()?;
                let rec_name = match (&e.ty, arrow) {
                    (Type::Record(n), false) => n.clone(),
                    (Type::Pointer(inner), true) => match &**inner {
                        Type::Record(n) => n.clone(),
                        t => return Err(self.type_err(loc, format!("member reference base type '{t}' is not a record"))),
                    },
                    (t, _) => return Err(self.type_err(loc, format!("member reference base type '{t}' is not a record"))),
                };
                let rec = self
                    .records
                    .get(&rec_name)
                    .ok_or_else(|| self.type_err(loc, format!("incomplete type 'struct {rec_name}'")))?;
                let fty = rec
                    .field(&field)
                    .ok_or_else(|| self.type_err(loc, format!("no member named '{field}' in 'struct {rec_name}'")))?
                    .ty
                    .clone();
                e = self.mk(
                    ExprKind::Member {
                        base: Box::new(e),
                        field,
                        arrow,
                    },
                    fty,
                    loc,
                );
            } else if self.is_punct("++") || self.is_punct("--") {
                // x++ is (x = x + 1) - 1
                let inc = self.bump().tok == Tok::Punct("++");
                let assign = self.increment(e, inc, loc)?;
                let one = self.mk(ExprKind::IntLit(1), Type::Int, loc);
                let op = if inc { BinaryOp::Sub } else { BinaryOp::Add };
                e = self.make_binary(op, assign, one, loc)?;
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                if v > i32::MAX as i64 {
                    return Err(self.type_err(loc, "integer literal is out of the 32-bit range"));
                }
                Ok(self.mk(ExprKind::IntLit(v as i32), Type::Int, loc))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expression()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.is_punct("(") {
                    return self.call(name, loc);
                }
                match self.lookup_var(&name) {
                    Some((var, ty)) => Ok(self.mk(ExprKind::DeclRef { var, name }, ty, loc)),
                    None => Err(self.type_err(loc, format!("use of undeclared identifier '{name}'"))),
                }
            }
            t => Err(self.syntax(format!("expected expression, found {}", describe(&t)))),
        }
    }

    fn call(&mut self, name: String, loc: Loc) -> PResult<Expr> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                let a = self.assignment()?;
                check_logical(&a, false, self)?;
                args.push(a);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let sig = self
            .functions
            .get(&name)
            .cloned()
            .ok_or_else(|| self.type_err(loc, format!("call to undeclared function '{name}'")))?;
        if sig.params.len() != args.len() {
            return Err(self.type_err(loc, format!(
                "'{name}' expects {} argument(s), {} given",
                sig.params.len(),
                args.len()
            )));
        }
        let args = args
            .into_iter()
            .zip(&sig.params)
            .map(|(a, p)| self.coerce(p, a))
            .collect::<PResult<Vec<_>>>()?;
        Ok(self.mk(
            ExprKind::Call {
                callee: name,
                usr: sig.usr,
                args,
            },
            sig.ret,
            loc,
        ))
    }

    fn lookup_var(&self, name: &str) -> Option<(VarId, Type)> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name))
            .or_else(|| self.globals.get(name))
            .cloned()
    }

    /// Checks that `e` can initialize a `target`, turning a literal `0` into a null pointer.
    fn coerce(&self, target: &Type, mut e: Expr) -> PResult<Expr> {
        let src = e.ty.decayed();
        let ok = match target {
            Type::Int => src == Type::Int,
            Type::Pointer(_) => {
                if is_zero_literal(&e) {
                    e.ty = target.clone();
                    true
                } else {
                    src.is_pointer() && pointers_compatible(target, &src)
                }
            }
            _ => false,
        };
        if ok {
            Ok(e)
        } else {
            Err(self.type_err(e.loc, format!("cannot convert '{src}' to '{target}'")))
        }
    }
}

fn pointers_compatible(a: &Type, b: &Type) -> bool {
    a == b || a.pointee() == Some(&Type::Void) || b.pointee() == Some(&Type::Void)
}

fn is_zero_literal(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::IntLit(0))
}

pub fn is_lvalue(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::DeclRef { .. } | ExprKind::Index { .. } => true,
        ExprKind::Unary { op: UnaryOp::Deref, .. } => true,
        ExprKind::Member { base, arrow, .. } => *arrow || is_lvalue(base),
        _ => false,
    }
}

/// `&&` and `||` may only appear as (parts of) branch conditions.
fn check_logical(e: &Expr, allowed: bool, p: &Parser<'_>) -> PResult<()> {
    match &e.kind {
        ExprKind::Binary { op, lhs, rhs } if op.is_logical() => {
            if !allowed {
                return Err(p.type_err(e.loc, format!(
                    "'{}' is only supported in if/while conditions",
                    op.spelling()
                )));
            }
            check_logical(lhs, true, p)?;
            check_logical(rhs, true, p)
        }
        ExprKind::Unary { op: UnaryOp::Not, operand } => check_logical(operand, allowed, p),
        ExprKind::Unary { operand, .. } => check_logical(operand, false, p),
        ExprKind::Binary { lhs, rhs, .. } => {
            check_logical(lhs, false, p)?;
            check_logical(rhs, false, p)
        }
        ExprKind::Call { args, .. } => args.iter().try_for_each(|a| check_logical(a, false, p)),
        ExprKind::Member { base, .. } => check_logical(base, false, p),
        ExprKind::Index { base, index } => {
            check_logical(base, false, p)?;
            check_logical(index, false, p)
        }
        ExprKind::IntLit(_) | ExprKind::DeclRef { .. } => Ok(()),
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier '{s}'"),
        Tok::Int(v) => format!("integer '{v}'"),
        Tok::Kw(k) => format!("'{k}'"),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of file".to_string(),
    }
}
