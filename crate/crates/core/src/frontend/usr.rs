//! Unified symbol resolution identifiers for functions and records.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{FunctionDecl, RecordDecl, Type};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Usr(pub String);

impl Usr {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Usr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn mangle(ty: &Type, out: &mut String) {
    match ty {
        Type::Int => out.push('i'),
        Type::Void => out.push('v'),
        Type::Pointer(inner) => {
            out.push('p');
            mangle(inner, out);
        }
        Type::Record(name) => {
            out.push('r');
            out.push_str(name);
            out.push('#');
        }
        Type::Array(inner, n) => {
            out.push('a');
            out.push_str(&n.to_string());
            mangle(inner, out);
        }
    }
}

pub fn function_usr<'a>(name: &str, params: impl IntoIterator<Item = &'a Type>) -> Usr {
    let mut s = format!("F:{name}#");
    for p in params {
        mangle(p, &mut s);
    }
    Usr(s)
}

pub fn record_usr(name: &str) -> Usr {
    Usr(format!("R:{name}"))
}

/// Declaration whose USR can be computed.
pub enum UsrDecl<'a> {
    Function(&'a FunctionDecl),
    Record(&'a RecordDecl),
}

pub fn compute_usr(decl: UsrDecl<'_>) -> Usr {
    match decl {
        UsrDecl::Function(f) => function_usr(&f.name, f.params.iter().map(|p| &p.ty)),
        UsrDecl::Record(r) => record_usr(&r.name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        assert_eq!(function_usr("f", [&Type::Int]).0, "F:f#i");
        assert_eq!(function_usr("g", []).0, "F:g#");
        assert_eq!(record_usr("X").0, "R:X");
        let p = Type::pointer_to(Type::Record("X".into()));
        let a = Type::Array(Box::new(Type::pointer_to(Type::Int)), 4);
        assert_eq!(function_usr("h", [&p, &a, &Type::Int]).0, "F:h#prX#a4pii");
    }

    #[test]
    fn distinct_signatures_give_distinct_usrs() {
        let sigs: Vec<(&str, Vec<Type>)> = vec![
            ("f", vec![]),
            ("f", vec![Type::Int]),
            ("f", vec![Type::Int, Type::Int]),
            ("f", vec![Type::pointer_to(Type::Int)]),
            ("f", vec![Type::pointer_to(Type::pointer_to(Type::Int))]),
            ("f", vec![Type::Record("A".into())]),
            ("f", vec![Type::Record("AB".into())]),
            ("f", vec![Type::Record("A".into()), Type::Int]),
            ("f", vec![Type::Array(Box::new(Type::Int), 1)]),
            ("f", vec![Type::Array(Box::new(Type::Int), 11)]),
            ("f", vec![Type::Array(Box::new(Type::Int), 1), Type::Int]),
            ("fi", vec![]),
            ("g", vec![Type::Int]),
        ];
        let mut seen = std::collections::HashSet::new();
        for (name, params) in &sigs {
            assert!(seen.insert(function_usr(name, params)), "collision for {name} {params:?}");
        }
    }
}
