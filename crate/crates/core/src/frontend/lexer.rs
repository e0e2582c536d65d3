use super::ast::Loc;
use super::FrontendError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Kw(&'static str),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub loc: Loc,
}

const KEYWORDS: &[&str] = &["int", "void", "struct", "if", "else", "while", "return"];

// longest first so that maximal munch works with a simple prefix scan
const PUNCTS: &[&str] = &[
    "->", "++", "--", "<=", ">=", "==", "!=", "&&", "||", "(", ")", "{", "}", "[", "]", ";", ",",
    ".", "+", "-", "*", "/", "%", "<", ">", "=", "!", "&",
];

pub fn lex(src: &str, file: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, message: String| FrontendError::Syntax {
        file: file.to_string(),
        loc: Loc::new(line, col),
        message,
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if bytes[i..].starts_with(b"//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if bytes[i..].starts_with(b"/*") {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i >= bytes.len() {
                    return Err(err(sl, sc, "unterminated comment".into()));
                }
                if bytes[i..].starts_with(b"*/") {
                    i += 2;
                    col += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let loc = Loc::new(line, col);
        if c.is_ascii_digit() {
            let start = i;
            let value = if bytes[i..].starts_with(b"0x") || bytes[i..].starts_with(b"0X") {
                i += 2;
                let s = i;
                while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
                    i += 1;
                }
                i64::from_str_radix(&src[s..i], 16).ok()
            } else {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                src[start..i].parse::<i64>().ok()
            };
            if i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                return Err(err(line, col, "malformed integer literal".into()));
            }
            // anything too large for i64 is certainly out of the 32-bit range too
            let value = value.unwrap_or(i64::MAX);
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Int(value), loc });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            col += (i - start) as u32;
            let tok = match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word.to_string()),
            };
            out.push(Token { tok, loc });
            continue;
        }
        match PUNCTS.iter().find(|p| bytes[i..].starts_with(p.as_bytes())) {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push(Token {
                    tok: Tok::Punct(p),
                    loc,
                });
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(line, col, format!("unexpected character '{ch}'")));
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        loc: Loc::new(line, col),
    });
    Ok(out)
}
