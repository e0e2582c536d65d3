//! Binary AST files: a 4-byte `MCA1` header followed by a bincode payload.

use thiserror::Error;

use super::ast::Ast;

pub const MAGIC: &[u8; 4] = b"MCA1";

#[derive(Debug, Error)]
pub enum DeserializeError {
    #[error("missing or unsupported format header")]
    BadHeader,
    #[error("corrupt or truncated AST payload: {0}")]
    Payload(String),
}

pub fn serialize_ast(ast: &Ast) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    bincode::serialize_into(&mut out, ast).expect("serializing into memory cannot fail");
    out
}

pub fn deserialize_ast(bytes: &[u8]) -> Result<Ast, DeserializeError> {
    let payload = bytes.strip_prefix(MAGIC.as_slice()).ok_or(DeserializeError::BadHeader)?;
    let mut cursor = payload;
    let ast: Ast = bincode::deserialize_from(&mut cursor).map_err(|e| DeserializeError::Payload(e.to_string()))?;
    if !cursor.is_empty() {
        return Err(DeserializeError::Payload(format!("{} trailing bytes", cursor.len())));
    }
    Ok(ast)
}
