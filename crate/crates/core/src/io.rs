//! Matrix files shared by features, labels, context embeddings and exported
//! node embeddings.
//!
//! Two encodings are accepted on read:
//!
//! * dense text: one row per line, whitespace-separated reals, `#` comments;
//! * binary: the 8-byte magic `GFMMAT32`, then `rows` and `cols` as
//!   little-endian `u64`, then `rows * cols` little-endian `f32` values in
//!   row-major order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::tensor::Tensor2;
use crate::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"GFMMAT32";

pub fn read_matrix(path: &Path) -> Result<Tensor2> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        decode_binary(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: not UTF-8 text", path.display())))?;
        parse_text(&text, path)
    }
}

fn decode_binary(bytes: &[u8]) -> std::result::Result<Tensor2, String> {
    if bytes.len() < 24 {
        return Err("truncated header".into());
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or("dimension overflow")?;
    if body.len() != expected {
        return Err(format!(
            "{rows}x{cols} header needs {expected} payload bytes, found {}",
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor2::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

fn parse_text(text: &str, path: &Path) -> Result<Tensor2> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let start = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("not a number: {tok:?}"),
            })?;
            data.push(v);
        }
        let width = data.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("row has {width} values, expected {c}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Tensor2::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn encode_binary(m: &Tensor2) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + m.data().len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_matrix_binary(path: &Path, m: &Tensor2) -> Result<()> {
    fs::write(path, encode_binary(m)).map_err(|e| Error::io(path, e))
}

/// Dense text with values printed in shortest round-trip form.
pub fn write_matrix_text(path: &Path, m: &Tensor2) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
