//! On-disk formats.
//!
//! Embeddings: 4 magic bytes `MLLE`, `u32` LE row count N, `u32` LE
//! dimension d, then N·d `f32` LE values row-major. Labels live in a
//! sibling text file (same stem, `.labels` extension), one integer per line.
//!
//! Pairs: first non-empty line is the fold count k, then one pair per line
//! as `idx_a idx_b {0|1}` (1 = genuine). Folds are contiguous blocks of the
//! pairs in file order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{Pair, PairProtocol};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"MLLE";
const HEADER_LEN: usize = 12;

pub fn labels_path(embeddings: &Path) -> PathBuf {
    embeddings.with_extension("labels")
}

pub fn encode_embeddings(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &str) -> Result<Matrix> {
    let fail = |message: String| Error::Format {
        path: path.to_string(),
        line: 0,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if bytes[..4] != EMBEDDING_MAGIC {
        return Err(fail("bad magic bytes".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| fail("header dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(fail(format!(
            "{n}x{d} embeddings need {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(n, d, data)
}

pub fn write_embeddings(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_embeddings(m)).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, &path.display().to_string())
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str, path: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Format {
                path: path.to_string(),
                line: i + 1,
                message: format!("expected a non-negative integer label: {e}"),
            })
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

/// Writes embeddings and their sibling label file.
pub fn write_labeled_embeddings(path: &Path, m: &Matrix, labels: &[usize]) -> Result<()> {
    write_embeddings(path, m)?;
    write_labels(&labels_path(path), labels)
}

pub fn read_labeled_embeddings(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let m = read_embeddings(path)?;
    let lp = labels_path(path);
    let labels = read_labels(&lp)?;
    if labels.len() != m.rows() {
        return Err(Error::Format {
            path: lp.display().to_string(),
            line: labels.len(),
            message: format!("{} labels for {} embeddings", labels.len(), m.rows()),
        });
    }
    Ok((m, labels))
}

pub fn parse_pairs(text: &str, path: &str) -> Result<PairProtocol> {
    let err = |line: usize, message: String| Error::Format {
        path: path.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing fold-count header".into()))?;
    let k: usize = header
        .parse()
        .map_err(|e| err(hline, format!("fold count must be a positive integer: {e}")))?;
    if k == 0 {
        return Err(err(hline, "fold count must be >= 1".into()));
    }
    let mut pairs = Vec::new();
    for (ln, l) in lines {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(ln, format!("expected `idx_a idx_b {{0|1}}`, got {} fields", fields.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|e| err(ln, format!("bad index {s:?}: {e}")));
        let genuine = match fields[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(ln, format!("genuine flag must be 0 or 1, got {other:?}"))),
        };
        pairs.push(Pair {
            a: idx(fields[0])?,
            b: idx(fields[1])?,
            genuine,
        });
    }
    if pairs.len() < k {
        return Err(err(hline, format!("{} pairs cannot fill {k} folds", pairs.len())));
    }
    PairProtocol::contiguous(pairs, k)
}

pub fn read_pairs(path: &Path) -> Result<PairProtocol> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, &path.display().to_string())
}

pub fn format_pairs(protocol: &PairProtocol) -> String {
    let mut s = format!("{}\n", protocol.num_folds);
    for p in &protocol.pairs {
        s.push_str(&format!("{} {} {}\n", p.a, p.b, u8::from(p.genuine)));
    }
    s
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
