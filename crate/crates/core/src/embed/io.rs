//! Plain-text vector format: a `V dim` header line followed by one
//! `token v1 ... v_dim` line per vocabulary word.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces them exactly. fastText matrices are saved as
//! their composed per-token vectors (word row averaged with subword rows);
//! the bucket table itself is not persisted in this format.

use super::{EmbeddingMatrix, EmbeddingMode};
use crate::error::{Error, Result};
use crate::textprep::Vocabulary;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn save_text(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let tokens: Vec<&str> = matrix.vocab().tokens().map(|(_, t)| t).collect();
    writeln!(out, "{} {}", tokens.len(), matrix.dim())?;
    let mut line = String::new();
    for token in tokens {
        line.clear();
        line.push_str(token);
        for v in matrix.vector(token) {
            write!(line, " {v}").expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_text(path: &Path) -> Result<EmbeddingMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad header '{header}', expected 'V dim'"),
        })?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|&d| d >= 1)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad header '{header}', expected 'V dim'"),
        })?;
    if parts.next().is_some() {
        return Err(Error::Parse {
            line: 1,
            message: "header has trailing fields".into(),
        });
    }

    let mut tokens = Vec::with_capacity(count);
    let mut values = vec![0.0; 2 * dim]; // reserved pad/oov rows stay zero
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(' ');
        let token = fields.next().filter(|t| !t.is_empty()).ok_or_else(|| {
            Error::Parse {
                line: lineno,
                message: "missing token".into(),
            }
        })?;
        let row: std::result::Result<Vec<f64>, _> =
            fields.map(|f| f.parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse {
            line: lineno,
            message: format!("bad value: {e}"),
        })?;
        if row.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} values, found {}", row.len()),
            });
        }
        if tokens.contains(&token.to_string()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate token '{token}'"),
            });
        }
        tokens.push(token.to_string());
        values.extend_from_slice(&row);
    }
    if tokens.len() != count {
        return Err(Error::Parse {
            line: tokens.len() + 1,
            message: format!("header promised {count} rows, file has {}", tokens.len()),
        });
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    Ok(EmbeddingMatrix::new(
        vocab,
        dim,
        EmbeddingMode::Word2Vec,
        values,
        None,
    ))
}
