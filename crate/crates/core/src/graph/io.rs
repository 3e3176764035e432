//! Edge-list file formats.
//!
//! Text: one `u v` pair per line, whitespace separated; lines starting with
//! `#` are comments. The vertex count is one past the largest id.
//!
//! Binary: magic `TGR1`, then `n` and `m` as little-endian u64, then `m`
//! canonical `(u, v)` pairs as little-endian u64 words.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{canonicalize, EdgeList};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"TGR1";

pub fn read_text<R: Read>(reader: R) -> Result<EdgeList> {
    let mut edges = Vec::new();
    let mut n = 0u64;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = || -> Result<u64> {
            fields
                .next()
                .ok_or_else(|| Error::MalformedInput(format!("line {}: expected `u v`", lineno + 1)))?
                .parse()
                .map_err(|e| Error::MalformedInput(format!("line {}: {e}", lineno + 1)))
        };
        let (u, v) = (next()?, next()?);
        if fields.next().is_some() {
            return Err(Error::MalformedInput(format!(
                "line {}: more than two fields",
                lineno + 1
            )));
        }
        n = n.max(u + 1).max(v + 1);
        edges.push((u, v));
    }
    canonicalize(&EdgeList::new(n, edges))
}

pub fn write_text<W: Write>(g: &EdgeList, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "# n={} m={}", g.n, g.edges.len())?;
    for &(u, v) in &g.edges {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<EdgeList> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_binary(&bytes)
}

fn decode_binary(bytes: &[u8]) -> Result<EdgeList> {
    if bytes.len() < 20 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::MalformedInput("missing TGR1 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let n = word(4);
    let m = word(12);
    let body = &bytes[20..];
    if (body.len() as u64) != m.saturating_mul(16) {
        return Err(Error::MalformedInput(format!(
            "binary graph declares {m} edges but carries {} bytes",
            body.len()
        )));
    }
    let edges = body
        .chunks_exact(16)
        .map(|c| {
            (
                u64::from_le_bytes(c[..8].try_into().unwrap()),
                u64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    canonicalize(&EdgeList::new(n, edges))
}

pub fn write_binary<W: Write>(g: &EdgeList, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&g.n.to_le_bytes())?;
    w.write_all(&(g.edges.len() as u64).to_le_bytes())?;
    for &(u, v) in &g.edges {
        w.write_all(&u.to_le_bytes())?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads either format, telling them apart by the magic bytes.
pub fn read_path(path: &Path) -> Result<EdgeList> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes)
    } else {
        read_text(bytes.as_slice())
    }
}

/// Writes binary for `.tgr`/`.bin` paths and text otherwise.
pub fn write_path(g: &EdgeList, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("tgr") | Some("bin") => write_binary(g, file),
        _ => write_text(g, file),
    }
}
