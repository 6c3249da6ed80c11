//! On-disk matrix persistence.
//!
//! Binary format ("OIMX"): 4-byte magic, u32 LE version (1), u8 dtype
//! (1 = IEEE-754 binary64), u8 order (0 = row-major), u64 LE rows, u64 LE
//! cols, then rows*cols little-endian values. Every artifact the pipeline
//! persists — snapshots, bases, operators, trajectories — uses this format,
//! and write-then-read is bit-identical.
//!
//! A whitespace-separated text import (`rows cols` header line, then values)
//! exists for hand-written inputs; readers can sniff which format a file is.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OIMX";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;
pub const ORDER_ROW_MAJOR: u8 = 0;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a matrix in the binary format.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    emit(&MAGIC)?;
    emit(&VERSION.to_le_bytes())?;
    emit(&[DTYPE_F64, ORDER_ROW_MAJOR])?;
    emit(&(m.nrows() as u64).to_le_bytes())?;
    emit(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            emit(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a matrix in the binary format, rejecting unknown magic, version,
/// dtype, or layout bytes and truncated payloads.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 26];
    r.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    if header[0..4] != MAGIC {
        return Err(Error::BadMatrixFile(format!(
            "{}: bad magic {:?}",
            path.display(),
            &header[0..4]
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadMatrixFile(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    if header[8] != DTYPE_F64 {
        return Err(Error::BadMatrixFile(format!(
            "{}: unsupported dtype {}",
            path.display(),
            header[8]
        )));
    }
    if header[9] != ORDER_ROW_MAJOR {
        return Err(Error::BadMatrixFile(format!(
            "{}: unsupported element order {}",
            path.display(),
            header[9]
        )));
    }
    let rows = u64::from_le_bytes(header[10..18].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[18..26].try_into().unwrap()) as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| {
        Error::BadMatrixFile(format!("{}: dimension overflow", path.display()))
    })?;
    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload).map_err(|e| io_err(path, e))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(Error::BadMatrixFile(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let off = (i * cols + j) * 8;
            m[(i, j)] = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
        }
    }
    Ok(m)
}

/// Read the whitespace-separated text format: a `rows cols` header line
/// followed by rows*cols values in row-major order.
pub fn read_text_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_string(&mut text)
        .map_err(|e| io_err(path, e))?;
    let mut tokens = text.split_whitespace();
    let bad = |what: &str| Error::BadMatrixFile(format!("{}: {what}", path.display()));
    let rows: usize = tokens
        .next()
        .ok_or_else(|| bad("missing row count"))?
        .parse()
        .map_err(|_| bad("bad row count"))?;
    let cols: usize = tokens
        .next()
        .ok_or_else(|| bad("missing column count"))?
        .parse()
        .map_err(|_| bad("bad column count"))?;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let tok = tokens
                .next()
                .ok_or_else(|| bad(&format!("missing value at ({i}, {j})")))?;
            m[(i, j)] = tok
                .parse()
                .map_err(|_| bad(&format!("bad value '{tok}' at ({i}, {j})")))?;
        }
    }
    if tokens.next().is_some() {
        return Err(bad("trailing values after payload"));
    }
    Ok(m)
}

/// Read a matrix in either format, sniffing the binary magic first.
pub fn read_matrix_auto(path: &Path) -> Result<DMatrix<f64>> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic).map_err(|e| io_err(path, e))?;
    drop(file);
    if n == 4 && magic == MAGIC {
        read_matrix(path)
    } else {
        read_text_matrix(path)
    }
}
