//! `EMB1` embedding files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "EMB1" | u32 version (1) | u64 n | u32 d
//! n x (u32 byte length | UTF-8 id)
//! zero padding up to the next multiple of 64 bytes
//! n x d f32 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ot::DiscreteDistribution;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const EMBEDDING_VERSION: u32 = 1;
const ALIGN: u64 = 64;
const HEADER_LEN: u64 = 20;

/// Row-major `n x d` embeddings with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "{} values do not fill {} rows of dimension {dim}",
                values.len(),
                ids.len()
            )));
        }
        if !ids.is_empty() && dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in row {}", pos / dim)));
        }
        Ok(Self { ids, dim, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Uniform distribution over all rows.
    pub fn to_distribution(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::new(self.values.clone(), self.dim, None, self.ids.clone())
    }

    pub fn into_distribution(self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::new(self.values, self.dim, None, self.ids)
    }
}

fn padding_after(offset: u64) -> u64 {
    (ALIGN - offset % ALIGN) % ALIGN
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(EMBEDDING_MAGIC).map_err(io)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(matrix.len() as u64).to_le_bytes()).map_err(io)?;
    let dim = u32::try_from(matrix.dim).map_err(|_| Error::invalid("dimension exceeds u32"))?;
    w.write_all(&dim.to_le_bytes()).map_err(io)?;
    let mut offset = HEADER_LEN;
    for id in &matrix.ids {
        let len = u32::try_from(id.len()).map_err(|_| Error::invalid("id longer than u32::MAX bytes"))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
        offset += 4 + id.len() as u64;
    }
    w.write_all(&vec![0u8; padding_after(offset) as usize]).map_err(io)?;
    let mut buf = Vec::with_capacity(matrix.dim * 4);
    for row in matrix.values.chunks(matrix.dim.max(1)) {
        buf.clear();
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingFile::open(path)?.read_all()
}

/// An opened embedding file: header and ids in memory, values read on demand.
pub struct EmbeddingFile {
    path: PathBuf,
    reader: BufReader<File>,
    ids: Vec<String>,
    dim: usize,
    values_offset: u64,
}

impl EmbeddingFile {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut reader = BufReader::new(file);
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut exact = |buf: &mut [u8], what: &str| {
            reader
                .read_exact(buf)
                .map_err(|_| format(format!("truncated file while reading {what}")))
        };

        let mut header = [0u8; HEADER_LEN as usize];
        exact(&mut header, "header")?;
        if &header[..4] != EMBEDDING_MAGIC {
            return Err(format(format!("bad magic {:?}, expected \"EMB1\"", &header[..4])));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != EMBEDDING_VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        if n > 0 && dim == 0 {
            return Err(format("zero dimension with non-empty matrix".into()));
        }
        // Each id takes at least 4 bytes, which bounds n before allocating.
        if n.saturating_mul(4) > file_len {
            return Err(format(format!("row count {n} exceeds file size")));
        }

        let mut offset = HEADER_LEN;
        let mut ids = Vec::with_capacity(n as usize);
        for row in 0..n {
            let mut len = [0u8; 4];
            exact(&mut len, "id length")?;
            let len = u32::from_le_bytes(len) as u64;
            if offset + 4 + len > file_len {
                return Err(format(format!("truncated file in id of row {row}")));
            }
            let mut bytes = vec![0u8; len as usize];
            exact(&mut bytes, "id")?;
            let id = String::from_utf8(bytes).map_err(|_| format(format!("id of row {row} is not UTF-8")))?;
            ids.push(id);
            offset += 4 + len;
        }
        let mut pad = vec![0u8; padding_after(offset) as usize];
        exact(&mut pad, "padding")?;
        if pad.iter().any(|&b| b != 0) {
            return Err(format("non-zero padding before values".into()));
        }
        let values_offset = offset + pad.len() as u64;
        let expected = values_offset + n * dim as u64 * 4;
        if file_len != expected {
            return Err(format(format!(
                "file is {file_len} bytes, expected {expected} for {n} x {dim} values"
            )));
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            ids,
            dim,
            values_offset,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn decode(&self, bytes: &[u8], first_row: usize, out: &mut Vec<f32>) -> Result<()> {
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    path: self.path.clone(),
                    message: format!("non-finite value in row {}", first_row + k / self.dim),
                });
            }
            out.push(v);
        }
        Ok(())
    }

    /// Whole matrix.
    pub fn read_all(mut self) -> Result<EmbeddingMatrix> {
        let total = self.len() * self.dim;
        let mut bytes = vec![0u8; total * 4];
        self.reader
            .seek(SeekFrom::Start(self.values_offset))
            .and_then(|_| self.reader.read_exact(&mut bytes))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut values = Vec::with_capacity(total);
        self.decode(&bytes, 0, &mut values)?;
        Ok(EmbeddingMatrix {
            ids: self.ids,
            dim: self.dim,
            values,
        })
    }

    /// The given rows, in the given order.
    pub fn read_rows(&mut self, rows: &[usize]) -> Result<EmbeddingMatrix> {
        let row_bytes = self.dim * 4;
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        let mut buf = vec![0u8; row_bytes];
        for &r in rows {
            if r >= self.len() {
                return Err(Error::invalid(format!("row {r} out of range for {} rows", self.len())));
            }
            let at = self.values_offset + (r * row_bytes) as u64;
            self.reader
                .seek(SeekFrom::Start(at))
                .and_then(|_| self.reader.read_exact(&mut buf))
                .map_err(|e| Error::io(&self.path, e))?;
            self.decode(&buf, r, &mut values)?;
            ids.push(self.ids[r].clone());
        }
        Ok(EmbeddingMatrix {
            ids,
            dim: self.dim,
            values,
        })
    }
}
