//! Binary model container.
//!
//! Every model file is `MAGIC`, a little-endian `u32` format version, the
//! section id as a length-prefixed string, then the section payload. Payload
//! primitives are all little-endian:
//!
//! * `u64` / `f64`: 8 bytes
//! * string: `u32` byte length, UTF-8 bytes
//! * string list: `u64` count, then strings
//! * matrix: `u64` rows, `u64` cols, `rows*cols` `f64` values row-major
//! * vector: `u64` len, then `f64` values
//!
//! The section payloads are documented in `docs/formats.md`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuralcore::Matrix;

pub const MAGIC: &[u8; 8] = b"DLGFORGE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct ModelWriter {
    buf: Vec<u8>,
}

impl ModelWriter {
    pub fn new(section: &str) -> Self {
        let mut w = ModelWriter { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.string(section);
        w
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn string(&mut self, s: &str) -> &mut Self {
        self.buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn strings<S: AsRef<str>>(&mut self, items: &[S]) -> &mut Self {
        self.u64(items.len() as u64);
        for s in items {
            self.string(s.as_ref());
        }
        self
    }

    pub fn vector(&mut self, v: &[f64]) -> &mut Self {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
        self
    }

    pub fn matrix(&mut self, m: &Matrix) -> &mut Self {
        self.u64(m.rows() as u64).u64(m.cols() as u64);
        for &x in m.as_slice() {
            self.f64(x);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct ModelReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ModelReader<'a> {
    /// Checks the header and that the file holds `section`.
    pub fn open(buf: &'a [u8], section: &str) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Model("bad magic".into()));
        }
        let mut r = ModelReader { buf, pos: MAGIC.len() };
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format version {version}")));
        }
        let found = r.string()?;
        if found != section {
            return Err(Error::Model(format!("expected section `{section}`, found `{found}`")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Model("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Model("length overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Model("invalid UTF-8 string".into()))
    }

    pub fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.usize()?;
        (0..n).map(|_| self.string()).collect()
    }

    pub fn vector(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > self.buf.len() / 8 {
            return Err(Error::Model("vector length exceeds file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= self.buf.len() / 8)
            .ok_or_else(|| Error::Model("matrix shape exceeds file".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Model(format!(
                "{} trailing bytes after section",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
