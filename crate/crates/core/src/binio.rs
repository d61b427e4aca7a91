//! Little-endian primitives shared by the dump and checkpoint formats.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f32s(w: &mut impl Write, xs: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn write_names(w: &mut impl Write, names: &[String]) -> io::Result<()> {
    for n in names {
        let len = u16::try_from(n.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "name too long"))?;
        write_u16(w, len)?;
        w.write_all(n.as_bytes())?;
    }
    Ok(())
}

/// Reader that turns short reads into format errors naming the file.
pub(crate) struct Reader<R> {
    inner: R,
    path: std::path::PathBuf,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        Reader {
            inner,
            path: path.to_path_buf(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptHeader {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    pub fn truncated(&self, reason: impl Into<String>) -> Error {
        Error::Truncated {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    /// Fills `buf`; returns `Ok(false)` on a clean end of input before any byte.
    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) if got == 0 => return Ok(false),
                Ok(0) => return Err(self.truncated(format!("{what}: {got} of {} bytes", buf.len()))),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.path, e)),
            }
        }
        Ok(true)
    }

    pub fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        if self.fill(buf, what)? || buf.is_empty() {
            Ok(())
        } else {
            Err(self.truncated(format!("{what}: end of file")))
        }
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut b = vec![0u8; n * 4];
        self.exact(&mut b, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn names(&mut self, n: usize) -> Result<Vec<String>> {
        (0..n)
            .map(|i| {
                let len = self.u16("tool name length")? as usize;
                let mut b = vec![0u8; len];
                self.exact(&mut b, "tool name")?;
                String::from_utf8(b).map_err(|_| self.corrupt(format!("tool name {i} is not UTF-8")))
            })
            .collect()
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        if !self.fill(&mut m, "magic")? {
            return Err(self.corrupt("empty file"));
        }
        if &m != expected {
            return Err(self.corrupt(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        Ok(!self.fill(&mut b, "trailing data")?)
    }
}
