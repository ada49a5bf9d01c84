//! Parameter checkpoints.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic   b"LR2P"
//! version u32 = 1
//! nblocks u32
//! per block: name_len u32, name utf-8, rows u32, cols u32
//! count   u64
//! data    count × f64
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use super::mlp::{Layout, ParameterVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LR2P";
const VERSION: u32 = 1;

pub fn encode(params: &ParameterVector) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(16 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.blocks().len() as u32).to_le_bytes());
    for b in layout.blocks() {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.rows as u32).to_le_bytes());
        out.extend_from_slice(&(b.cols as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterVector> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let nblocks = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("block name: {e}")))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        shapes.push((name, rows, cols));
    }
    let count = r.u64()? as usize;
    let data: Vec<f64> = (0..count)
        .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
        .collect::<Result<_>>()?;
    let refs: Vec<(&str, usize, usize)> = shapes.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
    ParameterVector::from_data(Arc::new(Layout::new(&refs)), data)
}

/// Human-readable dump, one block per paragraph.
pub fn dump_text(params: &ParameterVector) -> String {
    let mut s = String::new();
    for b in params.layout().blocks() {
        let _ = writeln!(s, "# {} {}x{}", b.name, b.rows, b.cols);
        let data = &params.as_slice()[b.offset..b.offset + b.len()];
        for row in data.chunks(b.cols) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    }
    s
}
