//! Binary wire format for a [`GradientUpdate`].
//!
//! ```text
//! magic        4 bytes  "AGUP"
//! version      u16 LE   = 1
//! round_id     u64 LE
//! batch_size   u64 LE
//! adapters     u32 LE   (= 2: embedding adapter, layer adapter)
//! per adapter:
//!   tensors    u32 LE   (even, >= 4: weight/bias pairs down .. up)
//!   per tensor:
//!     rows     u32 LE
//!     cols     u32 LE
//!     len      u64 LE   (= rows · cols)
//!     data     len × f64 LE
//! ```

use super::GradientUpdate;
use crate::error::{Error, Result};
use crate::model::AdapterGradients;

pub const MAGIC: [u8; 4] = *b"AGUP";
pub const WIRE_VERSION: u16 = 1;

pub fn serialize_update(update: &GradientUpdate) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&update.round_id.to_le_bytes());
    out.extend_from_slice(&(update.batch_size as u64).to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    for adapter in [&update.embedding_adapter, &update.layer_adapter] {
        let tensors = adapter.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (rows, cols, data) in tensors {
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Decode {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn deserialize_update(bytes: &[u8]) -> Result<GradientUpdate> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic");
    }
    let version = r.u16()?;
    if version != WIRE_VERSION {
        r.pos -= 2;
        return r.fail(format!("unsupported version {version}"));
    }
    let round_id = r.u64()?;
    let batch_size = r.u64()? as usize;
    let adapters = r.u32()?;
    if adapters != 2 {
        r.pos -= 4;
        return r.fail(format!("expected 2 adapters, found {adapters}"));
    }
    let mut decoded = Vec::with_capacity(2);
    for _ in 0..2 {
        let start = r.pos;
        let count = r.u32()? as usize;
        if count == 0 {
            r.pos = start;
            return r.fail("empty tensor list");
        }
        if count < 4 || !count.is_multiple_of(2) {
            r.pos = start;
            return r.fail(format!(
                "tensor count {count} is not a weight/bias pair list"
            ));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let header = r.pos;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = r.u64()? as usize;
            if rows.checked_mul(cols) != Some(len) {
                r.pos = header;
                return r.fail(format!(
                    "tensor length {len} does not match shape {rows}x{cols}"
                ));
            }
            let raw = r.take(len.saturating_mul(8))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                r.pos = header;
                return r.fail("non-finite gradient entry");
            }
            tensors.push((rows, cols, data));
        }
        match AdapterGradients::from_tensors(tensors) {
            Some(g) => decoded.push(g),
            None => {
                r.pos = start;
                return r.fail("inconsistent adapter tensor shapes");
            }
        }
    }
    if r.pos != bytes.len() {
        return r.fail("trailing bytes");
    }
    let layer_adapter = decoded.pop().unwrap();
    let embedding_adapter = decoded.pop().unwrap();
    Ok(GradientUpdate {
        embedding_adapter,
        layer_adapter,
        batch_size,
        round_id,
    })
}
