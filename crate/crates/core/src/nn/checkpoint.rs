//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"NLCK"
//! version  u32 (currently 1)
//! count    u32 number of tensors
//! count x { ndim u32, dims u32 x ndim }
//! values   f64 x sum(prod(dims)), tensors in table order
//! ```

use std::io::{Read, Write};

use super::layer::ParamTensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"NLCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, tensors: &[&ParamTensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for t in tensors {
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<ParamTensor>, NnError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let ndim = cur.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        shapes.push(dims);
    }
    let mut out = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let bytes = cur.take(n * 8)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(ParamTensor::from_values(&shape, values)?);
    }
    if cur.pos != buf.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - cur.pos
        )));
    }
    Ok(out)
}

/// Copies checkpointed values into `targets`, checking shapes one by one.
pub fn restore_into(targets: &mut [&mut ParamTensor], loaded: &[ParamTensor]) -> Result<(), NnError> {
    if targets.len() != loaded.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            loaded.len(),
            targets.len()
        )));
    }
    for (i, (t, l)) in targets.iter_mut().zip(loaded).enumerate() {
        if t.shape() != l.shape() {
            return Err(NnError::Checkpoint(format!(
                "tensor {i}: checkpoint shape {:?}, model shape {:?}",
                l.shape(),
                t.shape()
            )));
        }
        t.values.copy_from_slice(&l.values);
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NnError::Checkpoint(format!(
                "truncated at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
