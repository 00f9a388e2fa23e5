//! `MCKP` parameter checkpoints.
//!
//! Layout (all integers little-endian): magic `MCKP`, version `u32`,
//! parameter count `u32`, then per parameter: name length `u16`, name
//! bytes, rows `u32`, cols `u32`, row-major `f64` values.

use super::{Matrix, ParamStore};
use crate::binio::{fit, put_f64s, put_u16, put_u32, Reader};
use crate::error::Result;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + store.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, fit(store.len(), "parameter count")?);
    for p in store.iter() {
        put_u16(&mut out, fit(p.name.len(), "parameter name length")?);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, fit(p.value.rows(), "rows")?);
        put_u32(&mut out, fit(p.value.cols(), "cols")?);
        put_f64s(&mut out, p.value.as_slice());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.offset();
        let name = r.string(len, "parameter name")?;
        if store.find(&name).is_some() {
            return Err(crate::error::Error::Format {
                offset: at,
                msg: format!("duplicate parameter {name}"),
            });
        }
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| r.err("parameter size overflow"))?;
        let values = r.f64s(n, "parameter values")?;
        store.add(name, Matrix::from_vec(rows, cols, values)?);
    }
    if !r.is_at_end() {
        return Err(r.err("trailing bytes after last parameter"));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    decode_checkpoint(&std::fs::read(path)?)
}
