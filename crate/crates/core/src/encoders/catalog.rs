//! `MCEB` embedding container.
//!
//! Layout (little-endian): magic `MCEB`, version `u32`, item count `u32`,
//! then per item: id length `u16`, id bytes, modality `u8`, segment count
//! `u8`, and per segment: rows `u16`, `d_in` `u16`, row-major `f64` values.

use super::{Modality, TokenSequence};
use crate::binio::{fit, put_f64s, put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use std::collections::BTreeMap;
use std::path::Path;

pub const CATALOG_MAGIC: &[u8; 4] = b"MCEB";
pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogItem {
    pub modality: Modality,
    pub segments: Vec<Matrix>,
}

impl CatalogItem {
    pub fn segment(&self, i: usize) -> TokenSequence {
        TokenSequence::new(self.modality, self.segments[i].clone())
    }
}

/// Immutable-after-load map from item id to segment sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCatalog {
    items: BTreeMap<String, CatalogItem>,
}

impl FeatureCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, item: CatalogItem) -> Result<()> {
        let id = id.into();
        if item.segments.is_empty() {
            return Err(Error::contract(format!("item {id} has no segments")));
        }
        let d = item.segments[0].cols();
        if item.segments.iter().any(|s| s.cols() != d) {
            return Err(Error::contract(format!("item {id} has mixed segment widths")));
        }
        if self.items.contains_key(&id) {
            return Err(Error::contract(format!("duplicate catalog id {id}")));
        }
        self.items.insert(id, item);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&CatalogItem> {
        self.items
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown catalog id {id}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &CatalogItem)> {
        self.items.iter()
    }

    pub fn ids_of(&self, modality: Modality) -> Vec<String> {
        self.items
            .iter()
            .filter(|(_, it)| it.modality == modality)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CATALOG_MAGIC);
        put_u32(&mut out, CATALOG_VERSION);
        put_u32(&mut out, fit(self.items.len(), "item count")?);
        for (id, item) in &self.items {
            put_u16(&mut out, fit(id.len(), "id length")?);
            out.extend_from_slice(id.as_bytes());
            out.push(item.modality.code());
            out.push(fit(item.segments.len(), "segment count")?);
            for seg in &item.segments {
                put_u16(&mut out, fit(seg.rows(), "segment rows")?);
                put_u16(&mut out, fit(seg.cols(), "segment width")?);
                put_f64s(&mut out, seg.as_slice());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CATALOG_MAGIC)?;
        let version = r.u32("version")?;
        if version != CATALOG_VERSION {
            return Err(r.err(format!("unsupported catalog version {version}")));
        }
        let count = r.u32("item count")?;
        let mut cat = FeatureCatalog::new();
        for _ in 0..count {
            let len = r.u16("id length")? as usize;
            let at = r.offset();
            let id = r.string(len, "item id")?;
            let code_at = r.offset();
            let modality = Modality::from_code(r.u8("modality")?).ok_or_else(|| Error::Format {
                offset: code_at,
                msg: "unknown modality code".into(),
            })?;
            let nseg = r.u8("segment count")? as usize;
            let mut segments = Vec::with_capacity(nseg);
            for _ in 0..nseg {
                let rows = r.u16("segment rows")? as usize;
                let cols = r.u16("segment width")? as usize;
                let vals = r.f64s(rows * cols, "segment values")?;
                segments.push(Matrix::from_vec(rows, cols, vals)?);
            }
            cat.insert(id, CatalogItem { modality, segments })
                .map_err(|e| Error::Format {
                    offset: at,
                    msg: e.to_string(),
                })?;
        }
        if !r.is_at_end() {
            return Err(r.err("trailing bytes after last item"));
        }
        Ok(cat)
    }
}

pub fn save_features(catalog: &FeatureCatalog, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, catalog.encode()?)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureCatalog> {
    FeatureCatalog::decode(&std::fs::read(path)?)
}
