//! Parameter container: a text manifest (`identifier shape byte_offset` per
//! line) next to a flat blob of little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::param::Module;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "params.manifest";
pub const BLOB_FILE: &str = "params.bin";
const HEADER: &str = "# roofseg parameter checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Snapshot of every parameter and buffer of a module.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn capture<T: Real>(module: &mut dyn Module<T>) -> Self {
        let to_f32 = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
        let mut entries: Vec<Entry> = module
            .params_mut()
            .into_iter()
            .map(|p| Entry {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                values: to_f32(&p.value),
            })
            .collect();
        entries.extend(module.buffers_mut().into_iter().map(|b| Entry {
            name: b.name.clone(),
            shape: vec![b.value.len()],
            values: to_f32(&b.value),
        }));
        Self { entries }
    }

    /// Writes every entry back into `module`; names and shapes must match.
    pub fn restore<T: Real>(&self, module: &mut dyn Module<T>) -> Result<()> {
        let mut it = self.entries.iter();
        let mut next = |name: &str, shape: &[usize]| -> Result<&Entry> {
            let e = it
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
            if e.name != name || e.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` {:?} does not match `{name}` {shape:?}",
                    e.name, e.shape
                )));
            }
            Ok(e)
        };
        for p in module.params_mut() {
            let e = next(p.name(), p.shape())?;
            for (dst, &v) in p.value.iter_mut().zip(&e.values) {
                *dst = T::lit(v as f64);
            }
        }
        for b in module.buffers_mut() {
            let e = next(&b.name, &[b.value.len()])?;
            for (dst, &v) in b.value.iter_mut().zip(&e.values) {
                *dst = T::lit(v as f64);
            }
        }
        if it.next().is_some() {
            return Err(Error::Checkpoint("checkpoint has extra entries".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::from(HEADER);
        manifest.push('\n');
        let mut blob = Vec::new();
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{} {} {}\n", e.name, dims.join("x"), blob.len()));
            for v in &e.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::File::create(dir.join(BLOB_FILE))?.write_all(&blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let blob = fs::read(dir.join(BLOB_FILE))?;
        let mut entries = Vec::new();
        for (lineno, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Checkpoint(format!("manifest line {}: {what}", lineno + 1));
            let mut fields = line.split_whitespace();
            let (Some(name), Some(dims), Some(offset), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected `identifier shape byte_offset`"));
            };
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("malformed shape"))?;
            let offset: usize = offset.parse().map_err(|_| bad("malformed offset"))?;
            let len: usize = shape.iter().product();
            let end = offset + 4 * len;
            if end > blob.len() {
                return Err(bad("entry extends past end of blob"));
            }
            let values = blob[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push(Entry {
                name: name.to_string(),
                shape,
                values,
            });
        }
        Ok(Self { entries })
    }
}
