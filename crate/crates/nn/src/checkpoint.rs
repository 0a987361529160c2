//! Checkpoint format: versioned header, then per parameter its name, shape
//! and raw little-endian f32 data. Save -> load round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HVOXNET\x01";

pub fn save_params<W: Write>(store: &ParamStore<f32>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.trainable as u8])?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params_to_path(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_params(store, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Entry {
    name: String,
    trainable: bool,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn read_entries<R: Read>(mut r: R) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic/version".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("non-utf8 parameter name".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        r.read_exact(&mut u32buf)?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0f32; len];
        for v in &mut data {
            r.read_exact(&mut u32buf)?;
            *v = f32::from_le_bytes(u32buf);
        }
        entries.push(Entry {
            name,
            trainable: flag[0] != 0,
            shape,
            data,
        });
    }
    Ok(entries)
}

/// Loads a checkpoint into an already-built store; every entry must match an
/// existing parameter by name and shape, and every parameter must be covered.
pub fn load_params_into<R: Read>(store: &mut ParamStore<f32>, r: R) -> Result<()> {
    let entries = read_entries(r)?;
    if entries.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} entries, network has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store
            .find(&e.name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", e.name)))?;
        if store.value(id).shape() != e.shape.as_slice() {
            return Err(NnError::Checkpoint(format!(
                "parameter {} shape {:?} does not match checkpoint {:?}",
                e.name,
                store.value(id).shape(),
                e.shape
            )));
        }
        store.set_value(id, e.data)?;
    }
    Ok(())
}

pub fn load_params_into_from_path(store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
    load_params_into(store, BufReader::new(File::open(path)?))
}

/// Loads a checkpoint as a standalone store (entries in file order).
pub fn load_params<R: Read>(r: R) -> Result<ParamStore<f32>> {
    let entries = read_entries(r)?;
    let mut store = ParamStore::new();
    for e in entries {
        let t = Tensor::new(e.shape, e.data)
            .map_err(|err| NnError::Checkpoint(err.to_string()))?;
        store.add(e.name, t, e.trainable);
    }
    Ok(store)
}
