//! MMC1 archive: `b"MMC1"`, u32 entry count, then per entry a u32 name
//! length, the UTF-8 name and a u64 absolute offset, followed by the MMT1
//! blobs. Integers are little-endian; entries are sorted by name.

use std::collections::BTreeMap;
use std::path::Path;

use mm_tensor::{io, RunningStats, Scalar, Tensor};

use super::params::ParamStore;
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMC1";

const MEAN: &str = ".running_mean";
const VAR: &str = ".running_var";

fn entries<T: Scalar>(store: &ParamStore<T>) -> BTreeMap<String, &Tensor<T>> {
    let mut all: BTreeMap<String, &Tensor<T>> = store.params.iter().map(|(k, v)| (k.clone(), v)).collect();
    for (k, s) in &store.stats {
        all.insert(format!("{k}{MEAN}"), &s.mean);
        all.insert(format!("{k}{VAR}"), &s.var);
    }
    all
}

pub fn write_checkpoint<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let all = entries(store);
    let blobs: Vec<Vec<u8>> = all.values().map(|t| io::encode(*t)).collect();
    let index_len: usize = 8 + all.keys().map(|k| 4 + k.len() + 8).sum::<usize>();
    let mut out = Vec::with_capacity(index_len + blobs.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(all.len() as u32).to_le_bytes());
    let mut offset = index_len as u64;
    for (name, blob) in all.keys().zip(&blobs) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += blob.len() as u64;
    }
    blobs.iter().for_each(|b| out.extend_from_slice(b));
    out
}

/// Decodes every entry; `origin` names the source in errors.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<BTreeMap<String, Tensor<T>>> {
    let bad = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated checkpoint index".into()));
    if take(0, 4)? != CHECKPOINT_MAGIC {
        return Err(bad("missing MMC1 header".into()));
    }
    let count = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
    let mut index = Vec::with_capacity(count);
    let mut at = 8;
    for _ in 0..count {
        let len = u32::from_le_bytes(take(at, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(at + 4, len)?).map_err(|_| bad("entry name is not UTF-8".into()))?;
        let offset = u64::from_le_bytes(take(at + 4 + len, 8)?.try_into().unwrap()) as usize;
        index.push((name.to_string(), offset));
        at += 4 + len + 8;
    }
    let mut out = BTreeMap::new();
    for (i, (name, offset)) in index.iter().enumerate() {
        let end = index.get(i + 1).map_or(bytes.len(), |e| e.1);
        let blob = bytes
            .get(*offset..end)
            .ok_or_else(|| bad(format!("entry {name} points outside the file")))?;
        let t = io::decode::<T>(blob).map_err(|e| bad(format!("entry {name}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate entry {name}")));
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, write_checkpoint(store)).at(path)
}

/// Loads into `store`, which fixes the expected names and shapes.
pub fn load_checkpoint<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let bytes = std::fs::read(path).at(path)?;
    let mut entries = read_checkpoint::<T>(&bytes, path)?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut take = |name: &str, like: &Tensor<T>| -> Result<Tensor<T>> {
        let t = entries.remove(name).ok_or_else(|| bad(format!("missing entry {name}")))?;
        if t.shape() != like.shape() {
            return Err(bad(format!("entry {name} has shape {:?}, expected {:?}", t.shape(), like.shape())));
        }
        Ok(t)
    };
    let mut params = BTreeMap::new();
    for (k, v) in &store.params {
        params.insert(k.clone(), take(k, v)?);
    }
    let mut stats = BTreeMap::new();
    for (k, s) in &store.stats {
        let mean = take(&format!("{k}{MEAN}"), &s.mean)?;
        let var = take(&format!("{k}{VAR}"), &s.var)?;
        stats.insert(k.clone(), RunningStats { mean, var });
    }
    if let Some(extra) = entries.keys().next() {
        return Err(bad(format!("unexpected entry {extra}")));
    }
    store.params = params;
    store.stats = stats;
    Ok(())
}
