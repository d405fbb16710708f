//! Flat tensor archive: a JSON manifest of (name, shape) entries followed by
//! little-endian f32 data. Byte-stable for a given model state.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::VisitTensors;

const MAGIC: &[u8; 6] = b"HBTA1\0";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a tensor archive: {0}")]
    BadMagic(String),
    #[error("corrupt archive header: {0}")]
    BadHeader(String),
    #[error("tensor {name}: expected shape {expected:?}, archive has {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tensor {0} missing from archive")]
    Missing(String),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Serialize every tensor of `model` (visit order) into one archive file.
pub fn save<M: VisitTensors>(model: &mut M, path: &Path) -> Result<(), ArchiveError> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    model.visit(&mut |name, t| {
        entries.push(Entry {
            name: name.to_string(),
            rows: t.v.nrows(),
            cols: t.v.ncols(),
        });
        for &x in t.v.iter() {
            data.extend_from_slice(&x.to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&entries).expect("entries serialize");
    let io_err = |e: std::io::Error| ArchiveError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&(header.len() as u64).to_le_bytes()).map_err(io_err)?;
    f.write_all(&header).map_err(io_err)?;
    f.write_all(&data).map_err(io_err)?;
    Ok(())
}

/// Load tensors by name into `model`; every model tensor must be present with
/// a matching shape.
pub fn load<M: VisitTensors>(model: &mut M, path: &Path) -> Result<(), ArchiveError> {
    let io_err = |e: std::io::Error| ArchiveError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::fs::File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 6];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic(path.display().to_string()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(io_err)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header).map_err(io_err)?;
    let entries: Vec<Entry> = serde_json::from_slice(&header)
        .map_err(|e| ArchiveError::BadHeader(e.to_string()))?;
    let mut data = Vec::new();
    f.read_to_end(&mut data).map_err(io_err)?;

    let mut tensors = std::collections::HashMap::new();
    let mut offset = 0usize;
    for e in entries {
        let n = e.rows * e.cols;
        let bytes = data
            .get(offset..offset + 4 * n)
            .ok_or_else(|| ArchiveError::BadHeader("data shorter than manifest".into()))?;
        let mut values = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        offset += 4 * n;
        let arr = Array2::from_shape_vec((e.rows, e.cols), values)
            .map_err(|e| ArchiveError::BadHeader(e.to_string()))?;
        tensors.insert(e.name, arr);
    }

    let mut result = Ok(());
    model.visit(&mut |name, t| {
        if result.is_err() {
            return;
        }
        match tensors.get(name) {
            Some(arr) => {
                if arr.raw_dim() != t.v.raw_dim() {
                    result = Err(ArchiveError::ShapeMismatch {
                        name: name.to_string(),
                        expected: (t.v.nrows(), t.v.ncols()),
                        found: (arr.nrows(), arr.ncols()),
                    });
                } else {
                    t.v.assign(arr);
                    t.ensure_grad();
                    t.g.fill(0.0);
                }
            }
            None => result = Err(ArchiveError::Missing(name.to_string())),
        }
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct M(Linear, Linear);
    impl VisitTensors for M {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.0.visit("a", f);
            self.1.visit("b", f);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut m1 = M(Linear::new(3, 4, &mut rng), Linear::new(4, 2, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save(&mut m1, &path).unwrap();

        let mut m2 = M(Linear::new(3, 4, &mut rng), Linear::new(4, 2, &mut rng));
        load(&mut m2, &path).unwrap();
        assert_eq!(m1.0.w.v, m2.0.w.v);
        assert_eq!(m1.1.b.v, m2.1.b.v);
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut m1 = M(Linear::new(3, 4, &mut rng), Linear::new(4, 2, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save(&mut m1, &path).unwrap();
        let mut wrong = M(Linear::new(3, 5, &mut rng), Linear::new(5, 2, &mut rng));
        assert!(matches!(
            load(&mut wrong, &path),
            Err(ArchiveError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn archive_bytes_are_stable() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut m = M(Linear::new(2, 2, &mut rng), Linear::new(2, 2, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("w1.bin");
        let p2 = dir.path().join("w2.bin");
        save(&mut m, &p1).unwrap();
        save(&mut m, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
