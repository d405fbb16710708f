//! Content hashing and seed derivation shared by every pipeline stage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of a serializable value via its canonical JSON encoding.
///
/// serde_json writes struct fields in declaration order and we use ordered
/// maps throughout, so the encoding is stable.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable config");
    sha256_hex(&bytes)
}

/// Derive a stage seed from the global seed and a stage label.
///
/// One global seed fans out to independent per-stage seeds so stages stay
/// individually reproducible.
pub fn derive_seed(global_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Provenance block embedded in every artifact written to disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// Hashes of the inputs this artifact was derived from, keyed by role.
    pub input_hashes: std::collections::BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            seed,
            config_hash,
            input_hashes: std::collections::BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, role: &str, hash: String) -> Self {
        self.input_hashes.insert(role.to_string(), hash);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        // echo -n "abc" | sha256sum
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        let a = derive_seed(42, "prep");
        let b = derive_seed(42, "finetune");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, "prep"));
    }

    #[test]
    fn config_hash_stable() {
        #[derive(Serialize)]
        struct C {
            x: u32,
            y: String,
        }
        let c = C {
            x: 1,
            y: "a".into(),
        };
        assert_eq!(config_hash(&c), config_hash(&c));
    }
}
