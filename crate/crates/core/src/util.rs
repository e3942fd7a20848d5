//! Canonical serialization and hashing helpers shared across modules.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// SHA-256 of the exact byte sequence, as a lowercase hex digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Re-serializes a JSON value with recursively sorted object keys and no
/// insignificant whitespace. Two structurally equal documents canonicalize
/// to identical bytes, which makes content hashes stable across reloads.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
    }
}

/// Canonical content hash of any serializable value.
pub fn content_hash<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    sha256_hex(canonical_json(&v).as_bytes())
}

/// Stable 64-bit sampling seed for a (task_id, seed_index) pair. Identical
/// across platforms and processes.
pub fn assign_seed(task_id: &str, seed_index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(task_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
