//! Hashing and canonical JSON.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Prefix used on file and directory checksums.
pub const CHECKSUM_PREFIX: &str = "sha256$";

/// Lower-case hex SHA-256 of `bytes` (64 characters).
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical JSON text: sorted object keys, no insignificant whitespace,
/// integers printed without exponent.
///
/// `serde_json::Map` is ordered by key as long as the `preserve_order`
/// feature is off, which this crate relies on.
pub fn canonical_json(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("JSON values always serialize")
}

/// Digest of the canonical JSON rendering of `value`.
pub fn json_digest(value: &serde_json::Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// Streams a file through SHA-256, returning `("sha256$<hex>", size)`.
pub fn checksum_file(path: &Path) -> io::Result<(String, u64)> {
    let mut file = File::open(path)?;
    checksum_reader(&mut file)
}

pub fn checksum_reader<R: Read>(reader: &mut R) -> io::Result<(String, u64)> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        size += n as u64;
    }
    Ok((format!("{CHECKSUM_PREFIX}{}", hex::encode(hasher.finalize())), size))
}

/// Copies `src` to `dst` while hashing the bytes that were written.
pub fn copy_and_checksum(src: &Path, dst: &Path) -> io::Result<(String, u64)> {
    let mut input = File::open(src)?;
    let mut output = File::create(dst)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = input.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        io::Write::write_all(&mut output, &buf[..n])?;
        size += n as u64;
    }
    output.sync_all().ok();
    Ok((format!("{CHECKSUM_PREFIX}{}", hex::encode(hasher.finalize())), size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": {"d": 2, "c": [3, 4.5]}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":[3,4.5],"d":2},"b":1}"#);
    }

    #[test]
    fn checksum_of_empty_input() {
        let (sum, size) = checksum_reader(&mut &b""[..]).unwrap();
        assert_eq!(size, 0);
        assert_eq!(sum, "sha256$e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
