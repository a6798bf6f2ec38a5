//! 64-bit content digests: the first eight bytes of SHA-256, little-endian.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};

pub fn digest64(bytes: &[u8]) -> u64 {
    finish(Sha256::new_with_prefix(bytes))
}

fn finish(h: Sha256) -> u64 {
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Digest of `bytes` followed by zeros up to `total_len`, the content of a
/// file written from `bytes` and padded by `set_len`.
pub fn padded_digest64(bytes: &[u8], total_len: u64) -> u64 {
    let mut h = Sha256::new_with_prefix(bytes);
    let zeros = [0u8; 1 << 16];
    let mut left = total_len.saturating_sub(bytes.len() as u64);
    while left > 0 {
        let n = left.min(zeros.len() as u64) as usize;
        h.update(&zeros[..n]);
        left -= n as u64;
    }
    finish(h)
}

pub fn file_digest64(path: &Path) -> Result<u64> {
    let mut f = File::open(path).at(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(finish(h))
}

/// Hex form used in JSON metadata.
pub fn to_hex(d: u64) -> String {
    format!("{d:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        // sha256("") = e3b0c442...
        assert_eq!(to_hex(digest64(b"")), "141cfc9842c4b0e3");
        assert_ne!(digest64(b"a"), digest64(b"b"));
        assert_eq!(padded_digest64(b"ab", 5), digest64(b"ab\0\0\0"));
        assert_eq!(padded_digest64(b"", 0), digest64(b""));
    }
}
