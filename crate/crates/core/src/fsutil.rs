//! Small filesystem helpers shared by the stores.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

/// A filesystem-safe stem for an arbitrary identifier. Identifiers that
/// needed rewriting get a digest suffix so distinct ids never collide.
pub fn file_stem(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if safe == id && !safe.is_empty() {
        safe
    } else {
        let digest = hex::encode(Sha256::digest(id.as_bytes()));
        format!("{safe}-{}", &digest[..12])
    }
}

/// Writes through a sibling temporary file and renames into place.
pub fn write_atomic(path: &Path, body: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, body)?;
    fs::rename(&tmp, path)
}
