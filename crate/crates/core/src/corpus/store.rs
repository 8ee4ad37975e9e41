use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::ValueProfile;
use crate::fsutil::{file_stem, write_atomic};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("profile store I/O error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("profile file {path} is malformed: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// One JSON document per respondent under a directory.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
}

impl ProfileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(ProfileStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, respondent_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", file_stem(respondent_id)))
    }

    pub fn contains(&self, respondent_id: &str) -> bool {
        self.path_for(respondent_id).is_file()
    }

    /// Writes atomically through a temporary file.
    pub fn save(&self, profile: &ValueProfile) -> Result<(), StoreError> {
        let path = self.path_for(&profile.respondent_id);
        let body = serde_json::to_string_pretty(profile).expect("profile serializes") + "\n";
        write_atomic(&path, body.as_bytes()).map_err(|source| StoreError::Io { path, source })
    }

    pub fn load(&self, respondent_id: &str) -> Result<Option<ValueProfile>, StoreError> {
        let path = self.path_for(respondent_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| StoreError::Malformed {
                path,
                message: e.to_string(),
            })
    }

    /// Every stored profile, sorted by respondent id.
    pub fn load_all(&self) -> Result<Vec<ValueProfile>, StoreError> {
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut out = Vec::new();
        for e in entries {
            let path = e
                .map_err(|source| StoreError::Io {
                    path: self.dir.clone(),
                    source,
                })?
                .path();
            if path.extension().is_some_and(|x| x == "json") {
                let text = fs::read_to_string(&path).map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
                let p: ValueProfile = serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                out.push(p);
            }
        }
        out.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_odd_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::open(dir.path()).unwrap();
        let mut p = ValueProfile {
            respondent_id: "KR/0001 x".into(),
            ..Default::default()
        };
        p.synopses.insert("Generalized Trust".into(), "Trusts neighbours.".into());
        assert!(!store.contains(&p.respondent_id));
        store.save(&p).unwrap();
        assert!(store.contains(&p.respondent_id));
        assert_eq!(store.load(&p.respondent_id).unwrap(), Some(p.clone()));
        assert_eq!(store.load_all().unwrap(), vec![p]);
        assert_eq!(store.load("missing").unwrap(), None);
        assert_ne!(file_stem("a/b"), file_stem("a_b"));
    }
}
