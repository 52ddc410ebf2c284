use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{Manifest, ManifestError};

/// Shared handle over a manifest file: many readers, one writer at a time.
///
/// [`ManifestStore::transact`] applies a closure to a copy of the current
/// manifest and, only if it succeeds, persists the copy and publishes it.
/// A failed closure or a failed write leaves the visible state untouched.
#[derive(Debug)]
pub struct ManifestStore {
    path: Option<PathBuf>,
    current: RwLock<Manifest>,
    writer: Mutex<()>,
}

impl ManifestStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref().to_path_buf();
        let manifest = Manifest::open(&path)?;
        Ok(ManifestStore {
            path: Some(path),
            current: RwLock::new(manifest),
            writer: Mutex::new(()),
        })
    }

    /// A store that never touches disk.
    pub fn in_memory(manifest: Manifest) -> Self {
        ManifestStore {
            path: None,
            current: RwLock::new(manifest),
            writer: Mutex::new(()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn read<R>(&self, f: impl FnOnce(&Manifest) -> R) -> R {
        let guard = self.current.read().unwrap_or_else(|e| e.into_inner());
        f(&guard)
    }

    pub fn snapshot(&self) -> Manifest {
        self.read(Manifest::clone)
    }

    pub fn transact<R, E>(&self, f: impl FnOnce(&mut Manifest) -> Result<R, E>) -> Result<R, E>
    where
        E: From<ManifestError>,
    {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut working = self.snapshot();
        let out = f(&mut working)?;
        if let Some(path) = &self.path {
            working.save(path)?;
        }
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = working;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ImageRecord, ProviderId};
    use crate::taxonomy::ClassId;

    #[test]
    fn failed_transaction_leaves_state_untouched() {
        let store = ManifestStore::in_memory(Manifest::new());
        let r: Result<(), ManifestError> = store.transact(|m| {
            m.insert(ImageRecord::new("a", ProviderId::Bing, ClassId::Fire))?;
            Err(ManifestError::NothingToSplit)
        });
        assert!(r.is_err());
        assert!(store.read(Manifest::is_empty));
    }

    #[test]
    fn committed_transaction_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.db");
        let store = ManifestStore::open(&path).unwrap();
        store
            .transact(|m| m.insert(ImageRecord::new("a", ProviderId::Bing, ClassId::Fire)))
            .unwrap();
        let reopened = ManifestStore::open(&path).unwrap();
        assert_eq!(reopened.snapshot(), store.snapshot());
        assert_eq!(reopened.read(Manifest::len), 1);
    }

    #[test]
    fn concurrent_writers_serialize() {
        let store = std::sync::Arc::new(ManifestStore::in_memory(Manifest::new()));
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let s = store.clone();
                std::thread::spawn(move || {
                    for i in 0..25 {
                        s.transact(|m| {
                            m.insert(ImageRecord::new(
                                format!("{t}-{i}"),
                                ProviderId::Bing,
                                ClassId::Fire,
                            ))
                        })
                        .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(store.read(Manifest::len), 200);
    }
}
