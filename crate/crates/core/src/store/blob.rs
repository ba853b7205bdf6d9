//! Write-once blob area, addressed by payload hash.
//!
//! Layout: `<root>/<h[0..2]>/<h[2..4]>/<h>`. Files are written to a temp name
//! and renamed into place, then marked read-only.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::canon::{self, PayloadHash};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub hash: PayloadHash,
    pub length: u64,
}

#[derive(Debug)]
pub struct BlobStore {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("tmp"))?;
        Ok(BlobStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, hash: &PayloadHash) -> PathBuf {
        let h = hash.to_string();
        self.root.join(&h[0..2]).join(&h[2..4]).join(h)
    }

    pub fn contains(&self, hash: &PayloadHash) -> bool {
        self.path_for(hash).is_file()
    }

    /// Stores `bytes`; a second put of identical bytes is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<BlobRef, StoreError> {
        let hash = canon::payload_hash(bytes);
        let blob = BlobRef {
            hash,
            length: bytes.len() as u64,
        };
        let path = self.path_for(&hash);
        if path.is_file() {
            let existing = fs::read(&path)?;
            if existing != bytes {
                return Err(StoreError::Corrupt {
                    hash,
                    detail: format!("existing blob at {} differs from content being stored", path.display()),
                });
            }
            return Ok(blob);
        }
        let parent = path.parent().expect("blob path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = self.root.join("tmp").join(format!(
            "{hash}.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        let mut perms = fs::metadata(&tmp)?.permissions();
        perms.set_readonly(true);
        fs::set_permissions(&tmp, perms)?;
        fs::rename(&tmp, &path)?;
        Ok(blob)
    }

    /// Bytes of a blob, verified against its address.
    pub fn get(&self, hash: &PayloadHash) -> Result<Option<Vec<u8>>, StoreError> {
        match self.read_unverified(hash)? {
            None => Ok(None),
            Some(bytes) => {
                let actual = canon::payload_hash(&bytes);
                if actual != *hash {
                    return Err(StoreError::Corrupt {
                        hash: *hash,
                        detail: format!("content rehashes to {actual}"),
                    });
                }
                Ok(Some(bytes))
            }
        }
    }

    /// Bytes as found on disk, without checking the hash. Audit paths use
    /// this so they can report a mismatch instead of failing.
    pub fn read_unverified(&self, hash: &PayloadHash) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.path_for(hash)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Every stored hash, sorted.
    pub fn list(&self) -> Result<Vec<PayloadHash>, StoreError> {
        let mut out = Vec::new();
        for l1 in fs::read_dir(&self.root)? {
            let l1 = l1?;
            if !l1.file_type()?.is_dir() || l1.file_name() == "tmp" {
                continue;
            }
            for l2 in fs::read_dir(l1.path())? {
                for f in fs::read_dir(l2?.path())? {
                    if let Some(h) = f?.file_name().to_str().and_then(|n| n.parse().ok()) {
                        out.push(h);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_idempotent_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let a = store.put(b"hello").unwrap();
        let b = store.put(b"hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.length, 5);
        assert_eq!(store.list().unwrap(), vec![a.hash]);
        assert_eq!(store.get(&a.hash).unwrap().unwrap(), b"hello");
        assert!(store.get(&canon::payload_hash(b"nope")).unwrap().is_none());
    }

    #[test]
    fn tampered_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let r = store.put(b"hello").unwrap();
        let path = store.path_for(&r.hash);
        let mut perms = fs::metadata(&path).unwrap().permissions();
        #[allow(clippy::permissions_set_readonly_false)]
        perms.set_readonly(false);
        fs::set_permissions(&path, perms).unwrap();
        fs::write(&path, b"jello").unwrap();
        assert!(matches!(store.get(&r.hash), Err(StoreError::Corrupt { .. })));
        assert!(matches!(store.put(b"hello"), Err(StoreError::Corrupt { .. })));
        assert_eq!(store.read_unverified(&r.hash).unwrap().unwrap(), b"jello");
    }
}
