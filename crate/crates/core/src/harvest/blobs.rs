use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Content-addressed blob directory: `<root>/<first two hex chars>/<sha256>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlob {
    pub checksum: String,
    pub len: usize,
    /// False when the blob was already present.
    pub created: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl BlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BlobStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, checksum: &str) -> PathBuf {
        let prefix = checksum.get(..2).unwrap_or(checksum);
        self.root.join(prefix).join(checksum)
    }

    pub fn contains(&self, checksum: &str) -> bool {
        is_checksum(checksum) && self.path_for(checksum).is_file()
    }

    pub fn get(&self, checksum: &str) -> std::io::Result<Vec<u8>> {
        if !is_checksum(checksum) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("not a sha256 checksum: {checksum}"),
            ));
        }
        fs::read(self.path_for(checksum))
    }

    /// Stores `bytes` unless a blob with the same checksum exists.
    pub fn put(&self, bytes: &[u8]) -> std::io::Result<StoredBlob> {
        let checksum = sha256_hex(bytes);
        let path = self.path_for(&checksum);
        if path.is_file() {
            return Ok(StoredBlob {
                checksum,
                len: bytes.len(),
                created: false,
            });
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", checksum, std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(StoredBlob {
            checksum,
            len: bytes.len(),
            created: true,
        })
    }
}

/// 64 lowercase hex characters.
pub fn is_checksum(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
