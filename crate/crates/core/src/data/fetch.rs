//! Checksum-verified download cache for registered datasets.
//!
//! A registry is a TOML file with one table per dataset:
//!
//! ```toml
//! [datasets.ionosphere]
//! url = "https://example.org/ionosphere.libsvm"
//! sha256 = "9f2c..."
//! format = "libsvm"
//!
//! [datasets.magic]
//! url = "file:///data/magic.csv"
//! sha256 = "0b41..."
//! format = "csv"
//! target_column = "class"
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{DataError, Dataset};

/// Environment variable overriding the dataset cache directory.
pub const CACHE_DIR_ENV: &str = "SURROGATE_CACHE_DIR";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("unknown dataset {name:?}; registered datasets: {}", known.join(", "))]
    UnknownDataset { name: String, known: Vec<String> },
    #[error("registry {path}: {message}")]
    Registry { path: PathBuf, message: String },
    #[error("download of {url} failed: {message}")]
    Network { url: String, message: String },
    #[error("checksum mismatch for {name}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("cache i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub url: String,
    /// Lowercase hex SHA-256 of the file contents.
    pub sha256: String,
    pub format: SourceFormat,
    #[serde(default)]
    pub target_column: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default)]
    pub datasets: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FetchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FetchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| FetchError::Registry {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn get(&self, name: &str) -> Result<&RegistryEntry, FetchError> {
        self.datasets.get(name).ok_or_else(|| FetchError::UnknownDataset {
            name: name.to_string(),
            known: self.datasets.keys().cloned().collect(),
        })
    }
}

/// Source of remote bytes.
pub trait Transport: Sync {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<(), FetchError>;
}

/// `http(s)://` via ureq and `file://` from the local filesystem.
#[derive(Debug, Clone, Copy, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<(), FetchError> {
        let network = |message: String| FetchError::Network {
            url: url.to_string(),
            message,
        };
        let mut reader: Box<dyn Read> = if let Some(local) = url.strip_prefix("file://") {
            Box::new(File::open(local).map_err(|e| network(e.to_string()))?)
        } else {
            let response = ureq::get(url).call().map_err(|e| network(e.to_string()))?;
            response.into_reader()
        };
        io::copy(&mut reader, sink).map_err(|e| network(e.to_string()))?;
        Ok(())
    }
}

/// `$SURROGATE_CACHE_DIR`, else `$HOME/.cache/surrogate-loss`, else
/// `./.surrogate-cache`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("surrogate-loss"),
        None => PathBuf::from(".surrogate-cache"),
    }
}

fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Returns the cached path of `name`, downloading and verifying it first if
/// needed. Downloads go to a temporary file renamed into place only after
/// the checksum matches. A cached file that fails verification is deleted.
pub fn fetch_dataset(
    registry: &Registry,
    name: &str,
    cache_dir: &Path,
    transport: &dyn Transport,
) -> Result<PathBuf, FetchError> {
    let entry = registry.get(name)?;
    let expected = entry.sha256.to_ascii_lowercase();
    let ext = match entry.format {
        SourceFormat::Libsvm => "libsvm",
        SourceFormat::Csv => "csv",
    };
    let target = cache_dir.join(format!("{name}.{ext}"));
    let io_at = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FetchError::Io { path, source }
    };
    if target.exists() {
        let actual = sha256_file(&target).map_err(io_at(&target))?;
        if actual == expected {
            return Ok(target);
        }
        fs::remove_file(&target).map_err(io_at(&target))?;
        return Err(FetchError::ChecksumMismatch {
            name: name.to_string(),
            expected,
            actual,
        });
    }
    fs::create_dir_all(cache_dir).map_err(io_at(cache_dir))?;
    let temp = cache_dir.join(format!(".{name}.{}.part", std::process::id()));
    let result = (|| {
        let file = File::create(&temp).map_err(io_at(&temp))?;
        let mut sink = HashingWriter {
            inner: io::BufWriter::new(file),
            hasher: Sha256::new(),
        };
        transport.fetch(&entry.url, &mut sink)?;
        sink.flush().map_err(io_at(&temp))?;
        let actual = hex::encode(sink.hasher.finalize());
        if actual != expected {
            return Err(FetchError::ChecksumMismatch {
                name: name.to_string(),
                expected: expected.clone(),
                actual,
            });
        }
        fs::rename(&temp, &target).map_err(io_at(&target))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&temp);
    }
    result.map(|()| target)
}

/// Fetches `name` and parses it according to its registry format.
pub fn load_registered(
    registry: &Registry,
    name: &str,
    cache_dir: &Path,
    transport: &dyn Transport,
) -> Result<Dataset, FetchError> {
    let path = fetch_dataset(registry, name, cache_dir, transport)?;
    let entry = registry.get(name)?;
    let mut ds = match entry.format {
        SourceFormat::Libsvm => super::load_libsvm(&path)?,
        SourceFormat::Csv => {
            let column = entry.target_column.as_deref().unwrap_or("target");
            super::load_csv(&path, column)?
        }
    };
    ds.name = name.to_string();
    Ok(ds)
}
