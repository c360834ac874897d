//! Canonical storage of uploaded files.
//!
//! A file submitted for column `c` of `db.t` is stored at
//! `{upload_root}/{db}/{t}/{c}/{UTC timestamp}_{sanitized name}`; the path
//! relative to the root is what goes into the file-link column.

use std::fs::{File, OpenOptions};
use std::io::{self, Read};
use std::path::{Component, Path, PathBuf};

use hdb_core::Timestamp;
use tempfile::NamedTempFile;
use thiserror::Error;

const MAX_NAME_LEN: usize = 100;
/// Where multipart bodies are spooled before they reach their final place.
pub const INCOMING_DIR: &str = ".incoming";

#[derive(Debug, Error)]
pub enum UploadError {
    #[error("upload exceeds the {cap}-byte limit")]
    UploadTooLarge { cap: u64 },
    #[error("cannot derive a safe storage path: {0}")]
    PathSanitizationFailure(String),
    #[error("no space left to store the upload")]
    DiskFull,
    #[error("upload storage failed: {0}")]
    Io(#[from] io::Error),
}

fn io_error(e: io::Error) -> UploadError {
    if e.kind() == io::ErrorKind::StorageFull {
        UploadError::DiskFull
    } else {
        UploadError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadRecord {
    /// Relative to the upload root, `/`-separated.
    pub stored_path: String,
    pub original_name: String,
    pub size: u64,
    pub stored_at: Timestamp,
}

/// Where an upload belongs.
#[derive(Debug, Clone, Copy)]
pub struct UploadTarget<'a> {
    pub db: &'a str,
    pub table: &'a str,
    pub column: &'a str,
}

/// The final path component of a client-supplied name, reduced to
/// `[A-Za-z0-9._-]`, without leading dots and at most 100 bytes long.
pub fn sanitize_name(original: &str) -> String {
    let last = original.rsplit(['/', '\\']).next().unwrap_or("");
    let mapped: String = last
        .chars()
        .filter(|c| !c.is_control())
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    let mut name = mapped.trim_start_matches('.').to_owned();
    name.truncate(MAX_NAME_LEN);
    if name.is_empty() {
        "upload".into()
    } else {
        name
    }
}

fn directory_component(s: &str) -> Result<&str, UploadError> {
    let plain = !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if plain {
        Ok(s)
    } else {
        Err(UploadError::PathSanitizationFailure(format!("`{s}` is not a plain path component")))
    }
}

/// Creates the target directory and checks it resolves inside the root.
fn target_dir(root: &Path, target: UploadTarget<'_>) -> Result<(PathBuf, PathBuf), UploadError> {
    let rel: PathBuf =
        [target.db, target.table, target.column].into_iter().map(directory_component).collect::<Result<_, _>>()?;
    let root = root.canonicalize().map_err(io_error)?;
    let dir = root.join(&rel);
    std::fs::create_dir_all(&dir).map_err(io_error)?;
    let resolved = dir.canonicalize().map_err(io_error)?;
    if !resolved.starts_with(&root) || resolved == root {
        return Err(UploadError::PathSanitizationFailure(format!("{} leaves the upload root", rel.display())));
    }
    Ok((root, resolved))
}

fn stamp(now: Timestamp) -> String {
    now.format("%Y%m%dT%H%M%S%.9fZ").to_string()
}

fn candidate(now: Timestamp, n: u32, name: &str) -> String {
    if n == 0 {
        format!("{}_{name}", stamp(now))
    } else {
        format!("{}-{n}_{name}", stamp(now))
    }
}

fn relative(root: &Path, path: &Path) -> Result<String, UploadError> {
    let rel = path
        .strip_prefix(root)
        .map_err(|_| UploadError::PathSanitizationFailure(format!("{} leaves the upload root", path.display())))?;
    let parts: Vec<String> = rel
        .components()
        .map(|c| match c {
            Component::Normal(s) => Ok(s.to_string_lossy().into_owned()),
            _ => Err(UploadError::PathSanitizationFailure(rel.display().to_string())),
        })
        .collect::<Result<_, _>>()?;
    Ok(parts.join("/"))
}

/// Copies `content` into its canonical place. Fails without leaving a file
/// behind when more than `cap` bytes arrive.
pub fn store_upload(
    root: &Path,
    cap: u64,
    target: UploadTarget<'_>,
    original_name: &str,
    content: impl Read,
    now: Timestamp,
) -> Result<UploadRecord, UploadError> {
    let (root, dir) = target_dir(root, target)?;
    let name = sanitize_name(original_name);
    let (path, mut file) = (0u32..)
        .map(|n| dir.join(candidate(now, n, &name)))
        .find_map(|p| match OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(f) => Some(Ok((p, f))),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => None,
            Err(e) => Some(Err(io_error(e))),
        })
        .expect("unbounded candidates")?;
    let copied = io::copy(&mut content.take(cap.saturating_add(1)), &mut file).and_then(|n| file.sync_all().map(|_| n));
    let size = match copied {
        Ok(n) if n <= cap => n,
        Ok(_) => {
            drop(file);
            let _ = std::fs::remove_file(&path);
            return Err(UploadError::UploadTooLarge { cap });
        }
        Err(e) => {
            drop(file);
            let _ = std::fs::remove_file(&path);
            return Err(io_error(e));
        }
    };
    Ok(UploadRecord {
        stored_path: relative(&root, &path)?,
        original_name: original_name.to_owned(),
        size,
        stored_at: now,
    })
}

/// Moves an already spooled upload into its canonical place.
pub fn store_spooled(
    root: &Path,
    cap: u64,
    target: UploadTarget<'_>,
    original_name: &str,
    spooled: NamedTempFile,
    now: Timestamp,
) -> Result<UploadRecord, UploadError> {
    let size = spooled.as_file().metadata().map_err(io_error)?.len();
    if size > cap {
        return Err(UploadError::UploadTooLarge { cap });
    }
    let (root, dir) = target_dir(root, target)?;
    let name = sanitize_name(original_name);
    let mut tmp = spooled;
    for n in 0u32.. {
        let path = dir.join(candidate(now, n, &name));
        match tmp.persist_noclobber(&path) {
            Ok(_) => {
                return Ok(UploadRecord {
                    stored_path: relative(&root, &path)?,
                    original_name: original_name.to_owned(),
                    size,
                    stored_at: now,
                })
            }
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => tmp = e.file,
            Err(e) => return Err(io_error(e.error)),
        }
    }
    unreachable!("unbounded candidates")
}

/// A fresh spool file under the root's incoming area.
pub fn spool_file(root: &Path) -> io::Result<NamedTempFile> {
    let dir = root.join(INCOMING_DIR);
    std::fs::create_dir_all(&dir)?;
    NamedTempFile::new_in(dir)
}

/// Resolves a `/files/` request path to a stored file, refusing anything
/// outside the root or in the incoming area.
pub fn resolve_stored(root: &Path, rel: &str) -> Option<(PathBuf, File)> {
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    if rel.components().next().is_some_and(|c| c.as_os_str() == INCOMING_DIR) {
        return None;
    }
    let root = root.canonicalize().ok()?;
    let path = root.join(rel).canonicalize().ok()?;
    if !path.starts_with(&root) || !path.is_file() {
        return None;
    }
    let f = File::open(&path).ok()?;
    Some((path, f))
}
