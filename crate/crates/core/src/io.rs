//! JSONL persistence with atomic replacement.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl IoError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but a missing file reads as empty.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    match read_jsonl(path) {
        Err(e) if e.is_not_found() => Ok(Vec::new()),
        other => other,
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>, IoError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    write_atomic(path, &to_jsonl(items)?)
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Appends one JSON line and flushes it to disk.
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut line = serde_json::to_vec(item)?;
    line.push(b'\n');
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(&line).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dilemma, Solution, Stance};

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/dilemmas.jsonl");
        let items = vec![
            Dilemma {
                id: "d1".into(),
                episode_id: "e".into(),
                summary: "Æble".into(),
                body: "b".into(),
                question: "q?".into(),
            };
            2
        ];
        write_jsonl(&path, &items).unwrap();
        assert_eq!(read_jsonl::<Dilemma>(&path).unwrap(), items);

        std::fs::write(&path, "{\"id\":1}\n\nnot json\n").unwrap();
        match read_jsonl::<Dilemma>(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(read_jsonl_or_empty::<Solution>(&dir.path().join("none.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn solution_line_shape() {
        let s = Solution {
            id: "a:d1:n0".into(),
            dilemma_id: "d1".into(),
            agent_id: "a".into(),
            text: "Køb dette æble".into(),
            stance: Stance::NotAdvised,
            negation_flipped: true,
            source_response_id: "a:d1".into(),
        };
        let line = String::from_utf8(to_jsonl(&[s]).unwrap()).unwrap();
        assert_eq!(
            line,
            "{\"id\":\"a:d1:n0\",\"dilemma_id\":\"d1\",\"agent_id\":\"a\",\"text\":\"Køb dette æble\",\"stance\":\"not_advised\",\"negation_flipped\":true,\"source_response_id\":\"a:d1\"}\n"
        );
    }
}
