//! Line-delimited JSON helpers shared by every on-disk record format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// How a reader reacts to a record that fails to parse or validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Abort on the first malformed record.
    #[default]
    Strict,
    /// Skip malformed records, reporting them with their line numbers.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(io::Error),
    #[error("line {}: {}", .0.line, .0.reason)]
    Malformed(Malformed),
}

/// Reads one record per nonblank line, applying `check` to each parsed
/// record.
pub fn read_records<T, F>(path: &Path, mode: ReadMode, mut check: F) -> Result<(Vec<T>, Vec<Malformed>), JsonlError>
where
    T: DeserializeOwned,
    F: FnMut(&T) -> Result<(), String>,
{
    let file = File::open(path).map_err(JsonlError::Io)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(JsonlError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<T>(&line).map_err(|e| e.to_string()).and_then(|record| check(&record).map(|()| record));
        match parsed {
            Ok(record) => records.push(record),
            Err(reason) => {
                let bad = Malformed { line: index + 1, reason };
                match mode {
                    ReadMode::Strict => return Err(JsonlError::Malformed(bad)),
                    ReadMode::Lenient => {
                        log::warn!("{}:{}: skipping malformed record: {}", path.display(), bad.line, bad.reason);
                        skipped.push(bad);
                    }
                }
            }
        }
    }
    Ok((records, skipped))
}

pub fn write_records<'a, T, I>(path: &Path, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_to(&mut out, records)?;
    out.flush()
}

pub fn write_to<'a, T, I, W>(out: &mut W, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
    W: Write,
{
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
