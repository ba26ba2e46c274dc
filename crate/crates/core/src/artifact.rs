//! Versioned JSON envelopes for on-disk artifacts.
//!
//! Every artifact carries a format tag, a version and a free-form
//! provenance object (seeds, configs) alongside its body. Loading refuses a
//! mismatched tag or version.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub provenance: serde_json::Value,
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(format: &str, version: u32, provenance: serde_json::Value, body: T) -> Self {
        Envelope { format: format.to_owned(), version, provenance, body }
    }

    pub fn check(&self, format: &str, version: u32) -> Result<()> {
        if self.format != format || self.version != version {
            return Err(Error::ArtifactVersion {
                expected: format.to_owned(),
                expected_version: version,
                found: self.format.clone(),
                found_version: self.version,
            });
        }
        Ok(())
    }
}

/// Parses an envelope from a JSON string and checks its format and version.
pub fn from_json_str<T: DeserializeOwned>(s: &str, format: &str, version: u32) -> Result<Envelope<T>> {
    // Check the header before the body so a wrong artifact type reports a
    // version error rather than a body parse error.
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(s)?;
    if header.format != format || header.version != version {
        return Err(Error::ArtifactVersion {
            expected: format.to_owned(),
            expected_version: version,
            found: header.format,
            found_version: header.version,
        });
    }
    Ok(serde_json::from_str(s)?)
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str, version: u32) -> Result<Envelope<T>> {
    let s = fs::read_to_string(path)?;
    from_json_str(&s, format, version)
}

pub fn save<T: Serialize>(path: &Path, envelope: &Envelope<T>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(envelope)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinesHeader {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// JSON-lines artifact: a header line, then one item per line.
pub fn write_lines<W: Write, T: Serialize>(mut w: W, header: &LinesHeader, items: &[T]) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lines<R: BufRead, T: DeserializeOwned>(r: R, format: &str, version: u32) -> Result<(LinesHeader, Vec<T>)> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::InvalidArtifact(format!("empty `{format}` file")))??;
    let header: LinesHeader = serde_json::from_str(&first)?;
    if header.format != format || header.version != version {
        return Err(Error::ArtifactVersion {
            expected: format.to_owned(),
            expected_version: version,
            found: header.format,
            found_version: header.version,
        });
    }
    let mut items = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, items))
}

pub fn save_lines<T: Serialize>(path: &Path, header: &LinesHeader, items: &[T]) -> Result<()> {
    write_lines(BufWriter::new(File::create(path)?), header, items)
}

pub fn load_lines<T: DeserializeOwned>(path: &Path, format: &str, version: u32) -> Result<(LinesHeader, Vec<T>)> {
    read_lines(BufReader::new(File::open(path)?), format, version)
}
