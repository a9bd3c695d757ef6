//! Deterministic report serialization.
//!
//! Reports are JSON with every floating value printed in scientific notation
//! with 17 significant digits, enough to round-trip any f64, so that two
//! runs of the same scenario produce byte-identical files. Files are written
//! to a sibling temp path and renamed into place.

use std::io::{self, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

/// JSON formatter that fixes the float representation. Everything else keeps
/// the compact default behavior.
struct SigFigs;

impl serde_json::ser::Formatter for SigFigs {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serialize a report to its canonical byte form (compact JSON, 17
/// significant digits on floats, trailing newline).
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFigs);
    value.serialize(&mut ser).map_err(|e| Error::Io(io::Error::other(e)))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Write bytes atomically: a sibling temp file is filled, flushed and
/// renamed over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize and write in one step.
pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_canonical_json(value)?)
}
