//! CSV tables and the JSON run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Version tag of the CSV column layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// A float with 17 significant digits (round-trips exactly).
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// An in-memory CSV table: header row, `,` separated, `\n` terminated.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
    rows: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).map_err(runtime)?;
        Ok(Self { writer, rows: 0 })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(runtime)?;
        self.rows += 1;
        Ok(())
    }

    pub fn into_bytes(self) -> Result<(Vec<u8>, usize), CliError> {
        let rows = self.rows;
        let bytes = self.writer.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
        Ok((bytes, rows))
    }
}

fn runtime(e: csv::Error) -> CliError {
    CliError::Runtime(format!("csv: {e}"))
}

/// One emitted data file.
#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub rows: usize,
    pub bytes: usize,
    pub sha256: String,
}

/// One invariant checked on the emitted data.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Writes data files into one directory and keeps the inventory.
pub struct OutputDir {
    root: PathBuf,
    pub files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_table(&mut self, name: &str, table: Table) -> Result<(), CliError> {
        let (bytes, rows) = table.into_bytes()?;
        self.write_bytes(name, &bytes)?;
        self.files.push(FileEntry { path: name.to_string(), rows, bytes: bytes.len(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    /// Write `manifest_<command>.json` next to the data files.
    #[allow(clippy::too_many_arguments)]
    pub fn write_manifest<C: Serialize, S: Serialize>(
        &self,
        command: &str,
        config: &C,
        seed: u64,
        started: String,
        checks: &[InvariantCheck],
        summary: &S,
        warnings: &[String],
    ) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            tool: "tpe",
            version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            command,
            seed,
            started,
            finished: timestamp(),
            config,
            files: &self.files,
            checks,
            summary,
            warnings,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        let name = format!("manifest_{command}.json");
        self.write_bytes(&name, format!("{text}\n").as_bytes())?;
        Ok(self.root.join(name))
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    command: &'a str,
    seed: u64,
    started: String,
    finished: String,
    config: &'a C,
    files: &'a [FileEntry],
    checks: &'a [InvariantCheck],
    summary: &'a S,
    warnings: &'a [String],
}

/// Current UTC time, RFC 3339.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(1.0), "1.0000000000000000e0");
        assert_eq!(float(-2.5e-300), "-2.5000000000000000e-300");
        assert_eq!(float(f64::NAN), "NaN");
        for x in [std::f64::consts::PI, 1e-17, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_uses_header_and_newlines() {
        let mut t = Table::new(&["xi_a", "xi_b", "value"]).unwrap();
        t.row([float(0.5), float(-0.5), float(1.0)]).unwrap();
        t.row(["a,b", "c", "d"]).unwrap();
        let (bytes, rows) = t.into_bytes().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(rows, 2);
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next(), Some("xi_a,xi_b,value"));
        assert!(text.ends_with("\"a,b\",c,d\n"));
    }
}
