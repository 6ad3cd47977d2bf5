//! Experiment configuration files, run manifests, and small CSV helpers.
//!
//! Experiments are described by flat, sectioned key-value files:
//!
//! ```text
//! # comment
//! [experiment]
//! kind = demand_curve
//! seed = 42
//!
//! [market]
//! competitor_prices = 5.18, 5.96, 6.31
//! ```
//!
//! Parsing is strict: duplicate sections or keys are rejected, every value
//! must parse into the type the reader asks for, and a [`SectionReader`]
//! tracks which keys were consumed so that typos surface as
//! [`Error::UnknownConfigKey`] instead of being silently ignored.
//!
//! The same format doubles as the run manifest (`manifest.txt`) written next
//! to experiment outputs: a `[run]` section with provenance metadata and a
//! `[files]` section mapping each output file to `sha256:<hex>:<bytes>`.
//! Manifests parse back through the ordinary config parser, which is what
//! the verification path uses to compare two runs.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// File name of the run manifest written next to experiment outputs.
pub const MANIFEST_FILE: &str = "manifest.txt";

/// A parsed configuration: ordered sections of ordered `key = value` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigDoc {
    sections: Vec<Section>,
}

/// One `[name]` block and the entries that followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    name: String,
    /// `(key, value, line)` with the 1-based line the entry appeared on.
    entries: Vec<(String, String, usize)>,
}

/// Parse a sectioned key-value document.
///
/// Blank lines and lines starting with `#` are ignored. Section headers are
/// `[name]`; every other line must be `key = value`. Keys must be unique
/// within their section and section names unique within the document.
pub fn parse_config(text: &str) -> Result<ConfigDoc> {
    let mut sections: Vec<Section> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let err = |msg: String| Error::ConfigParse { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header".into()))?
                .trim();
            if name.is_empty() {
                return Err(err("empty section name".into()));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(err(format!("duplicate section `[{name}]`")));
            }
            sections.push(Section {
                name: name.to_string(),
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err("expected `key = value` or `[section]`".into()))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        let Some(section) = sections.last_mut() else {
            return Err(err(format!("key `{key}` appears before any [section]")));
        };
        if section.entries.iter().any(|(existing, _, _)| existing == key) {
            return Err(err(format!(
                "duplicate key `{key}` in section `[{}]`",
                section.name
            )));
        }
        section
            .entries
            .push((key.to_string(), value.to_string(), line));
    }
    Ok(ConfigDoc { sections })
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<ConfigDoc> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

impl ConfigDoc {
    /// All sections in document order.
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Look up a section by name.
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Look up a section by name, erroring if it is absent.
    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::MissingConfigSection(name.to_string()))
    }
}

impl Section {
    /// An empty section, for schemas where a section may be omitted entirely
    /// and every key falls back to its default.
    pub fn empty(name: &str) -> Section {
        Section {
            name: name.to_string(),
            entries: Vec::new(),
        }
    }

    /// The name between the brackets.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Raw string value for `key`, if present.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    /// Keys in entry order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    /// Begin strict consumption of this section's keys.
    pub fn reader(&self) -> SectionReader<'_> {
        SectionReader {
            section: self,
            used: BTreeSet::new(),
        }
    }

    fn entry(&self, key: &str) -> Option<(usize, &str, usize)> {
        self.entries
            .iter()
            .enumerate()
            .find(|(_, (k, _, _))| k == key)
            .map(|(i, (_, v, line))| (i, v.as_str(), *line))
    }
}

/// Typed accessor over one [`Section`] that records which keys it consumed.
///
/// Call [`SectionReader::finish`] after reading everything the schema knows
/// about; any leftover key is reported as [`Error::UnknownConfigKey`].
pub struct SectionReader<'a> {
    section: &'a Section,
    used: BTreeSet<usize>,
}

impl<'a> SectionReader<'a> {
    /// The name of the section being read.
    pub fn name(&self) -> &str {
        &self.section.name
    }

    /// Raw string value, marking the key as consumed.
    pub fn optional_str(&mut self, key: &str) -> Option<&'a str> {
        let (index, value, _) = self.section.entry(key)?;
        self.used.insert(index);
        Some(value)
    }

    /// Raw string value that must be present.
    pub fn required_str(&mut self, key: &str) -> Result<&'a str> {
        self.optional_str(key).ok_or_else(|| Error::MissingConfigKey {
            section: self.section.name.clone(),
            key: key.to_string(),
        })
    }

    /// Parse an optional value into `T`, reporting parse failures with the
    /// line the entry appeared on.
    pub fn optional<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((index, value, line)) = self.section.entry(key) else {
            return Ok(None);
        };
        self.used.insert(index);
        let parsed = value.parse::<T>().map_err(|e| Error::ConfigParse {
            line,
            msg: format!("key `{key}`: {e}"),
        })?;
        Ok(Some(parsed))
    }

    /// Parse a required value into `T`.
    pub fn required<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.optional(key)? {
            Some(value) => Ok(value),
            None => Err(Error::MissingConfigKey {
                section: self.section.name.clone(),
                key: key.to_string(),
            }),
        }
    }

    /// Like [`SectionReader::optional`] but substituting a default.
    pub fn or_default<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.optional(key)?.unwrap_or(default))
    }

    /// Fail if any key in the section was never consumed.
    pub fn finish(self) -> Result<()> {
        for (index, (key, _, _)) in self.section.entries.iter().enumerate() {
            if !self.used.contains(&index) {
                return Err(Error::UnknownConfigKey {
                    section: self.section.name.clone(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Comma-separated list of floats, e.g. `5.18, 5.96, 6.31`.
///
/// Exists so [`SectionReader::required`] can parse vector-valued keys through
/// the ordinary `FromStr` path.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err("empty list".to_string());
        }
        trimmed
            .split(',')
            .map(|piece| {
                let piece = piece.trim();
                piece
                    .parse::<f64>()
                    .map_err(|e| format!("`{piece}`: {e}"))
            })
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map(FloatList)
    }
}

impl Display for FloatList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, value) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{value}")?;
        }
        Ok(())
    }
}

/// SHA-256 digest of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Hash a file's contents, returning `(hex digest, length in bytes)`.
pub fn hash_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok((sha256_hex(&bytes), bytes.len() as u64))
}

/// One output file recorded in a [`Manifest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestFile {
    /// File name relative to the run directory.
    pub name: String,
    /// Lowercase hex SHA-256 of the file contents.
    pub sha256: String,
    /// File length in bytes.
    pub bytes: u64,
}

/// Provenance record written next to a run's outputs.
///
/// Rendered in the sectioned config format: a `[run]` section with free-form
/// metadata (tool version, config hash, seed, ...) followed by a `[files]`
/// section with one `name = sha256:<hex>:<bytes>` entry per output file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    /// Ordered `(key, value)` metadata pairs for the `[run]` section.
    pub meta: Vec<(String, String)>,
    /// Output files in the order they were recorded.
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    /// Start a manifest from metadata pairs.
    pub fn new(meta: Vec<(String, String)>) -> Self {
        Manifest {
            meta,
            files: Vec::new(),
        }
    }

    /// Hash `dir/name` and record it under `name`.
    pub fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let (sha256, bytes) = hash_file(&dir.join(name))?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Look up a recorded file by name.
    pub fn file(&self, name: &str) -> Option<&ManifestFile> {
        self.files.iter().find(|f| f.name == name)
    }

    /// Render in the sectioned config format.
    pub fn render(&self) -> String {
        let mut out = String::from("[run]\n");
        for (key, value) in &self.meta {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out.push_str("\n[files]\n");
        for file in &self.files {
            out.push_str(&format!(
                "{} = sha256:{}:{}\n",
                file.name, file.sha256, file.bytes
            ));
        }
        out
    }

    /// Write `manifest.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }

    /// Parse a rendered manifest back.
    pub fn parse(text: &str) -> Result<Manifest> {
        let doc = parse_config(text)?;
        let run = doc.require_section("run")?;
        let meta = run
            .entries
            .iter()
            .map(|(k, v, _)| (k.clone(), v.clone()))
            .collect();
        let files_section = doc.require_section("files")?;
        let mut files = Vec::with_capacity(files_section.entries.len());
        for (name, value, line) in &files_section.entries {
            let err = |msg: String| Error::ConfigParse { line: *line, msg };
            let rest = value.strip_prefix("sha256:").ok_or_else(|| {
                err(format!("file `{name}`: expected `sha256:<hex>:<bytes>`"))
            })?;
            let (sha256, bytes) = rest.split_once(':').ok_or_else(|| {
                err(format!("file `{name}`: expected `sha256:<hex>:<bytes>`"))
            })?;
            if sha256.len() != 64 || !sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(err(format!("file `{name}`: malformed digest")));
            }
            let bytes = bytes
                .parse::<u64>()
                .map_err(|e| err(format!("file `{name}`: byte count: {e}")))?;
            files.push(ManifestFile {
                name: name.clone(),
                sha256: sha256.to_string(),
                bytes,
            });
        }
        Ok(Manifest { meta, files })
    }

    /// Read `manifest.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Manifest::parse(&text)
    }
}

/// A small in-memory CSV table: a header row plus string cells.
///
/// Used by the run-verification path, which compares numeric cells between a
/// freshly produced table and a stored baseline. This reader handles exactly
/// the dialect the exporters in this crate produce: comma separators, no
/// quoting, one header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    /// Column names from the first line.
    pub header: Vec<String>,
    /// Data rows, each with `header.len()` cells.
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parse a cell as `f64`, reporting `(row, column)` on failure.
    pub fn number(&self, row: usize, column: usize) -> Result<f64> {
        let cell = &self.rows[row][column];
        cell.parse::<f64>().map_err(|_| {
            Error::InvalidParameter(format!(
                "cell ({row}, {}) is not numeric: `{cell}`",
                self.header[column]
            ))
        })
    }
}

/// Read a CSV file produced by this crate's exporters.
pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header_line)) = lines.next() else {
        return Err(Error::CsvParse {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file".to_string(),
        });
    };
    let header: Vec<String> = header_line.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (index, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let cells: Vec<String> = raw.split(',').map(str::to_string).collect();
        if cells.len() != header.len() {
            return Err(Error::CsvParse {
                path: path.display().to_string(),
                line: index + 1,
                msg: format!(
                    "expected {} cells, found {}",
                    header.len(),
                    cells.len()
                ),
            });
        }
        rows.push(cells);
    }
    Ok(CsvTable { header, rows })
}
