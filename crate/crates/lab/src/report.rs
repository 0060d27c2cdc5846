//! Reports, CSV tables, site-field dumps and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, Format};
use crate::LabError;

/// Formats a float so that it parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// A named CSV block. Cells are stored as text so the CSV body is fixed
/// at construction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Numeric column; unparsable cells become NaN.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        Some(self.column(name)?.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn to_csv(&self) -> Result<String, LabError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Header line of a site-field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    pub n: usize,
    pub dtype: String,
    pub order: String,
    /// `"torus"`, or `"box"` for a box of side `n = 2m+1` centred at the origin.
    pub domain: String,
}

/// A grid snapshot: JSON header line, then raw little-endian `f64`s.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub name: String,
    pub header: FieldHeader,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn new(name: &str, domain: &str, d: usize, n: usize, values: Vec<f64>) -> Self {
        let header = FieldHeader {
            d,
            n,
            dtype: "f64".into(),
            order: "row-major, axis 0 slowest".into(),
            domain: domain.into(),
        };
        FieldDump { name: name.into(), header, values }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.reserve(8 * self.values.len());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(name: &str, bytes: &[u8]) -> Result<Self, LabError> {
        let bad = |reason: &str| LabError::Format(format!("field dump `{name}`: {reason}"));
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no header line"))?;
        let header: FieldHeader =
            serde_json::from_slice(&bytes[..split]).map_err(|e| bad(&e.to_string()))?;
        let body = &bytes[split + 1..];
        let expected = header.n.checked_pow(header.d as u32).ok_or_else(|| bad("size overflow"))?;
        if header.dtype != "f64" || body.len() != 8 * expected {
            return Err(bad(&format!("expected {expected} f64 values, body has {} bytes", body.len())));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FieldDump { name: name.into(), header, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: ExperimentConfig) -> Self {
        Manifest { tool: "sandpile".into(), version: env!("CARGO_PKG_VERSION").into(), config }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub wall_time_s: f64,
    pub fields: Vec<FieldDump>,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        ExperimentReport {
            manifest: Manifest::new(config),
            tables: Vec::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            wall_time_s: 0.0,
            fields: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    /// Records a float, mapping non-finite values to `null`.
    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, serde_json::Number::from_f64(value).map_or(Value::Null, Value::Number));
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Summary document: scalars, checks and timing.
    pub fn summary_json(&self) -> Value {
        serde_json::json!({
            "command": self.manifest.config.command.name(),
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed(),
            "wall_time_s": self.wall_time_s,
        })
    }

    /// Everything except the binary fields, as one JSON document.
    pub fn to_json(&self) -> Value {
        let tables: BTreeMap<&str, Value> = self
            .tables
            .iter()
            .map(|t| {
                let rows: Vec<Value> = t
                    .rows
                    .iter()
                    .map(|r| Value::Object(t.header.iter().cloned().zip(r.iter().map(|c| cell_value(c))).collect()))
                    .collect();
                (t.name.as_str(), Value::Array(rows))
            })
            .collect();
        let mut doc = self.summary_json();
        doc["manifest"] = serde_json::to_value(&self.manifest).expect("manifest serializes");
        doc["tables"] = serde_json::to_value(tables).expect("tables serialize");
        doc
    }

    /// Writes `manifest.json`, `summary.json`, one file per table and one
    /// `.field` per dump into `dir`, each atomically.
    pub fn write_dir(&self, dir: &Path, format: Format) -> Result<(), LabError> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::Io { path: dir.into(), source: e })?;
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        write_atomic(&dir.join("manifest.json"), manifest.as_bytes())?;
        match format {
            Format::Csv => {
                for t in &self.tables {
                    write_atomic(&dir.join(format!("{}.csv", t.name)), t.to_csv()?.as_bytes())?;
                }
                let summary = serde_json::to_string_pretty(&self.summary_json())? + "\n";
                write_atomic(&dir.join("summary.json"), summary.as_bytes())?;
            }
            Format::Json => {
                let doc = serde_json::to_string_pretty(&self.to_json())? + "\n";
                write_atomic(&dir.join("report.json"), doc.as_bytes())?;
            }
        }
        for f in &self.fields {
            write_atomic(&dir.join(format!("{}.field", f.name)), &f.to_bytes())?;
        }
        Ok(())
    }

    /// Writes the report to `out`: tables as CSV blocks (each preceded by a
    /// `# name` line when there are several) or one JSON document.
    pub fn write_stream(&self, out: &mut impl Write, format: Format) -> Result<(), LabError> {
        match format {
            Format::Csv => {
                let many = self.tables.len() > 1;
                for (i, t) in self.tables.iter().enumerate() {
                    if many {
                        if i > 0 {
                            writeln!(out)?;
                        }
                        writeln!(out, "# {}", t.name)?;
                    }
                    out.write_all(t.to_csv()?.as_bytes())?;
                }
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.to_json())?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn cell_value(cell: &str) -> Value {
    if let Ok(i) = cell.parse::<i64>() {
        return Value::from(i);
    }
    match cell.parse::<f64>() {
        Ok(x) => serde_json::Number::from_f64(x).map_or(Value::String(cell.into()), Value::Number),
        Err(_) => Value::String(cell.into()),
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| LabError::Io { path: path.into(), source: e };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_newlines_and_round_trip_floats() {
        let mut t = Table::new("demo", &["n", "x"]);
        t.push(vec!["8".into(), num(0.1 + 0.2)]);
        t.push(vec!["16".into(), num(1e-300)]);
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "n,x\n8,0.30000000000000004\n16,1e-300\n");
        assert_eq!(t.floats("x").unwrap(), vec![0.1 + 0.2, 1e-300]);
    }

    #[test]
    fn field_dump_round_trip() {
        let f = FieldDump::new("g", "torus", 2, 3, (0..9).map(|i| i as f64 * 0.5 - 1.0).collect());
        let bytes = f.to_bytes();
        let head = std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).unwrap();
        assert!(head.contains("\"dtype\":\"f64\"") && head.contains("axis 0 slowest"));
        assert_eq!(bytes.len(), head.len() + 1 + 72);
        assert_eq!(FieldDump::from_bytes("g", &bytes).unwrap(), f);
        assert!(FieldDump::from_bytes("g", &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"first\n").unwrap();
        write_atomic(&path, b"second\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second\n");
        // no stray temporaries left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
