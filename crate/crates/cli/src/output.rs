use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::Format;
use crate::error::CliError;

/// Extended-real encoding: finite values as JSON numbers, infinities as `"inf"`/`"-inf"`.
pub fn ext(v: f64) -> Value {
    if v.is_finite() {
        serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
    } else if v == f64::INFINITY {
        Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        Value::String("nan".into())
    }
}

pub fn ext_vec(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| ext(x)).collect())
}

/// CSV cell with the same extended-real encoding.
pub fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        "nan".into()
    }
}

pub fn cells(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| cell(x)).collect()
}

/// Output directory plus the enabled formats; files are written one at a time.
pub struct Sink {
    dir: PathBuf,
    formats: BTreeSet<Format>,
    written: Vec<PathBuf>,
    verbose: bool,
}

impl Sink {
    pub fn new(dir: PathBuf, formats: BTreeSet<Format>, verbose: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
        Ok(Sink { dir, formats, written: Vec::new(), verbose })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` when `format` is enabled; the closure renders the content.
    pub fn emit<F>(&mut self, format: Format, name: &str, render: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        if !self.wants(format) {
            return Ok(());
        }
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
        let mut w = BufWriter::new(file);
        render(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path.display(), e))?;
        if self.verbose {
            eprintln!("wrote {}", path.display());
        }
        self.written.push(path);
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        self.emit(Format::Json, name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        self.emit(Format::Csv, name, |w| {
            writeln!(w, "{}", header.join(","))?;
            for r in rows {
                writeln!(w, "{}", r.join(","))?;
            }
            Ok(())
        })
    }
}

/// Writes the diagnostics record for a failed run.
pub fn write_diagnostics(dir: &Path, record: &Value) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("diagnostics.json");
    let mut text = serde_json::to_string_pretty(record).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
