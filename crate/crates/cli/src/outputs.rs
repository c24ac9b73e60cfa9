//! Output writers. Every artifact embeds the config hash and tool version
//! and is written atomically (temp file + rename), so reruns with the same
//! config are byte-identical and concurrent sweeps never interleave.

use crate::config::{CliResult, TOOL_VERSION};
use hoconv_core::formats::write_atomic;
use serde::Serialize;
use std::path::Path;

/// CSV with two leading comment lines (config hash, tool version) and then a
/// header row.
pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(config_hash: &str, header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(&format!("# config_hash={config_hash}\n"));
        buf.push_str(&format!("# tool_version={TOOL_VERSION}\n"));
        buf.push_str(header);
        buf.push('\n');
        CsvWriter { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn raw_line(&mut self, line: &str) {
        self.buf.push_str(line);
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.buf.as_bytes())?;
        Ok(())
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// JSON artifact wrapper carrying the standard metadata.
#[derive(Serialize)]
struct JsonEnvelope<T: Serialize> {
    config_hash: String,
    tool_version: String,
    #[serde(flatten)]
    body: T,
}

pub fn write_json<T: Serialize>(path: &Path, config_hash: &str, body: T) -> CliResult<()> {
    let env = JsonEnvelope {
        config_hash: config_hash.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&env)
        .map_err(|e| crate::config::CliError::Io(format!("json encode: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Square matrix CSV with a label header row and column.
pub fn matrix_csv(
    path: &Path,
    config_hash: &str,
    labels: &[String],
    data: &[f64],
) -> CliResult<()> {
    let n = labels.len();
    let mut w = CsvWriter::new(config_hash, &format!(",{}", labels.join(",")));
    for i in 0..n {
        let mut cells = vec![labels[i].clone()];
        for j in 0..n {
            cells.push(fmt_f64(data[i * n + j]));
        }
        w.row(&cells);
    }
    w.write(path)
}
