//! Step traces as JSON lines, one `StepTrace` per line.

use std::io::{BufRead, Write};
use std::path::Path;

use corrguide_core::toydiff::StepTrace;

use crate::error::{Error, Result};

pub fn write_trace(out: &mut impl Write, traces: &[StepTrace]) -> std::io::Result<()> {
    for step in traces {
        serde_json::to_writer(&mut *out, step)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_trace_file(path: &Path, traces: &[StepTrace]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(&mut std::io::BufWriter::new(file), traces).map_err(|e| Error::io(path, e))
}

pub fn read_trace_file(path: &Path) -> Result<Vec<StepTrace>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut traces = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let step = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        traces.push(step);
    }
    Ok(traces)
}
