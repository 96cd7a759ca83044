//! CSV output shared by every report.

use std::io::Write;

use crate::error::Result;

/// First line of every CSV the crate writes.
pub const SCHEMA_LINE: &str = "# mkv-milstein schema v1";

/// A CSV writer that has already emitted the schema line.
pub fn csv_writer<W: Write>(mut w: W) -> Result<csv::Writer<W>> {
    writeln!(w, "{SCHEMA_LINE}")?;
    Ok(csv::WriterBuilder::new().from_writer(w))
}

/// Formats a state vector as `a;b;c`.
pub fn join_vector(x: &[f64]) -> String {
    x.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}
