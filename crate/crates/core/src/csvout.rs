//! CSV serialisation with an explicit header, so empty tables still carry
//! their schema.

use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_csv<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}
