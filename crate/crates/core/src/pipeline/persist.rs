use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::FittedModel;

/// Version written into and required from model files.
pub const SCHEMA_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &FittedModel, mut sink: W) -> Result<()> {
    model.validate()?;
    serde_json::to_writer_pretty(&mut sink, model)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(source: R) -> Result<FittedModel> {
    let value: serde_json::Value = serde_json::from_reader(source)?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::Schema(format!(
            "unsupported schema_version {version}; this build reads version {SCHEMA_VERSION}"
        )));
    }
    let model: FittedModel = serde_json::from_value(value)?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    read_model(BufReader::new(File::open(path)?))
}
