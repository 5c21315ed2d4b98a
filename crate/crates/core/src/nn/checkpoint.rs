use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::train::TrainedMlp;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A model type that can be stored in the shared checkpoint envelope.
pub trait CheckpointKind: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Shape and finiteness checks run after loading.
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

impl CheckpointKind for TrainedMlp {
    const KIND: &'static str = "mlp";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub kind: String,
    pub model: T,
}

pub fn write_checkpoint<T: CheckpointKind, W: Write>(model: &T, writer: W) -> Result<()> {
    let envelope = Checkpoint {
        version: CHECKPOINT_VERSION,
        kind: T::KIND.to_string(),
        model,
    };
    serde_json::to_writer(writer, &envelope)?;
    Ok(())
}

pub fn read_checkpoint<T: CheckpointKind, R: Read>(reader: R) -> Result<T> {
    let envelope: Checkpoint<T> = serde_json::from_reader(reader)?;
    if envelope.version != CHECKPOINT_VERSION {
        return Err(Error::Contract(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            envelope.version
        )));
    }
    if envelope.kind != T::KIND {
        return Err(Error::Contract(format!(
            "checkpoint holds a {} model, expected {}",
            envelope.kind,
            T::KIND
        )));
    }
    envelope.model.check()?;
    Ok(envelope.model)
}

pub fn save_checkpoint<T: CheckpointKind>(model: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: CheckpointKind>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
