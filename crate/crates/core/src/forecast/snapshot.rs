//! Versioned binary model snapshots.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Ensemble, ForecastError};

const MAGIC: [u8; 4] = *b"HPWF";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    magic: [u8; 4],
    version: u32,
    ensemble: Ensemble,
}

pub fn save<W: Write>(ensemble: &Ensemble, writer: W) -> Result<(), ForecastError> {
    let env = Envelope { magic: MAGIC, version: SNAPSHOT_VERSION, ensemble: ensemble.clone() };
    bincode::serialize_into(writer, &env).map_err(|e| ForecastError::Snapshot(e.to_string()))
}

pub fn load<R: Read>(reader: R) -> Result<Ensemble, ForecastError> {
    let env: Envelope = bincode::deserialize_from(reader).map_err(|e| ForecastError::Snapshot(e.to_string()))?;
    if env.magic != MAGIC {
        return Err(ForecastError::Snapshot("not a forecast snapshot".into()));
    }
    if env.version != SNAPSHOT_VERSION {
        return Err(ForecastError::Snapshot(format!(
            "snapshot version {} is not supported (expected {SNAPSHOT_VERSION})",
            env.version
        )));
    }
    Ok(env.ensemble)
}
