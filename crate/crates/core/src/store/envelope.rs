//! JSON documents wrapped as `{format, version, sha256, body}`, where the
//! digest covers the compact serialization of `body`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_bytes, sha256_hex, write_atomic};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const ENVELOPE_VERSION: u32 = 1;
pub const SCHEDULE_FORMAT: &str = "difface.schedule";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format: String,
    version: u32,
    sha256: String,
    body: Value,
}

fn body_digest(body: &Value) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(body)?))
}

pub fn to_bytes<T: Serialize>(format: &str, value: &T) -> Result<Vec<u8>> {
    let body = serde_json::to_value(value)?;
    let env = Envelope {
        format: format.to_string(),
        version: ENVELOPE_VERSION,
        sha256: body_digest(&body)?,
        body,
    };
    let mut out = serde_json::to_vec_pretty(&env)?;
    out.push(b'\n');
    Ok(out)
}

/// Parses an envelope, checks format, version and digest, then decodes the
/// body. `path` only labels errors.
pub fn from_bytes<T: DeserializeOwned>(path: &Path, format: &str, bytes: &[u8]) -> Result<T> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let env: Envelope = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if env.format != format {
        return Err(corrupt(format!("expected format {format:?}, found {:?}", env.format)));
    }
    if env.version != ENVELOPE_VERSION {
        return Err(corrupt(format!("unsupported version {}", env.version)));
    }
    let actual = body_digest(&env.body)?;
    if actual != env.sha256 {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            expected: env.sha256,
            actual,
        });
    }
    serde_json::from_value(env.body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save_json<T: Serialize>(path: &Path, format: &str, value: &T) -> Result<()> {
    write_atomic(path, &to_bytes(format, value)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    from_bytes(path, format, &read_bytes(path)?)
}

pub fn save_schedule(path: &Path, schedule: &NoiseSchedule) -> Result<()> {
    save_json(path, SCHEDULE_FORMAT, schedule)
}

pub fn load_schedule(path: &Path) -> Result<NoiseSchedule> {
    load_json(path, SCHEDULE_FORMAT)
}
