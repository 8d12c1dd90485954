//! Checkpoint layout: 8-byte magic, little-endian u64 header length, UTF-8
//! JSON header, little-endian u64 parameter count, then the parameters as
//! little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, ScoreNet};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::error::{CoindError, Result};

const MAGIC: &[u8; 8] = b"COINDCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub schedule: ScheduleConfig,
}

pub fn encode(net: &ScoreNet, schedule: &NoiseSchedule) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader {
        architecture: net.architecture().clone(),
        schedule: schedule.config(),
    })?;
    let mut out = Vec::with_capacity(32 + header.len() + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(CoindError::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8], what: &str) -> Result<u64> {
    let raw = take(bytes, 8, what)?;
    Ok(u64::from_le_bytes(raw.try_into().expect("8 bytes")))
}

pub fn decode(mut bytes: &[u8]) -> Result<(ScoreNet, NoiseSchedule)> {
    if take(&mut bytes, 8, "magic")? != MAGIC {
        return Err(CoindError::Checkpoint("bad magic".into()));
    }
    let header_len = take_u64(&mut bytes, "header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut bytes, header_len, "header")?)?;
    let count = take_u64(&mut bytes, "parameter count")? as usize;
    let expected = header.architecture.param_count();
    if count != expected {
        return Err(CoindError::Checkpoint(format!(
            "parameter count {count} does not match architecture ({expected})"
        )));
    }
    let block = take(&mut bytes, count * 8, "parameters")?;
    if !bytes.is_empty() {
        return Err(CoindError::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    let params = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let net = ScoreNet::from_params(header.architecture, params)?;
    Ok((net, header.schedule.build()?))
}

pub fn save(path: &Path, net: &ScoreNet, schedule: &NoiseSchedule) -> Result<()> {
    fs::write(path, encode(net, schedule)?).map_err(|e| CoindError::io(path, e))
}

pub fn load(path: &Path) -> Result<(ScoreNet, NoiseSchedule)> {
    decode(&fs::read(path).map_err(|e| CoindError::io(path, e))?)
}
