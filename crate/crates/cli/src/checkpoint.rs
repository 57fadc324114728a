//! Binary agent checkpoints. Layout:
//!
//! ```text
//! magic "QRCK" | version u32 LE | header_len u64 LE | header JSON
//! | value_count u64 LE | values f64 LE...
//! ```
//!
//! The header records network shape and training hyperstate; the payload is
//! online params, target params, then optimizer square averages, each
//! `param_count` long. Loading rejects wrong magic, wrong version, header or
//! payload length mismatches, and trailing bytes, so a truncated or corrupt
//! file never half-loads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qratio_core::dqn::{AgentState, LossKind};
use qratio_core::nn::{blocks_from_flat, blocks_to_flat, Network, NetworkSpec, RMSPropState};

use crate::{outputs, CliError};

const MAGIC: &[u8; 4] = b"QRCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    learn_steps_done: u64,
    target_sync_period: u64,
    discount: f64,
    loss: LossKind,
    smoothing: f64,
    divisor_epsilon: f64,
    param_count: usize,
}

fn integrity(msg: impl Into<String>) -> CliError {
    CliError::Io(format!("checkpoint integrity: {}", msg.into()))
}

pub fn to_bytes(agent: &AgentState) -> Result<Vec<u8>, CliError> {
    let header = Header {
        spec: agent.online.spec().clone(),
        learn_steps_done: agent.learn_steps_done,
        target_sync_period: agent.target_sync_period,
        discount: agent.discount,
        loss: agent.loss,
        smoothing: agent.optimizer.smoothing,
        divisor_epsilon: agent.optimizer.divisor_epsilon,
        param_count: agent.online.param_count(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CliError::Io(format!("encoding checkpoint header: {e}")))?;

    let mut values = agent.online.flat_params();
    values.extend(agent.target.flat_params());
    values.extend(blocks_to_flat(&agent.optimizer.square_avg));

    let mut bytes = Vec::with_capacity(4 + 4 + 8 + header_json.len() + 8 + values.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<AgentState, CliError> {
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize, what: &str| -> Result<&[u8], CliError> {
        let end = cursor
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| integrity(format!("truncated at {what}")))?;
        let slice = &bytes[*cursor..end];
        *cursor = end;
        Ok(slice)
    };

    if take(&mut cursor, 4, "magic")? != MAGIC {
        return Err(integrity("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(integrity(format!("unsupported version {version}")));
    }
    let header_len =
        u64::from_le_bytes(take(&mut cursor, 8, "header length")?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(&mut cursor, header_len, "header")?)
        .map_err(|e| integrity(format!("header: {e}")))?;

    header.spec.validate().map_err(crate::config_err)?;
    if header.spec.param_count() != header.param_count {
        return Err(integrity("param count disagrees with network shape"));
    }
    let value_count =
        u64::from_le_bytes(take(&mut cursor, 8, "value count")?.try_into().unwrap()) as usize;
    if value_count != 3 * header.param_count {
        return Err(integrity("payload count disagrees with header"));
    }
    let payload = take(&mut cursor, value_count * 8, "payload")?;
    if cursor != bytes.len() {
        return Err(integrity("trailing bytes"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let n = header.param_count;
    let mut online = Network::init(&header.spec, 0).map_err(crate::config_err)?;
    online
        .set_flat_params(&values[..n])
        .map_err(crate::config_err)?;
    let mut target = online.clone();
    target
        .set_flat_params(&values[n..2 * n])
        .map_err(crate::config_err)?;
    let mut optimizer = RMSPropState::new(&online, header.smoothing, header.divisor_epsilon);
    blocks_from_flat(&mut optimizer.square_avg, &values[2 * n..]).map_err(crate::config_err)?;

    Ok(AgentState {
        online,
        target,
        optimizer,
        learn_steps_done: header.learn_steps_done,
        target_sync_period: header.target_sync_period,
        discount: header.discount,
        loss: header.loss,
    })
}

pub fn save(path: &Path, agent: &AgentState) -> Result<(), CliError> {
    outputs::atomic_write(path, &to_bytes(agent)?)
}

pub fn load(path: &Path) -> Result<AgentState, CliError> {
    let bytes =
        fs::read(path).map_err(|e| crate::io_err(&format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}
