//! Slim network file: magic, header length, a JSON header carrying the
//! network config and its provenance, then the parameter blob.

use anyhow::{bail, Context, Result};
use ranp::netgraph::NetConfig;
use ranp::{NetSpec, ParamSet};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"RANPSLM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlimHeader {
    /// Pruning mode that produced the network, `full` if unpruned.
    pub mode: String,
    pub sparsity: f64,
    pub seed: u64,
    pub net: NetConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlimFile {
    pub header: SlimHeader,
    pub spec: NetSpec,
    pub params: ParamSet,
}

pub fn is_slim(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn encode(header: &SlimHeader, params: &ParamSet) -> Vec<u8> {
    let head = serde_json::to_vec(header).expect("header serializes");
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&params.to_blob());
    out
}

pub fn decode(bytes: &[u8]) -> Result<SlimFile> {
    if !is_slim(bytes) || bytes.len() < 16 {
        bail!("not a slim network file");
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).context("truncated slim header")?;
    let header: SlimHeader = serde_json::from_slice(&bytes[16..end]).context("slim header")?;
    let spec = NetSpec::from_config(&header.net)?;
    let params = ParamSet::from_blob(&spec, &bytes[end..])?;
    Ok(SlimFile { header, spec, params })
}
