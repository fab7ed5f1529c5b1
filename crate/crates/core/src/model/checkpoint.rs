//! Generator weight files.
//!
//! ```text
//! TFORMER-CHECKPOINT 1\n
//! key=value\n            (one line per config field)
//! params=<tensor count>\n
//! elements=<total f64 count>\n
//! end\n
//! <elements × f64 little-endian, in registration order>
//! <SHA-256 of every preceding byte, 32 bytes>
//! ```

use super::{NormKind, TFormerConfig, TFormerModel, STAGES};
use crate::attention::TaylorMode;
use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::rng::Rng;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

const MAGIC: &str = "TFORMER-CHECKPOINT 1";
const DIGEST_LEN: usize = 32;

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn header(config: &TFormerConfig, tensors: usize, elements: usize) -> String {
    let mut h = String::new();
    let mut line = |k: &str, v: String| writeln!(h, "{k}={v}").expect("writing to a String");
    line("base_channels", config.base_channels.to_string());
    line("block_counts", join(&config.block_counts));
    line("heads", join(&config.heads));
    line("in_channels", config.in_channels.to_string());
    line("out_channels", config.out_channels.to_string());
    line("taylor_mode", config.taylor_mode.to_string());
    line("gated", config.gated.to_string());
    line("norm", config.norm.to_string());
    line("ffn_expansion", config.ffn_expansion.to_string());
    line("normalize_qk", config.normalize_qk.to_string());
    line("divide", config.divide.to_string());
    line("attention_eps", config.attention_eps.to_string());
    line("compose_output", config.compose_output.to_string());
    line("params", tensors.to_string());
    line("elements", elements.to_string());
    format!("{MAGIC}\n{h}end\n")
}

/// Serializes the model's configuration and weights.
pub fn write_checkpoint(model: &TFormerModel, store: &ParamStore) -> Vec<u8> {
    let ids = model.param_ids();
    let elements = store.numel(&ids);
    let mut bytes = header(&model.config, ids.len(), elements).into_bytes();
    bytes.reserve(elements * 8 + DIGEST_LEN);
    for id in ids {
        for v in store.value(id).data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    bytes
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(offset: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| parse_err(offset, format!("bad value {v:?} for {key}")))
}

fn parse_list(offset: usize, key: &str, v: &str) -> Result<[usize; STAGES]> {
    let items: Vec<usize> = v.split(',').map(|x| parse_value(offset, key, x)).collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| parse_err(offset, format!("{key} needs {STAGES} entries")))
}

/// Rebuilds a model and its weights from checkpoint bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(TFormerModel, ParamStore)> {
    if bytes.len() < DIGEST_LEN {
        return Err(parse_err(bytes.len(), "file shorter than its checksum"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut config = TFormerConfig::default();
    let mut counts: (Option<usize>, Option<usize>) = (None, None);
    let mut offset = 0;
    let mut first = true;
    loop {
        let rest = &body[offset..];
        let Some(len) = rest.iter().position(|&b| b == b'\n') else {
            return Err(parse_err(offset, "unterminated header"));
        };
        let line = std::str::from_utf8(&rest[..len]).map_err(|_| parse_err(offset, "header is not UTF-8"))?;
        let at = offset;
        offset += len + 1;
        if first {
            if line != MAGIC {
                return Err(parse_err(0, "not a checkpoint file"));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        let (key, v) = line.split_once('=').ok_or_else(|| parse_err(at, format!("expected key=value, got {line:?}")))?;
        match key {
            "base_channels" => config.base_channels = parse_value(at, key, v)?,
            "block_counts" => config.block_counts = parse_list(at, key, v)?,
            "heads" => config.heads = parse_list(at, key, v)?,
            "in_channels" => config.in_channels = parse_value(at, key, v)?,
            "out_channels" => config.out_channels = parse_value(at, key, v)?,
            "taylor_mode" => config.taylor_mode = parse_value::<TaylorMode>(at, key, v)?,
            "gated" => config.gated = parse_value(at, key, v)?,
            "norm" => config.norm = parse_value::<NormKind>(at, key, v)?,
            "ffn_expansion" => config.ffn_expansion = parse_value(at, key, v)?,
            "normalize_qk" => config.normalize_qk = parse_value(at, key, v)?,
            "divide" => config.divide = parse_value(at, key, v)?,
            "attention_eps" => config.attention_eps = parse_value(at, key, v)?,
            "compose_output" => config.compose_output = parse_value(at, key, v)?,
            "params" => counts.0 = Some(parse_value(at, key, v)?),
            "elements" => counts.1 = Some(parse_value(at, key, v)?),
            _ => return Err(parse_err(at, format!("unknown key {key:?}"))),
        }
    }

    let mut store = ParamStore::new();
    let model = TFormerModel::new(config, &mut store, &mut Rng::new(0))?;
    let ids = model.param_ids();
    let elements = store.numel(&ids);
    if counts != (Some(ids.len()), Some(elements)) {
        return Err(parse_err(
            offset,
            format!(
                "header declares {:?} tensors / {:?} elements, config implies {} / {elements}",
                counts.0,
                counts.1,
                ids.len()
            ),
        ));
    }
    let payload = &body[offset..];
    if payload.len() != elements * 8 {
        return Err(parse_err(
            offset + payload.len().min(elements * 8),
            format!("expected {} payload bytes, found {}", elements * 8, payload.len()),
        ));
    }
    let mut chunks = payload.chunks_exact(8);
    for id in ids {
        for slot in store.get_mut(id).value.data_mut() {
            let chunk = chunks.next().expect("length checked above");
            *slot = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok((model, store))
}

pub fn save_checkpoint(path: &Path, model: &TFormerModel, store: &ParamStore) -> Result<()> {
    std::fs::write(path, write_checkpoint(model, store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TFormerModel, ParamStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
