//! Self-describing binary checkpoints.
//!
//! Layout: the magic `CGGCKPT\0`, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header, then every parameter
//! array as raw little-endian f64 in header order. The header carries the
//! model config, normalizer statistics, sensor graph and the array manifest,
//! so a checkpoint restores a usable model with nothing else on hand.
//! Serialization is canonical: the same model always produces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::neuralcore::model::{array_specs, ModelConfig, ModelParams};
use crate::preprocess::{NormStats, SensorGraph};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CGGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    model: ModelConfig,
    norm: NormStats,
    graph: SensorGraph,
    arrays: Vec<ArrayInfo>,
}

/// Everything a checkpoint restores.
pub struct Checkpoint {
    pub params: ModelParams,
    pub norm: NormStats,
    pub graph: SensorGraph,
}

// ── Writing ─────────────────────────────────────────────────────────────────

pub fn checkpoint_bytes(
    params: &ModelParams,
    norm: &NormStats,
    graph: &SensorGraph,
) -> Result<Vec<u8>> {
    norm.validate()?;
    let arrays: Vec<ArrayInfo> = array_specs(&params.config)
        .into_iter()
        .map(|(name, shape)| ArrayInfo { name, shape })
        .collect();
    let header = Header {
        dtype: "f64le".into(),
        model: params.config.clone(),
        norm: norm.clone(),
        graph: graph.clone(),
        arrays,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;

    let mut out = Vec::with_capacity(header_json.len() + 8 * params.param_count() + 20);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    params.for_each_array(|_, a| {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    norm: &NormStats,
    graph: &SensorGraph,
) -> Result<()> {
    let bytes = checkpoint_bytes(params, norm, graph)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ── Reading ─────────────────────────────────────────────────────────────────

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Decodes and validates a checkpoint from raw bytes. Rejects, rather than
/// panics on, any malformed input: wrong magic, unsupported version, oversold
/// lengths, mismatched array manifests, truncated or trailing payload, and
/// non-finite parameters.
pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 {
        return Err(bad("file shorter than the fixed header"));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic; not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let rest = &bytes[20..];
    if header_len > rest.len() as u64 {
        return Err(bad("header length exceeds file size"));
    }
    let (header_bytes, payload) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| bad(format!("invalid header: {e}")))?;
    if header.dtype != "f64le" {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }

    let mut params = ModelParams::zeros(&header.model)?;
    header.norm.validate()?;
    if header.graph.n_nodes != header.model.n_nodes {
        return Err(bad(format!(
            "graph has {} nodes but the model expects {}",
            header.graph.n_nodes, header.model.n_nodes
        )));
    }

    let expected = array_specs(&header.model);
    if header.arrays.len() != expected.len() {
        return Err(bad(format!(
            "array manifest has {} entries, model needs {}",
            header.arrays.len(),
            expected.len()
        )));
    }
    let mut total: usize = 0;
    for (info, (name, shape)) in header.arrays.iter().zip(&expected) {
        if &info.name != name || &info.shape != shape {
            return Err(bad(format!(
                "array {:?} {:?} does not match expected {:?} {:?}",
                info.name, info.shape, name, shape
            )));
        }
        let elems = info
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("array {:?} shape overflows", info.name)))?;
        total = total
            .checked_add(elems)
            .ok_or_else(|| bad("array manifest overflows".to_string()))?;
    }
    let want = total
        .checked_mul(8)
        .ok_or_else(|| bad("payload size overflows".to_string()))?;
    if payload.len() != want {
        return Err(bad(format!(
            "payload holds {} bytes, manifest promises {want}",
            payload.len()
        )));
    }

    let mut pos = 0;
    let mut corrupt = None;
    params.for_each_array_mut(|name, a| {
        for slot in a.iter_mut() {
            let v = f64::from_le_bytes(payload[pos..pos + 8].try_into().unwrap());
            if !v.is_finite() && corrupt.is_none() {
                corrupt = Some(format!("non-finite value in array {name:?}"));
            }
            *slot = v;
            pos += 8;
        }
    });
    if let Some(msg) = corrupt {
        return Err(bad(msg));
    }
    Ok(Checkpoint { params, norm: header.norm, graph: header.graph })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::model::ModelConfig;
    use crate::preprocess::default_sensor_graph;
    use crate::preprocess::SensorGraph;

    fn fixture() -> (ModelParams, NormStats, SensorGraph) {
        let config = ModelConfig {
            n_nodes: 8,
            seq_len: 20,
            kernel: 3,
            conv_channels: vec![4, 4],
            gru_hidden: 6,
            gru_layers: 2,
            gat_hidden: 5,
            gat_layers: 2,
            dropout: 0.2,
            leaky_slope: 0.2,
        };
        let params = ModelParams::init(&config, 99).unwrap();
        let norm = NormStats {
            min: vec![0.0; 16],
            max: (1..=16).map(|v| v as f64).collect(),
            fitted_on: "train".into(),
        };
        (params, norm, default_sensor_graph())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (params, norm, graph) = fixture();
        let bytes = checkpoint_bytes(&params, &norm, &graph).unwrap();
        let ck = load_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(ck.norm, norm);
        assert_eq!(ck.graph, graph);
        assert_eq!(ck.params.config, params.config);
        let mut original = Vec::new();
        params.for_each_array(|_, a| original.push(a.to_vec()));
        let mut idx = 0;
        ck.params.for_each_array(|name, a| {
            for (x, y) in a.iter().zip(&original[idx]) {
                assert_eq!(x.to_bits(), y.to_bits(), "array {name} changed");
            }
            idx += 1;
        });
    }

    #[test]
    fn serialization_is_canonical() {
        let (params, norm, graph) = fixture();
        let a = checkpoint_bytes(&params, &norm, &graph).unwrap();
        let b = checkpoint_bytes(&params, &norm, &graph).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip() {
        let (params, norm, graph) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cgg");
        save_checkpoint(&path, &params, &norm, &graph).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, params);
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        let (params, norm, graph) = fixture();
        let bytes = checkpoint_bytes(&params, &norm, &graph).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(load_checkpoint_bytes(&bad_magic).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(load_checkpoint_bytes(&bad_version).is_err());
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let (params, norm, graph) = fixture();
        let bytes = checkpoint_bytes(&params, &norm, &graph).unwrap();
        for cut in [0, 5, 19, 25, bytes.len() / 2, bytes.len() - 1] {
            assert!(load_checkpoint_bytes(&bytes[..cut]).is_err(), "cut at {cut} passed");
        }
    }

    #[test]
    fn rejects_trailing_garbage_and_oversold_header() {
        let (params, norm, graph) = fixture();
        let mut bytes = checkpoint_bytes(&params, &norm, &graph).unwrap();
        bytes.push(0);
        assert!(load_checkpoint_bytes(&bytes).is_err());
        let mut oversold = checkpoint_bytes(&params, &norm, &graph).unwrap();
        oversold[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(load_checkpoint_bytes(&oversold).is_err());
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let (mut params, norm, graph) = fixture();
        params.head.weight[0] = f64::NAN;
        let bytes = checkpoint_bytes(&params, &norm, &graph).unwrap();
        assert!(load_checkpoint_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_mismatched_graph_size() {
        let (params, norm, _) = fixture();
        let small = SensorGraph::from_edges(3, vec![(0, 1)]).unwrap();
        let bytes = checkpoint_bytes(&params, &norm, &small).unwrap();
        assert!(load_checkpoint_bytes(&bytes).is_err());
    }
}
