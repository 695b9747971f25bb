//! `YNM1` checkpoint: magic, u32 header length, JSON header, then every
//! block's values (weights, bias or gamma, beta, running mean, running
//! variance) as f64 LE, then the Adam moments if present.

use super::{Variant, YieldNet, YieldNetConfig};
use crate::codec::{len_u32, put_f64s, put_u32, read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, ModelGraph};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"YNM1";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHeader {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: YieldNetConfig,
    variant: Variant,
    seed: u64,
    block_sizes: Vec<usize>,
    adam: Option<AdamHeader>,
}

pub(crate) fn adam_header(graph: &ModelGraph) -> Option<AdamHeader> {
    graph.adam.as_ref().map(|a| AdamHeader {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
    })
}

pub(crate) fn block_sizes(graph: &ModelGraph) -> Vec<usize> {
    graph
        .params()
        .iter()
        .map(|p| p.all_values().iter().map(|s| s.len()).sum())
        .collect()
}

pub(crate) fn write_graph_payload(graph: &ModelGraph, out: &mut Vec<u8>) {
    for p in graph.params() {
        for s in p.all_values() {
            put_f64s(out, s);
        }
    }
    if let Some(a) = &graph.adam {
        for moments in [&a.m, &a.v] {
            for g in moments {
                put_f64s(out, &g.weights);
                put_f64s(out, &g.bias);
            }
        }
    }
}

/// Fills a freshly built graph from a payload written by
/// [`write_graph_payload`].
pub(crate) fn read_graph_payload(
    graph: &mut ModelGraph,
    reader: &mut Reader<'_>,
    sizes: &[usize],
    adam: Option<AdamHeader>,
) -> Result<()> {
    if sizes != block_sizes(graph).as_slice() {
        return reader.err("parameter block sizes do not match the stored architecture");
    }
    for p in graph.params_mut() {
        for s in p.all_values_mut() {
            let v = reader.f64s(s.len(), "parameter values")?;
            s.copy_from_slice(&v);
        }
    }
    graph.adam = match adam {
        None => None,
        Some(h) => {
            let mut state = AdamState::with_hyper(graph.params(), h.lr, h.beta1, h.beta2, h.eps);
            state.step = h.step;
            for moments in [&mut state.m, &mut state.v] {
                for g in moments.iter_mut() {
                    g.weights = reader.f64s(g.weights.len(), "optimizer moments")?;
                    g.bias = reader.f64s(g.bias.len(), "optimizer moments")?;
                }
            }
            Some(state)
        }
    };
    Ok(())
}

pub(crate) fn encode(magic: &[u8; 4], header: &impl Serialize, graph: &ModelGraph) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * block_sizes(graph).iter().sum::<usize>());
    out.extend_from_slice(magic);
    put_u32(&mut out, len_u32(json.len(), "header length")?);
    out.extend_from_slice(&json);
    write_graph_payload(graph, &mut out);
    Ok(out)
}

pub(crate) fn decode_header<'a, H: Deserialize<'a>>(reader: &mut Reader<'a>, magic: &[u8; 4]) -> Result<H> {
    reader.magic(magic)?;
    let len = reader.u32("header length")? as usize;
    let at = reader.offset();
    let raw = reader.take(len, "header")?;
    serde_json::from_slice(raw).map_err(|e| Error::Parse {
        offset: at,
        message: format!("bad header: {e}"),
    })
}

/// Serializes weights, running statistics and optimizer state.
pub fn save_yieldnet(model: &YieldNet) -> Result<Vec<u8>> {
    let header = Header {
        format_version: VERSION,
        config: model.config.clone(),
        variant: model.variant,
        seed: model.seed,
        block_sizes: block_sizes(&model.graph),
        adam: adam_header(&model.graph),
    };
    encode(MAGIC, &header, &model.graph)
}

pub fn load_yieldnet(bytes: &[u8]) -> Result<YieldNet> {
    let mut reader = Reader::new(bytes);
    let header: Header = decode_header(&mut reader, MAGIC)?;
    if header.format_version != VERSION {
        return Err(Error::Parse {
            offset: 8,
            message: format!("unsupported checkpoint version {}", header.format_version),
        });
    }
    let mut model = YieldNet::build(&header.config, header.variant, header.seed)?;
    read_graph_payload(&mut model.graph, &mut reader, &header.block_sizes, header.adam)?;
    reader.finish()?;
    Ok(model)
}

pub fn write_yieldnet(model: &YieldNet, path: &Path) -> Result<()> {
    write_file(path, &save_yieldnet(model)?)
}

pub fn read_yieldnet(path: &Path) -> Result<YieldNet> {
    load_yieldnet(&read_file(path)?)
}
