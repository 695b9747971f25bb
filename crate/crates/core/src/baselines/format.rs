//! `YNB1` baseline files: magic, u32 header length, JSON header naming the
//! model kind, then an f64 LE payload.
//!
//! Payloads: linear = weights then intercept; tree = pre-order nodes of
//! `[feature or -1, threshold, value, samples, depth]`; forest = trees
//! back to back; dfnn = standardizer means and scales, then the network
//! blocks and optimizer moments.

use super::dfnn::{dfnn_build_with, Dfnn, DfnnConfig};
use super::features::{FeatureMatrix, Standardizer};
use super::forest::RandomForest;
use super::linear::{LinearModel, Penalty};
use super::tree::TreeNode;
use crate::codec::{len_u32, put_f64s, put_u32, read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::model::{adam_header, block_sizes, decode_header, read_graph_payload, write_graph_payload, AdamHeader};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"YNB1";
const VERSION: u32 = 1;
const NODE_WIDTH: usize = 5;

#[derive(Clone, Debug)]
pub enum BaselineModel {
    Linear(LinearModel),
    Tree(TreeNode),
    Forest(RandomForest),
    Dfnn(Dfnn),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Linear {
        format_version: u32,
        features: usize,
        penalty: Penalty,
        lambda: f64,
        sweeps: usize,
    },
    Tree {
        format_version: u32,
        nodes: usize,
    },
    Forest {
        format_version: u32,
        tree_nodes: Vec<usize>,
    },
    Dfnn {
        format_version: u32,
        config: DfnnConfig,
        seed: u64,
        block_sizes: Vec<usize>,
        adam: Option<AdamHeader>,
    },
}

impl BaselineModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BaselineModel::Linear(m) => match m.penalty {
                Penalty::L1 => "lasso",
                Penalty::L2 => "ridge",
            },
            BaselineModel::Tree(_) => "tree",
            BaselineModel::Forest(_) => "forest",
            BaselineModel::Dfnn(_) => "dfnn",
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            BaselineModel::Linear(m) => {
                check_width(m.weights.len(), x)?;
                Ok(m.predict(x))
            }
            BaselineModel::Tree(t) => Ok(t.predict(x)),
            BaselineModel::Forest(f) => Ok(f.predict(x)),
            BaselineModel::Dfnn(d) => d.predict(x),
        }
    }

    pub fn save(&self) -> Result<Vec<u8>> {
        match self {
            BaselineModel::Linear(m) => {
                let header = Header::Linear {
                    format_version: VERSION,
                    features: m.weights.len(),
                    penalty: m.penalty,
                    lambda: m.lambda,
                    sweeps: m.sweeps,
                };
                let mut out = frame(&header)?;
                put_f64s(&mut out, &m.weights);
                put_f64s(&mut out, &[m.intercept]);
                Ok(out)
            }
            BaselineModel::Tree(t) => {
                let mut payload = Vec::new();
                push_nodes(t, &mut payload);
                let mut out = frame(&Header::Tree {
                    format_version: VERSION,
                    nodes: payload.len() / NODE_WIDTH,
                })?;
                put_f64s(&mut out, &payload);
                Ok(out)
            }
            BaselineModel::Forest(f) => {
                let mut payload = Vec::new();
                let mut tree_nodes = Vec::with_capacity(f.trees.len());
                for t in &f.trees {
                    let before = payload.len();
                    push_nodes(t, &mut payload);
                    tree_nodes.push((payload.len() - before) / NODE_WIDTH);
                }
                let mut out = frame(&Header::Forest {
                    format_version: VERSION,
                    tree_nodes,
                })?;
                put_f64s(&mut out, &payload);
                Ok(out)
            }
            BaselineModel::Dfnn(d) => {
                let header = Header::Dfnn {
                    format_version: VERSION,
                    config: d.config.clone(),
                    seed: d.seed,
                    block_sizes: block_sizes(&d.graph),
                    adam: adam_header(&d.graph),
                };
                let mut out = frame(&header)?;
                put_f64s(&mut out, &d.standardizer.mean);
                put_f64s(&mut out, &d.standardizer.scale);
                write_graph_payload(&d.graph, &mut out);
                Ok(out)
            }
        }
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header: Header = decode_header(&mut r, MAGIC)?;
        let version = match &header {
            Header::Linear { format_version, .. }
            | Header::Tree { format_version, .. }
            | Header::Forest { format_version, .. }
            | Header::Dfnn { format_version, .. } => *format_version,
        };
        if version != VERSION {
            return Err(Error::Parse {
                offset: 8,
                message: format!("unsupported baseline file version {version}"),
            });
        }
        let model = match header {
            Header::Linear {
                features,
                penalty,
                lambda,
                sweeps,
                ..
            } => {
                let weights = r.f64s(features, "weights")?;
                let intercept = r.f64s(1, "intercept")?[0];
                BaselineModel::Linear(LinearModel {
                    penalty,
                    lambda,
                    weights,
                    intercept,
                    sweeps,
                })
            }
            Header::Tree { nodes, .. } => BaselineModel::Tree(read_tree(&mut r, nodes)?),
            Header::Forest { tree_nodes, .. } => {
                let trees = tree_nodes
                    .iter()
                    .map(|&n| read_tree(&mut r, n))
                    .collect::<Result<Vec<_>>>()?;
                BaselineModel::Forest(RandomForest { trees })
            }
            Header::Dfnn {
                config,
                seed,
                block_sizes,
                adam,
                ..
            } => {
                let mean = r.f64s(config.features, "feature means")?;
                let scale = r.f64s(config.features, "feature scales")?;
                let mut graph = dfnn_build_with(&config, seed)?;
                read_graph_payload(&mut graph, &mut r, &block_sizes, adam)?;
                BaselineModel::Dfnn(Dfnn {
                    config,
                    seed,
                    standardizer: Standardizer { mean, scale },
                    graph,
                })
            }
        };
        r.finish()?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.save()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::load(&read_file(path)?)
    }
}

fn check_width(expected: usize, x: &FeatureMatrix) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::Dimension(format!("model expects {expected} features, got {}", x.cols())));
    }
    Ok(())
}

fn frame(header: &Header) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, len_u32(json.len(), "header length")?);
    out.extend_from_slice(&json);
    Ok(out)
}

fn push_nodes(node: &TreeNode, out: &mut Vec<f64>) {
    match node {
        TreeNode::Leaf { value, samples, depth } => {
            out.extend([-1.0, 0.0, *value, *samples as f64, *depth as f64]);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            depth,
        } => {
            out.extend([*feature as f64, *threshold, 0.0, 0.0, *depth as f64]);
            push_nodes(left, out);
            push_nodes(right, out);
        }
    }
}

fn read_tree(r: &mut Reader<'_>, nodes: usize) -> Result<TreeNode> {
    let at = r.offset();
    let flat = r.f64s(nodes * NODE_WIDTH, "tree nodes")?;
    let mut pos = 0;
    let tree = build_node(&flat, &mut pos).ok_or_else(|| Error::Parse {
        offset: at,
        message: "malformed tree node list".into(),
    })?;
    if pos != nodes {
        return Err(Error::Parse {
            offset: at,
            message: format!("tree uses {pos} of {nodes} nodes"),
        });
    }
    Ok(tree)
}

fn build_node(flat: &[f64], pos: &mut usize) -> Option<TreeNode> {
    let rec = flat.get(*pos * NODE_WIDTH..(*pos + 1) * NODE_WIDTH)?;
    *pos += 1;
    let depth = rec[4] as usize;
    if rec[0] < 0.0 {
        return Some(TreeNode::Leaf {
            value: rec[2],
            samples: rec[3] as usize,
            depth,
        });
    }
    let left = Box::new(build_node(flat, pos)?);
    let right = Box::new(build_node(flat, pos)?);
    Some(TreeNode::Split {
        feature: rec[0] as usize,
        threshold: rec[1],
        left,
        right,
        depth,
    })
}
