use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{BackboneConfig, GraphParam, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RWCKPT01";

/// Model weights plus, optionally, the learned structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub backbone: BackboneConfig,
    pub params: ModelParams,
    pub graph: Option<GraphParam>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    seed: u64,
    arrays: Vec<(String, Vec<usize>)>,
    /// Number of leading arrays that are model parameters.
    n_params: usize,
    graph_kind: Option<String>,
    samples: Option<usize>,
}

/// Layout: magic, u64 LE header length, JSON header, then every array as
/// little-endian f64 in header order.
pub fn save_checkpoint(ck: &Checkpoint, mut w: impl Write) -> Result<()> {
    let mut arrays: Vec<(String, &Tensor)> = ck
        .params
        .names
        .iter()
        .cloned()
        .zip(ck.params.tensors.iter())
        .collect();
    let n_params = arrays.len();
    let (graph_kind, samples) = match &ck.graph {
        None => (None, None),
        Some(GraphParam::SoftmaxReweight { a_init, w_phi }) => {
            arrays.push(("graph.a_init".into(), a_init));
            arrays.push(("graph.w_phi".into(), w_phi));
            (Some("softmax".to_string()), None)
        }
        Some(GraphParam::Bernoulli { theta, samples }) => {
            arrays.push(("graph.theta".into(), theta));
            (Some("bernoulli".to_string()), Some(*samples))
        }
    };
    let header = Header {
        backbone: ck.backbone.clone(),
        seed: ck.params.seed,
        arrays: arrays.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
        n_params,
        graph_kind,
        samples,
    };
    let hj = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(hj.len() as u64).to_le_bytes())?;
    w.write_all(&hj)?;
    for (_, t) in arrays {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument(format!(
            "not a checkpoint (magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut hj = vec![0u8; len];
    r.read_exact(&mut hj)?;
    let header: Header = serde_json::from_slice(&hj)?;
    let mut tensors = Vec::new();
    for (_, shape) in &header.arrays {
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    let mut rest = tensors.split_off(header.n_params);
    let names = header.arrays[..header.n_params].iter().map(|(n, _)| n.clone()).collect();
    let expected: Vec<_> = header.backbone.param_shapes();
    if expected.len() != tensors.len()
        || expected.iter().zip(&tensors).any(|((_, s), t)| s.as_slice() != t.shape())
    {
        return Err(Error::InvalidArgument("checkpoint arrays do not match backbone".into()));
    }
    let graph = match header.graph_kind.as_deref() {
        None => None,
        Some("softmax") if rest.len() == 2 => {
            let w_phi = rest.pop().expect("two arrays");
            let a_init = rest.pop().expect("two arrays");
            Some(GraphParam::SoftmaxReweight { a_init, w_phi })
        }
        Some("bernoulli") if rest.len() == 1 => Some(GraphParam::Bernoulli {
            theta: rest.pop().expect("one array"),
            samples: header.samples.unwrap_or(1),
        }),
        Some(k) => return Err(Error::InvalidArgument(format!("bad graph section {:?}", k))),
    };
    Ok(Checkpoint {
        backbone: header.backbone,
        params: ModelParams {
            names,
            tensors,
            seed: header.seed,
        },
        graph,
    })
}
