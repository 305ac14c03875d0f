use serde::{Deserialize, Serialize};

use crate::artifact::{check_header, from_json, to_json, MatrixJson, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::model::SystemConfig;

use super::params::{InverseApproxParams, LayerParams, UnfoldedNet, VUpdateParams, Variant};

pub const NET_FORMAT: &str = "taskcomm.unfolded-net";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ApproxJson {
    xi: [MatrixJson; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum VUpdateJson {
    Vanilla { omega: Vec<ApproxJson>, lambda: MatrixJson },
    Mm { upsilon: Vec<Vec<MatrixJson>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerJson {
    theta: ApproxJson,
    phi: ApproxJson,
    psi: ApproxJson,
    v_update: VUpdateJson,
}

/// Dimension header repeated in the document so a reader can validate it
/// without re-deriving shapes from the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DimsJson {
    layers: usize,
    mm_sublayers: usize,
    rx_dim: usize,
    feature_dim: usize,
    whitened_dims: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetJson {
    format: String,
    version: u32,
    variant: Variant,
    dims: DimsJson,
    config: SystemConfig,
    layers: Vec<LayerJson>,
}

fn approx_json(p: &InverseApproxParams) -> ApproxJson {
    ApproxJson { xi: [(&p.xi[0]).into(), (&p.xi[1]).into(), (&p.xi[2]).into()] }
}

fn approx_from(j: &ApproxJson) -> Result<InverseApproxParams> {
    Ok(InverseApproxParams { xi: [j.xi[0].to_matrix()?, j.xi[1].to_matrix()?, j.xi[2].to_matrix()?] })
}

fn dims(net: &UnfoldedNet) -> DimsJson {
    DimsJson {
        layers: net.num_layers(),
        mm_sublayers: net.mm_sublayers,
        rx_dim: net.config.rx_dim(),
        feature_dim: net.config.feature_dim(),
        whitened_dims: (0..net.config.num_devices()).map(|k| super::params::whitened_dim(&net.config, k)).collect(),
    }
}

pub fn net_to_json(net: &UnfoldedNet) -> Result<String> {
    let layers = net
        .layers
        .iter()
        .map(|l| LayerJson {
            theta: approx_json(&l.theta),
            phi: approx_json(&l.phi),
            psi: approx_json(&l.psi),
            v_update: match &l.v_update {
                VUpdateParams::Vanilla { omega, lambda } => {
                    VUpdateJson::Vanilla { omega: omega.iter().map(approx_json).collect(), lambda: lambda.into() }
                }
                VUpdateParams::Mm { upsilon } => {
                    VUpdateJson::Mm { upsilon: upsilon.iter().map(|d| d.iter().map(MatrixJson::from).collect()).collect() }
                }
            },
        })
        .collect();
    to_json(&NetJson {
        format: NET_FORMAT.into(),
        version: FORMAT_VERSION,
        variant: net.variant,
        dims: dims(net),
        config: net.config.clone(),
        layers,
    })
}

pub fn net_from_json(text: &str) -> Result<UnfoldedNet> {
    let doc: NetJson = from_json(text)?;
    check_header(&doc.format, doc.version, NET_FORMAT)?;
    let mut net = UnfoldedNet::blank(doc.variant, &doc.config, doc.layers.len(), doc.dims.mm_sublayers)?;
    if dims(&net) != doc.dims {
        return Err(Error::Artifact("dimension header does not match the stored configuration".into()));
    }
    for (slot, l) in net.layers.iter_mut().zip(&doc.layers) {
        let v_update = match (&l.v_update, doc.variant) {
            (VUpdateJson::Vanilla { omega, lambda }, Variant::DuBca) => {
                VUpdateParams::Vanilla { omega: omega.iter().map(approx_from).collect::<Result<_>>()?, lambda: lambda.to_matrix()? }
            }
            (VUpdateJson::Mm { upsilon }, Variant::DuBcaMm) => VUpdateParams::Mm {
                upsilon: upsilon.iter().map(|d| d.iter().map(MatrixJson::to_matrix).collect::<Result<_>>()).collect::<Result<_>>()?,
            },
            _ => return Err(Error::Artifact("layer kind does not match the network variant".into())),
        };
        let parsed = LayerParams { theta: approx_from(&l.theta)?, phi: approx_from(&l.phi)?, psi: approx_from(&l.psi)?, v_update };
        let shapes = |p: &LayerParams| p.blocks().iter().map(|m| m.shape()).collect::<Vec<_>>();
        if shapes(&parsed) != shapes(slot) {
            return Err(Error::Artifact("parameter shapes do not match the dimension header".into()));
        }
        *slot = parsed;
    }
    Ok(net)
}
