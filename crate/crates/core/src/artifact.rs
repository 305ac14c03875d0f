//! Versioned JSON documents for statistics, channel states and matrices.
//!
//! Complex numbers are `[re, im]` pairs; matrices are stored row-major with
//! an explicit `rows`/`cols` header.

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelState, GmModel, HermitianPsd};
use crate::numerics::{c, CMatrix, C64};

pub const FORMAT_VERSION: u32 = 1;
pub const GM_FORMAT: &str = "taskcomm.gm-model";
pub const CHANNEL_FORMAT: &str = "taskcomm.channel-state";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Artifact(format!("matrix header says {}x{} but holds {} entries", self.rows, self.cols, self.data.len())));
        }
        if self.data.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix artifact"));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c(re, im)
        }))
    }
}

pub fn complex_to_json(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn complex_from_json(z: [f64; 2]) -> C64 {
    c(z[0], z[1])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmModelDoc {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub classes: usize,
    pub priors: Vec<f64>,
    pub class_covs: Vec<MatrixJson>,
}

impl From<&GmModel> for GmModelDoc {
    fn from(gm: &GmModel) -> Self {
        Self {
            format: GM_FORMAT.into(),
            version: FORMAT_VERSION,
            dim: gm.dim(),
            classes: gm.num_classes(),
            priors: gm.priors().to_vec(),
            class_covs: gm.class_covs().iter().map(MatrixJson::from).collect(),
        }
    }
}

impl GmModelDoc {
    pub fn into_model(self) -> Result<GmModel> {
        check_header(&self.format, self.version, GM_FORMAT)?;
        if self.class_covs.len() != self.classes || self.priors.len() != self.classes {
            return Err(Error::Artifact("class count does not match header".into()));
        }
        let covs = self
            .class_covs
            .iter()
            .map(|m| {
                let m = m.to_matrix()?;
                if m.nrows() != self.dim || m.ncols() != self.dim {
                    return Err(Error::Artifact(format!("covariance is not {0}x{0}", self.dim)));
                }
                HermitianPsd::new(m)
            })
            .collect::<Result<Vec<_>>>()?;
        GmModel::new(self.priors, covs)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStateDoc {
    pub format: String,
    pub version: u32,
    pub sigma: f64,
    pub blocks: Vec<MatrixJson>,
}

impl From<&ChannelState> for ChannelStateDoc {
    fn from(ch: &ChannelState) -> Self {
        Self {
            format: CHANNEL_FORMAT.into(),
            version: FORMAT_VERSION,
            sigma: ch.sigma,
            blocks: ch.blocks.iter().map(MatrixJson::from).collect(),
        }
    }
}

impl ChannelStateDoc {
    pub fn into_state(self) -> Result<ChannelState> {
        check_header(&self.format, self.version, CHANNEL_FORMAT)?;
        let blocks = self.blocks.iter().map(MatrixJson::to_matrix).collect::<Result<Vec<_>>>()?;
        ChannelState::new(blocks, self.sigma)
    }
}

pub(crate) fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Artifact(format!("expected format `{expected}`, found `{format}`")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Artifact(format!("unsupported {expected} version {version} (this build reads {FORMAT_VERSION})")));
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn gm_to_json(gm: &GmModel) -> Result<String> {
    to_json(&GmModelDoc::from(gm))
}

pub fn gm_from_json(text: &str) -> Result<GmModel> {
    from_json::<GmModelDoc>(text)?.into_model()
}

pub fn channel_to_json(ch: &ChannelState) -> Result<String> {
    to_json(&ChannelStateDoc::from(ch))
}

pub fn channel_from_json(text: &str) -> Result<ChannelState> {
    from_json::<ChannelStateDoc>(text)?.into_state()
}
