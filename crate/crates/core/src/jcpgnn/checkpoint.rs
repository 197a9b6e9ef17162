use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{JcpgnnParams, LayerParams, ModelMeta};
use crate::autodiff::{Activation, Linear, MlpParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LinearRecord {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layers: Vec<LinearRecord>,
    output: Activation,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    phi1: MlpRecord,
    alpha1: MlpRecord,
    alpha2: MlpRecord,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    version: u32,
    meta: ModelMeta,
    layers: Vec<LayerRecord>,
}

impl From<&MlpParams> for MlpRecord {
    fn from(m: &MlpParams) -> Self {
        Self {
            layers: m
                .layers
                .iter()
                .map(|l| LinearRecord {
                    weight: l.weight.to_rows(),
                    bias: l.bias.data().to_vec(),
                })
                .collect(),
            output: m.output,
        }
    }
}

impl TryFrom<MlpRecord> for MlpParams {
    type Error = Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        let layers = r
            .layers
            .into_iter()
            .map(|l| {
                let n = l.bias.len();
                Ok(Linear {
                    weight: Tensor::from_rows(&l.weight)?,
                    bias: Tensor::from_vec(1, n, l.bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MlpParams {
            layers,
            output: r.output,
        })
    }
}

pub fn to_json(params: &JcpgnnParams) -> Result<String> {
    let rec = CheckpointRecord {
        version: CHECKPOINT_VERSION,
        meta: params.meta.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerRecord {
                phi1: (&l.phi1).into(),
                alpha1: (&l.alpha1).into(),
                alpha2: (&l.alpha2).into(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&rec)?)
}

pub fn from_json(text: &str) -> Result<JcpgnnParams> {
    let rec: CheckpointRecord = serde_json::from_str(text)?;
    if rec.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {}",
            rec.version
        )));
    }
    let layers = rec
        .layers
        .into_iter()
        .map(|l| {
            Ok(LayerParams {
                phi1: l.phi1.try_into()?,
                alpha1: l.alpha1.try_into()?,
                alpha2: l.alpha2.try_into()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = JcpgnnParams {
        layers,
        meta: rec.meta,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &JcpgnnParams, path: &Path) -> Result<()> {
    fs::write(path, to_json(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<JcpgnnParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
