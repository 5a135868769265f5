//! One train/predict interface over MI-DORF and every baseline.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_hidden_chain, fit_mi_or, fit_mir, fit_sil_or, HiddenChainKind, HiddenChainParams, MirModel, OrdinalRegressor,
    DEFAULT_GAMMA,
};
use crate::data::{Dataset, Level, TrainingSet};
use crate::error::{Error, Result};
use crate::inference::predict_sequence;
use crate::learning::{self, select_by_validation, ChainModel, TrainConfig, TrainTrace};
use crate::metrics::{icc, BagPrediction};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Midorf,
    SilOr,
    MiOr,
    Mir,
    MiHcrf,
    Hcrf,
    Hcorf,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SilOr,
        Method::MiOr,
        Method::Mir,
        Method::MiHcrf,
        Method::Hcrf,
        Method::Hcorf,
        Method::Midorf,
    ];

    /// Command-line and file identifier.
    pub fn id(self) -> &'static str {
        match self {
            Method::Midorf => "midorf",
            Method::SilOr => "sil-or",
            Method::MiOr => "mi-or",
            Method::Mir => "mir",
            Method::MiHcrf => "mi-hcrf",
            Method::Hcrf => "hcrf",
            Method::Hcorf => "hcorf",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Midorf => "MI-DORF",
            Method::SilOr => "SIL-OR",
            Method::MiOr => "MI-OR",
            Method::Mir => "MIR",
            Method::MiHcrf => "MI-HCRF",
            Method::Hcrf => "HCRF",
            Method::Hcorf => "HCORF",
        }
    }

    /// Whether predictions come with a bag-label posterior.
    pub fn is_probabilistic(self) -> bool {
        matches!(self, Method::Midorf | Method::MiHcrf | Method::Hcrf | Method::Hcorf)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Midorf(ModelParams),
    SilOr(OrdinalRegressor),
    MiOr(OrdinalRegressor),
    Mir(MirModel),
    MiHcrf(HiddenChainParams),
    Hcrf(HiddenChainParams),
    Hcorf(HiddenChainParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodPrediction {
    pub bag: Level,
    pub frames: Vec<Level>,
    pub posterior: Option<Vec<f64>>,
}

impl From<MethodPrediction> for BagPrediction {
    fn from(p: MethodPrediction) -> Self {
        BagPrediction {
            bag: p.bag,
            frames: p.frames,
        }
    }
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Midorf(_) => Method::Midorf,
            TrainedModel::SilOr(_) => Method::SilOr,
            TrainedModel::MiOr(_) => Method::MiOr,
            TrainedModel::Mir(_) => Method::Mir,
            TrainedModel::MiHcrf(_) => Method::MiHcrf,
            TrainedModel::Hcrf(_) => Method::Hcrf,
            TrainedModel::Hcorf(_) => Method::Hcorf,
        }
    }

    pub fn num_levels(&self) -> usize {
        match self {
            TrainedModel::Midorf(p) => p.num_levels(),
            TrainedModel::SilOr(m) | TrainedModel::MiOr(m) => m.num_levels(),
            TrainedModel::Mir(m) => m.num_levels,
            TrainedModel::MiHcrf(p) | TrainedModel::Hcrf(p) | TrainedModel::Hcorf(p) => p.num_levels(),
        }
    }

    pub fn predict(&self, instances: &[Vec<f64>]) -> MethodPrediction {
        let chain = |p: crate::inference::Prediction| MethodPrediction {
            bag: p.bag,
            frames: p.instances,
            posterior: Some(p.bag_posterior),
        };
        let static_pred = |(bag, frames): (Level, Vec<Level>)| MethodPrediction {
            bag,
            frames,
            posterior: None,
        };
        match self {
            TrainedModel::Midorf(p) => chain(predict_sequence(&p.scored(instances))),
            TrainedModel::SilOr(m) | TrainedModel::MiOr(m) => static_pred(m.predict_bag(instances)),
            TrainedModel::Mir(m) => static_pred(m.predict_bag(instances)),
            TrainedModel::MiHcrf(p) | TrainedModel::Hcrf(p) | TrainedModel::Hcorf(p) => {
                chain(predict_sequence(&ChainModel::scored(p, instances)))
            }
        }
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Vec<MethodPrediction> {
        dataset.bags.par_iter().map(|b| self.predict(&b.instances)).collect()
    }

    /// Parameters as a JSON value, for model files.
    pub fn params_json(&self) -> serde_json::Value {
        let v = match self {
            TrainedModel::Midorf(p) => serde_json::to_value(p),
            TrainedModel::SilOr(m) | TrainedModel::MiOr(m) => serde_json::to_value(m),
            TrainedModel::Mir(m) => serde_json::to_value(m),
            TrainedModel::MiHcrf(p) | TrainedModel::Hcrf(p) | TrainedModel::Hcorf(p) => serde_json::to_value(p),
        };
        v.expect("parameters serialise")
    }

    pub fn from_params_json(method: Method, value: serde_json::Value) -> Result<Self> {
        let err = |e| Error::json("params", e);
        Ok(match method {
            Method::Midorf => TrainedModel::Midorf(serde_json::from_value(value).map_err(err)?),
            Method::SilOr => TrainedModel::SilOr(serde_json::from_value(value).map_err(err)?),
            Method::MiOr => TrainedModel::MiOr(serde_json::from_value(value).map_err(err)?),
            Method::Mir => TrainedModel::Mir(serde_json::from_value(value).map_err(err)?),
            Method::MiHcrf => TrainedModel::MiHcrf(serde_json::from_value(value).map_err(err)?),
            Method::Hcrf => TrainedModel::Hcrf(serde_json::from_value(value).map_err(err)?),
            Method::Hcorf => TrainedModel::Hcorf(serde_json::from_value(value).map_err(err)?),
        })
    }
}

pub fn train(method: Method, set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(TrainedModel, TrainTrace)> {
    Ok(match method {
        Method::Midorf => {
            let (p, t) = learning::fit_training_set(set, config)?;
            (TrainedModel::Midorf(p), t)
        }
        Method::SilOr => {
            let (m, t) = fit_sil_or(set, config)?;
            (TrainedModel::SilOr(m), t)
        }
        Method::MiOr => {
            let (m, t) = fit_mi_or(set, config)?;
            (TrainedModel::MiOr(m), t)
        }
        Method::Mir => {
            let (m, t) = fit_mir(set, DEFAULT_GAMMA, config)?;
            (TrainedModel::Mir(m), t)
        }
        Method::MiHcrf => {
            let (p, t) = fit_hidden_chain(HiddenChainKind::MiHcrf, set, config)?;
            (TrainedModel::MiHcrf(p), t)
        }
        Method::Hcrf => {
            let (p, t) = fit_hidden_chain(HiddenChainKind::Hcrf, set, config)?;
            (TrainedModel::Hcrf(p), t)
        }
        Method::Hcorf => {
            let (p, t) = fit_hidden_chain(HiddenChainKind::Hcorf, set, config)?;
            (TrainedModel::Hcorf(p), t)
        }
    })
}

/// Sequence-level ICC of bag predictions on `dataset`.
pub fn validation_score(model: &TrainedModel, dataset: &Dataset) -> Option<f64> {
    let pred: Vec<f64> = model
        .predict_dataset(dataset)
        .iter()
        .map(|p| p.bag.get() as f64)
        .collect();
    let truth: Vec<f64> = dataset.bags.iter().map(|b| b.label.get() as f64).collect();
    icc(&pred, &truth).ok()
}

#[derive(Debug, Clone)]
pub struct Selected {
    pub alpha: f64,
    pub model: TrainedModel,
    pub trace: TrainTrace,
}

/// Fits over `config.alpha_grid` and keeps the best validation ICC.
pub fn train_with_selection(
    method: Method,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<Selected> {
    validation.ensure_valid()?;
    let set = train_set.training_view()?;
    let (alpha, (model, trace)) = select_by_validation(
        &config.alpha_grid,
        |alpha| train(method, &set, &config.with_alpha(alpha)),
        |(model, _): &(TrainedModel, TrainTrace)| validation_score(model, validation),
    )?;
    Ok(Selected { alpha, model, trace })
}
