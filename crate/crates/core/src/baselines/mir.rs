//! Multi-instance regression with a log-sum-exp bag aggregate.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Level, TrainingSet};
use crate::error::{Error, Result};
use crate::lbfgs;
use crate::learning::{best_of_restarts, init_rng, small_normal_vec, TrainConfig, TrainTrace};
use crate::potentials::{dot, log_sum_exp};

pub const DEFAULT_GAMMA: f64 = 1.0;

/// `m = (1/γ) log Σ_t exp(γ s_t)`; lies in `[max s, max s + ln(T)/γ]`.
pub fn smooth_max(scores: &[f64], gamma: f64) -> f64 {
    let scaled: Vec<f64> = scores.iter().map(|s| gamma * s).collect();
    log_sum_exp(&scaled) / gamma
}

/// Linear instance scorer `s_t = θᵀx_t + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirModel {
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub gamma: f64,
    pub num_levels: usize,
}

impl MirModel {
    pub fn scores(&self, instances: &[Vec<f64>]) -> Vec<f64> {
        instances.iter().map(|x| dot(&self.theta, x) + self.intercept).collect()
    }

    pub fn aggregate(&self, instances: &[Vec<f64>]) -> f64 {
        smooth_max(&self.scores(instances), self.gamma)
    }

    fn to_level(&self, v: f64) -> Level {
        Level::new(v.round().clamp(1.0, self.num_levels as f64) as usize)
    }

    pub fn predict_bag(&self, instances: &[Vec<f64>]) -> (Level, Vec<Level>) {
        let s = self.scores(instances);
        let frames = s.iter().map(|&v| self.to_level(v)).collect();
        (self.to_level(smooth_max(&s, self.gamma)), frames)
    }

    fn to_vector(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.push(self.intercept);
        v
    }

    fn from_vector(&self, v: &[f64]) -> Self {
        let d = self.theta.len();
        MirModel {
            theta: v[..d].to_vec(),
            intercept: v[d],
            ..self.clone()
        }
    }
}

/// `Σ_n (m_n - y_n)² + α‖θ‖²`; the intercept is unpenalised.
pub(crate) fn mir_objective(model: &MirModel, set: &TrainingSet<'_>, alpha: f64) -> Result<(f64, Vec<f64>)> {
    let d = model.theta.len();
    let terms: Vec<(f64, Vec<f64>)> = set
        .bags
        .par_iter()
        .map(|bag| {
            let s = model.scores(bag.instances);
            let m = smooth_max(&s, model.gamma);
            let r = m - bag.label.get() as f64;
            let mut g = vec![0.0; d + 1];
            for (x, st) in bag.instances.iter().zip(&s) {
                let weight = 2.0 * r * (model.gamma * (st - m)).exp();
                g[..d].iter_mut().zip(x).for_each(|(gi, xi)| *gi += weight * xi);
                g[d] += weight;
            }
            (r * r, g)
        })
        .collect();
    let mut value = alpha * dot(&model.theta, &model.theta);
    let mut grad: Vec<f64> = model.theta.iter().map(|t| 2.0 * alpha * t).collect();
    grad.push(0.0);
    for (loss, g) in terms {
        value += loss;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("MIR objective evaluated to {value}")));
    }
    Ok((value, grad))
}

pub fn fit_mir(set: &TrainingSet<'_>, gamma: f64, config: &TrainConfig) -> Result<(MirModel, TrainTrace)> {
    config.validate()?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("MIR gamma must be positive, got {gamma}")));
    }
    let mean_label = set.bags.iter().map(|b| b.label.get() as f64).sum::<f64>() / set.bags.len().max(1) as f64;
    best_of_restarts(config.restarts, |r| {
        let mut rng = init_rng(config.seed, r);
        let init = MirModel {
            theta: small_normal_vec(&mut rng, set.feature_dim),
            intercept: mean_label,
            gamma,
            num_levels: set.num_levels(),
        };
        let start = Instant::now();
        let min = lbfgs::minimize(
            |v| mir_objective(&init.from_vector(v), set, config.alpha),
            init.to_vector(),
            &config.lbfgs(),
        )?;
        Ok((
            init.from_vector(&min.x),
            TrainTrace::from_minimum(&min, start.elapsed().as_secs_f64()),
        ))
    })
}
