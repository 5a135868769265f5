//! Static ordinal probit regression: SIL-OR and MI-OR.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Level, TrainingSet};
use crate::error::{Error, Result};
use crate::inference::argmax;
use crate::lbfgs;
use crate::learning::{best_of_restarts, init_rng, ordinal_node_gradient, small_normal_vec, TrainConfig, TrainTrace};
use crate::params::CutPoints;
use crate::potentials::{dot, ordinal_log_prob};

/// Upper bound on MI-OR relabel-and-refit rounds.
pub const MAX_CORRECTION_ROUNDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalRegressor {
    pub beta: Vec<f64>,
    pub cuts: CutPoints,
}

impl OrdinalRegressor {
    pub fn initial(num_levels: usize, feature_dim: usize, seed: u64, restart: usize) -> Self {
        let mut rng = init_rng(seed, restart);
        OrdinalRegressor {
            beta: small_normal_vec(&mut rng, feature_dim),
            cuts: CutPoints::standard_normal_quantiles(num_levels),
        }
    }

    pub fn num_levels(&self) -> usize {
        self.cuts.num_levels()
    }

    pub fn level_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let cuts = self.cuts.decode();
        let mu = dot(&self.beta, x);
        (1..=self.num_levels())
            .map(|l| ordinal_log_prob(&cuts, mu, l))
            .collect()
    }

    pub fn predict_instances(&self, instances: &[Vec<f64>]) -> Vec<Level> {
        instances
            .iter()
            .map(|x| Level::from_index(argmax(&self.level_log_probs(x))))
            .collect()
    }

    /// Bag label is the largest instance prediction.
    pub fn predict_bag(&self, instances: &[Vec<f64>]) -> (Level, Vec<Level>) {
        let frames = self.predict_instances(instances);
        let bag = frames.iter().copied().max().unwrap_or(Level::new(1));
        (bag, frames)
    }

    fn to_vector(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.cuts.first_cut);
        v.extend(&self.cuts.log_gaps);
        v
    }

    fn from_vector(&self, v: &[f64]) -> Self {
        let d = self.beta.len();
        OrdinalRegressor {
            beta: v[..d].to_vec(),
            cuts: CutPoints {
                first_cut: v[d],
                log_gaps: v[d + 1..].to_vec(),
            },
        }
    }
}

/// `-Σ log p(label | x) + α‖β‖²` over instance-labelled data.
pub(crate) fn labelled_objective(
    model: &OrdinalRegressor,
    set: &TrainingSet<'_>,
    labels: &[Vec<Level>],
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = model.beta.len();
    let big_l = model.num_levels();
    let cuts = model.cuts.decode();
    let terms: Vec<(f64, Vec<f64>)> = set
        .bags
        .par_iter()
        .zip(labels.par_iter())
        .map(|(bag, labels)| {
            let mut coeff = vec![0.0; bag.instances.len() * big_l];
            let mut nll = 0.0;
            for (t, (x, l)) in bag.instances.iter().zip(labels).enumerate() {
                nll -= ordinal_log_prob(&cuts, dot(&model.beta, x), l.get());
                coeff[t * big_l + l.index()] = -1.0;
            }
            let mut g = vec![0.0; d + big_l - 1];
            let (g_beta, g_cuts) = g.split_at_mut(d);
            ordinal_node_gradient(&model.beta, &model.cuts, bag.instances, &coeff, g_beta, g_cuts);
            (nll, g)
        })
        .collect();
    let mut value = alpha * dot(&model.beta, &model.beta);
    let mut grad = vec![0.0; d + big_l - 1];
    grad[..d]
        .iter_mut()
        .zip(&model.beta)
        .for_each(|(g, b)| *g = 2.0 * alpha * b);
    for (nll, g) in terms {
        value += nll;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("ordinal objective evaluated to {value}")));
    }
    Ok((value, grad))
}

fn fit_labelled(
    init: OrdinalRegressor,
    set: &TrainingSet<'_>,
    labels: &[Vec<Level>],
    config: &TrainConfig,
) -> Result<(OrdinalRegressor, TrainTrace)> {
    config.validate()?;
    let start = Instant::now();
    let min = lbfgs::minimize(
        |v| labelled_objective(&init.from_vector(v), set, labels, config.alpha),
        init.to_vector(),
        &config.lbfgs(),
    )?;
    Ok((
        init.from_vector(&min.x),
        TrainTrace::from_minimum(&min, start.elapsed().as_secs_f64()),
    ))
}

fn bag_labels(set: &TrainingSet<'_>) -> Vec<Vec<Level>> {
    set.bags.iter().map(|b| vec![b.label; b.instances.len()]).collect()
}

/// Every instance inherits its bag label.
pub fn fit_sil_or(set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(OrdinalRegressor, TrainTrace)> {
    let labels = bag_labels(set);
    best_of_restarts(config.restarts, |r| {
        let init = OrdinalRegressor::initial(set.num_levels(), set.feature_dim, config.seed, r);
        fit_labelled(init, set, &labels, config)
    })
}

/// Enforces `max(labels) = y`: predictions above `y` drop to `y`; if none
/// reaches `y`, the instances at the current maximum are raised to it.
pub fn correct_instance_labels(pred: &[Level], y: Level) -> Vec<Level> {
    let mut out: Vec<Level> = pred.iter().map(|&l| l.min(y)).collect();
    let top = out.iter().copied().max();
    if let Some(top) = top {
        if top < y {
            out.iter_mut().filter(|l| **l == top).for_each(|l| *l = y);
        }
    }
    out
}

/// SIL-OR followed by alternating instance relabelling and warm-started
/// refits until the working labels stop changing.
pub fn fit_mi_or(set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(OrdinalRegressor, TrainTrace)> {
    let start = Instant::now();
    let (mut model, mut trace) = fit_sil_or(set, config)?;
    let mut labels = bag_labels(set);
    let mut total_iterations = trace.iterations;
    let mut total_evaluations = trace.evaluations;
    let mut rounds = 0;
    while rounds < MAX_CORRECTION_ROUNDS {
        let next: Vec<Vec<Level>> = set
            .bags
            .iter()
            .map(|b| correct_instance_labels(&model.predict_instances(b.instances), b.label))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        rounds += 1;
        let (m, t) = fit_labelled(model, set, &labels, config)?;
        model = m;
        total_iterations += t.iterations;
        total_evaluations += t.evaluations;
        trace = TrainTrace {
            best_restart: trace.best_restart,
            ..t
        };
    }
    if rounds == MAX_CORRECTION_ROUNDS {
        log::warn!("MI-OR label correction did not reach a fixed point in {rounds} rounds");
    }
    trace.iterations = total_iterations;
    trace.evaluations = total_evaluations;
    trace.outer_rounds = Some(rounds);
    trace.wall_secs = start.elapsed().as_secs_f64();
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, Dataset, OrdinalScale};
    use approx::assert_abs_diff_eq;

    fn lv(v: &[usize]) -> Vec<Level> {
        v.iter().map(|&l| Level::new(l)).collect()
    }

    fn bag(id: &str, xs: &[f64], y: usize) -> Bag {
        Bag {
            id: id.into(),
            instances: xs.iter().map(|&x| vec![x]).collect(),
            label: Level::new(y),
            instance_labels: None,
        }
    }

    #[test]
    fn correction_examples() {
        assert_eq!(correct_instance_labels(&lv(&[1, 2, 2]), Level::new(3)), lv(&[1, 3, 3]));
        assert_eq!(correct_instance_labels(&lv(&[4, 2]), Level::new(3)), lv(&[3, 2]));
        assert_eq!(correct_instance_labels(&lv(&[1, 3, 2]), Level::new(3)), lv(&[1, 3, 2]));
    }

    #[test]
    fn corrected_labels_satisfy_max_rule() {
        for code in 0..4usize.pow(4) {
            let pred: Vec<Level> = (0..4).map(|k| Level::new((code / 4usize.pow(k)) % 4 + 1)).collect();
            for y in 1..=4 {
                let c = correct_instance_labels(&pred, Level::new(y));
                assert_eq!(c.iter().max().unwrap().get(), y);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = Dataset::new(
            vec![bag("a", &[-1.0, 0.3, 1.2], 3), bag("b", &[0.5, -0.2], 2)],
            OrdinalScale::new(3).unwrap(),
            1,
        );
        let set = ds.training_view().unwrap();
        let labels = vec![lv(&[1, 2, 3]), lv(&[2, 1])];
        let model = OrdinalRegressor {
            beta: vec![0.7],
            cuts: CutPoints::encode(&[-0.4, 0.6]).unwrap(),
        };
        let (_, g) = labelled_objective(&model, &set, &labels, 0.3).unwrap();
        let v = model.to_vector();
        for i in 0..v.len() {
            let f = |delta: f64| {
                let mut w = v.clone();
                w[i] += delta;
                labelled_objective(&model.from_vector(&w), &set, &labels, 0.3)
                    .unwrap()
                    .0
            };
            let fd = (f(1e-5) - f(-1e-5)) / 2e-5;
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn separable_toy_is_recovered() {
        let mut bags = Vec::new();
        for (i, (x, y)) in [(-2.0, 1), (0.0, 2), (2.0, 3)].iter().cycle().take(30).enumerate() {
            bags.push(bag(&format!("b{i}"), &[*x + 0.01 * (i % 5) as f64], *y));
        }
        let ds = Dataset::new(bags, OrdinalScale::new(3).unwrap(), 1);
        let set = ds.training_view().unwrap();
        let config = TrainConfig {
            alpha: 1e-3,
            ..Default::default()
        };
        let (model, _) = fit_sil_or(&set, &config).unwrap();
        for b in &ds.bags {
            assert_eq!(model.predict_bag(&b.instances).0, b.label);
        }
    }

    #[test]
    fn single_label_data_predicts_that_label() {
        let bags = (0..8)
            .map(|i| bag(&format!("b{i}"), &[i as f64 - 4.0, 0.5 * i as f64], 2))
            .collect();
        let ds = Dataset::new(bags, OrdinalScale::new(4).unwrap(), 1);
        let (model, _) = fit_sil_or(&ds.training_view().unwrap(), &TrainConfig::default()).unwrap();
        for b in &ds.bags {
            let (bag, frames) = model.predict_bag(&b.instances);
            assert_eq!(bag, Level::new(2));
            assert!(frames.iter().all(|&l| l == Level::new(2)));
        }
    }

    #[test]
    fn mi_or_orders_instances_and_reports_rounds() {
        let mut bags = Vec::new();
        for i in 0..5 {
            bags.push(bag(&format!("a{i}"), &[-2.0, -2.1], 1));
            bags.push(bag(&format!("b{i}"), &[-1.9, 0.0, -2.0], 2));
            bags.push(bag(&format!("c{i}"), &[-2.0, 0.1, 2.0], 3));
        }
        let ds = Dataset::new(bags, OrdinalScale::new(3).unwrap(), 1);
        let config = TrainConfig {
            alpha: 1e-2,
            ..Default::default()
        };
        let (model, trace) = fit_mi_or(&ds.training_view().unwrap(), &config).unwrap();
        assert!(trace.outer_rounds.unwrap() <= MAX_CORRECTION_ROUNDS);
        let p = |x: f64| model.predict_bag(&[vec![x]]).0;
        assert!(p(-2.0) < p(2.0));
        assert!(p(-2.0) <= p(0.0) && p(0.0) <= p(2.0));
        assert_eq!(p(2.0), Level::new(3));
    }
}
