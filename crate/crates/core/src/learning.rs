//! Regularised maximum-likelihood training for latent-chain models.
//!
//! For one bag the gradient of `-log P(y | X)` is the difference between the
//! expected sufficient statistics under `P(h | X)` (all labels mixed by
//! their posterior) and under `P(h | X, y)`. Every learner built on
//! [`ChainModel`] shares this code and differs only in how node scores
//! depend on its parameters.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::PairMode;
use crate::data::{Dataset, Level, TrainingSet};
use crate::error::{Error, Result};
use crate::inference::{softmax, LabelPosterior, ScoredSequence};
use crate::lbfgs::{self, LbfgsSettings, StopReason};
use crate::params::{CutPoints, ModelParams, SquareMatrix};
use crate::potentials::{dot, is_impossible, log_sum_exp, ordinal_log_prob_grad, IMPOSSIBLE};

/// Default validation grid for the ridge weight.
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_decrease_tolerance: f64,
    pub memory: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    /// Independent random initialisations; the lowest objective wins.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            relative_decrease_tolerance: 1e-10,
            memory: 10,
            seed: 0,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn lbfgs(&self) -> LbfgsSettings {
        LbfgsSettings {
            memory: self.memory,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            relative_decrease_tolerance: self.relative_decrease_tolerance,
            ..LbfgsSettings::default()
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        TrainConfig { alpha, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidInput("gradient_tolerance must be positive".into()));
        }
        if self.memory == 0 {
            return Err(Error::InvalidInput("quasi-Newton memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
    pub gradient_norm: Vec<f64>,
    pub elapsed_secs: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub wall_secs: f64,
    /// Restart index that produced the returned parameters.
    pub best_restart: usize,
    /// Outer label-correction rounds (MI-OR only).
    pub outer_rounds: Option<usize>,
}

impl TrainTrace {
    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(f64::NAN)
    }

    pub(crate) fn from_minimum(m: &lbfgs::Minimum, wall_secs: f64) -> Self {
        TrainTrace {
            objective: m.records.iter().map(|r| r.objective).collect(),
            gradient_norm: m.records.iter().map(|r| r.gradient_norm).collect(),
            elapsed_secs: m.records.iter().map(|r| r.elapsed_secs).collect(),
            iterations: m.iterations,
            evaluations: m.evaluations,
            converged: m.stop.converged(),
            stop: Some(m.stop),
            wall_secs,
            best_restart: 0,
            outer_rounds: None,
        }
    }
}

/// Gradient of the label coupling parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingGradient {
    CardWeight(f64),
    /// Row-major `levels x labels`.
    Compatibility(Vec<f64>),
}

/// Derivatives of one bag's `-log P(y | X)` with respect to the chain's
/// node scores, transition entries and coupling parameters.
#[derive(Debug, Clone)]
pub struct BagStatistics {
    pub nll: f64,
    pub label_posterior: Vec<f64>,
    /// Row-major `T x L`.
    pub node_coeff: Vec<f64>,
    /// Row-major `L x L`.
    pub transition_coeff: Vec<f64>,
    pub coupling: CouplingGradient,
}

pub fn bag_statistics(scored: &ScoredSequence<'_>, label: Level) -> Result<BagStatistics> {
    let big_l = scored.levels;
    let posts: Vec<Option<LabelPosterior>> = (1..=big_l)
        .map(|y| scored.posterior(Level::new(y), PairMode::Summed))
        .collect();
    let log_z: Vec<f64> = posts
        .iter()
        .map(|p| p.as_ref().map_or(IMPOSSIBLE, |p| p.log_partition))
        .collect();
    let observed = log_z[label.index()];
    if is_impossible(observed) || !observed.is_finite() {
        return Err(Error::Numerical(format!(
            "label {label} has no admissible latent path (log-partition {observed})"
        )));
    }
    let nll = log_sum_exp(&log_z) - observed;
    let label_posterior = softmax(&log_z);

    let mut node_coeff = vec![0.0; scored.len * big_l];
    let mut transition_coeff = vec![0.0; big_l * big_l];
    let mut card = 0.0;
    let mut compat = vec![0.0; big_l * big_l];
    let is_mi = matches!(scored.coupling, crate::inference::Coupling::MultiInstance { .. });
    for (yi, post) in posts.iter().enumerate() {
        let Some(post) = post else { continue };
        let weight = label_posterior[yi] - if yi == label.index() { 1.0 } else { 0.0 };
        if weight == 0.0 {
            continue;
        }
        node_coeff
            .iter_mut()
            .zip(&post.node)
            .for_each(|(c, m)| *c += weight * m);
        if let Some(pairs) = &post.pair_sum {
            transition_coeff
                .iter_mut()
                .zip(pairs)
                .for_each(|(c, p)| *c += weight * p);
        }
        if is_mi {
            let matches: f64 = post.node.chunks(big_l).map(|row| row[yi]).sum();
            card += weight * matches;
        } else {
            for row in post.node.chunks(big_l) {
                for (l, m) in row.iter().enumerate() {
                    compat[l * big_l + yi] += weight * m;
                }
            }
        }
    }
    Ok(BagStatistics {
        nll,
        label_posterior,
        node_coeff,
        transition_coeff,
        coupling: if is_mi {
            CouplingGradient::CardWeight(card)
        } else {
            CouplingGradient::Compatibility(compat)
        },
    })
}

/// A latent-chain model trainable by [`fit_chain`].
pub trait ChainModel: Clone + Send + Sync {
    fn num_levels(&self) -> usize;

    fn scored<'a>(&'a self, instances: &[Vec<f64>]) -> ScoredSequence<'a>;

    fn to_vector(&self) -> Vec<f64>;

    /// Same shapes as `self`, values from `v`.
    fn from_vector(&self, v: &[f64]) -> Self;

    /// Squared norm of the ridge-penalised blocks and its gradient, in the
    /// layout of [`ChainModel::to_vector`].
    fn penalty(&self) -> (f64, Vec<f64>);

    /// Adds one bag's data-term gradient into `grad`.
    fn add_gradient(&self, instances: &[Vec<f64>], stats: &BagStatistics, grad: &mut [f64]);
}

/// Accumulates `Σ_{t,l} coeff[t][l] ∂ log p(l | x_t) / ∂θ` for an ordinal
/// probit node into `(beta, first_cut, log_gaps)` gradient slots.
pub(crate) fn ordinal_node_gradient(
    beta: &[f64],
    cuts: &CutPoints,
    instances: &[Vec<f64>],
    node_coeff: &[f64],
    g_beta: &mut [f64],
    g_cuts: &mut [f64],
) {
    let big_l = cuts.num_levels();
    let decoded = cuts.decode();
    let mut g_interior = vec![0.0; big_l - 1];
    for (x, coeff) in instances.iter().zip(node_coeff.chunks(big_l)) {
        let mu = dot(beta, x);
        let mut g_mu = 0.0;
        for (li, &c) in coeff.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let level = li + 1;
            let (d_mu, d_lo, d_hi) = ordinal_log_prob_grad(&decoded, mu, level);
            g_mu += c * d_mu;
            if level > 1 {
                g_interior[level - 2] += c * d_lo;
            }
            if level < big_l {
                g_interior[level - 1] += c * d_hi;
            }
        }
        g_beta.iter_mut().zip(x).for_each(|(g, xi)| *g += g_mu * xi);
    }
    let (g_first, g_gaps) = cuts.pullback(&g_interior);
    g_cuts[0] += g_first;
    g_cuts[1..].iter_mut().zip(g_gaps).for_each(|(g, v)| *g += v);
}

/// Softmax node: `∂/∂w_k Σ_l c_l log p_l = (c_k - p_k Σ_l c_l) x`.
pub(crate) fn multinomial_node_gradient(
    weights: &[Vec<f64>],
    instances: &[Vec<f64>],
    node_scores: &[f64],
    node_coeff: &[f64],
    grad: &mut [f64],
) {
    let big_l = weights.len();
    let d = weights.first().map_or(0, Vec::len);
    for ((x, coeff), scores) in instances
        .iter()
        .zip(node_coeff.chunks(big_l))
        .zip(node_scores.chunks(big_l))
    {
        let total: f64 = coeff.iter().sum();
        for k in 0..big_l {
            let factor = coeff[k] - scores[k].exp() * total;
            if factor == 0.0 {
                continue;
            }
            grad[k * d..(k + 1) * d]
                .iter_mut()
                .zip(x)
                .for_each(|(g, xi)| *g += factor * xi);
        }
    }
}

impl ChainModel for ModelParams {
    fn num_levels(&self) -> usize {
        ModelParams::num_levels(self)
    }

    fn scored<'a>(&'a self, instances: &[Vec<f64>]) -> ScoredSequence<'a> {
        ModelParams::scored(self, instances)
    }

    /// `[beta | first_cut | log_gaps | W (row-major) | w]`
    fn to_vector(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.cuts.first_cut);
        v.extend(&self.cuts.log_gaps);
        v.extend(self.transition.as_slice());
        v.push(self.card_weight);
        v
    }

    fn from_vector(&self, v: &[f64]) -> Self {
        let d = self.beta.len();
        let big_l = self.num_levels();
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &v[at..at + n];
            at += n;
            s.to_vec()
        };
        let beta = take(d);
        let first_cut = take(1)[0];
        let log_gaps = take(big_l - 2);
        let transition =
            SquareMatrix::from_row_major(big_l, take(big_l * big_l)).expect("vector layout matches the model");
        let card_weight = take(1)[0];
        ModelParams {
            beta,
            cuts: CutPoints { first_cut, log_gaps },
            transition,
            card_weight,
        }
    }

    fn penalty(&self) -> (f64, Vec<f64>) {
        let d = self.beta.len();
        let big_l = self.num_levels();
        let value = dot(&self.beta, &self.beta) + self.transition.frobenius_sq();
        let mut grad = vec![0.0; d + big_l + big_l * big_l];
        grad[..d].iter_mut().zip(&self.beta).for_each(|(g, b)| *g = 2.0 * b);
        let w_at = d + big_l - 1;
        grad[w_at..w_at + big_l * big_l]
            .iter_mut()
            .zip(self.transition.as_slice())
            .for_each(|(g, w)| *g = 2.0 * w);
        (value, grad)
    }

    fn add_gradient(&self, instances: &[Vec<f64>], stats: &BagStatistics, grad: &mut [f64]) {
        let d = self.beta.len();
        let big_l = self.num_levels();
        let (g_beta, rest) = grad.split_at_mut(d);
        let (g_cuts, rest) = rest.split_at_mut(big_l - 1);
        let (g_w, g_card) = rest.split_at_mut(big_l * big_l);
        ordinal_node_gradient(&self.beta, &self.cuts, instances, &stats.node_coeff, g_beta, g_cuts);
        g_w.iter_mut().zip(&stats.transition_coeff).for_each(|(g, c)| *g += c);
        if let CouplingGradient::CardWeight(c) = stats.coupling {
            g_card[0] += c;
        }
    }
}

/// `-Σ_n log P(y_n | X_n) + α · penalty`.
pub fn chain_objective<M: ChainModel>(model: &M, set: &TrainingSet<'_>, alpha: f64) -> Result<f64> {
    let terms: Vec<Result<f64>> = set
        .bags
        .par_iter()
        .map(|bag| {
            let scored = model.scored(bag.instances);
            let log_z = scored.label_log_partitions();
            let observed = log_z[bag.label.index()];
            if is_impossible(observed) {
                return Err(Error::Numerical(format!("bag {} has an impossible label", bag.id)));
            }
            Ok(log_sum_exp(&log_z) - observed)
        })
        .collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    let value = total + alpha * model.penalty().0;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective evaluated to {value}")));
    }
    Ok(value)
}

/// Objective and gradient. Per-bag terms run in parallel and are reduced in
/// bag order, so results do not depend on the worker count.
pub fn chain_objective_and_gradient<M: ChainModel>(
    model: &M,
    set: &TrainingSet<'_>,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let n_params = model.to_vector().len();
    let terms: Vec<Result<(f64, Vec<f64>)>> = set
        .bags
        .par_iter()
        .map(|bag| {
            let scored = model.scored(bag.instances);
            let stats = bag_statistics(&scored, bag.label)?;
            let mut g = vec![0.0; n_params];
            model.add_gradient(bag.instances, &stats, &mut g);
            Ok((stats.nll, g))
        })
        .collect();
    let (penalty, penalty_grad) = model.penalty();
    let mut value = alpha * penalty;
    let mut grad: Vec<f64> = penalty_grad.iter().map(|g| alpha * g).collect();
    for t in terms {
        let (nll, g) = t?;
        value += nll;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("objective evaluated to {value}")));
    }
    Ok((value, grad))
}

pub fn negative_log_likelihood(params: &ModelParams, dataset: &Dataset, alpha: f64) -> Result<f64> {
    chain_objective(params, &dataset.training_view()?, alpha)
}

pub fn gradient(params: &ModelParams, dataset: &Dataset, alpha: f64) -> Result<Vec<f64>> {
    Ok(chain_objective_and_gradient(params, &dataset.training_view()?, alpha)?.1)
}

/// Runs L-BFGS on a chain model from `init`.
pub fn fit_chain<M: ChainModel>(init: M, set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(M, TrainTrace)> {
    config.validate()?;
    let start = Instant::now();
    let template = init.clone();
    let min = lbfgs::minimize(
        |v| chain_objective_and_gradient(&template.from_vector(v), set, config.alpha),
        init.to_vector(),
        &config.lbfgs(),
    )?;
    let trace = TrainTrace::from_minimum(&min, start.elapsed().as_secs_f64());
    if !trace.converged {
        log::warn!(
            "optimizer stopped without converging ({:?}) after {} iterations, |g| = {:.3e}",
            min.stop,
            min.iterations,
            min.gradient_norm
        );
    }
    Ok((template.from_vector(&min.x), trace))
}

pub(crate) fn init_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

pub(crate) fn small_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, 0.01).expect("valid normal");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Starting point: `beta ~ N(0, 0.01^2)`, cuts at equal-mass standard normal
/// quantiles, neutral transitions and cardinality weight.
pub fn initial_params(num_levels: usize, feature_dim: usize, seed: u64, restart: usize) -> ModelParams {
    let mut rng = init_rng(seed, restart);
    ModelParams {
        beta: small_normal_vec(&mut rng, feature_dim),
        ..ModelParams::neutral(num_levels, feature_dim)
    }
}

/// Runs `restarts` fits from fresh initialisations and keeps the lowest
/// training objective.
pub(crate) fn best_of_restarts<M, F>(restarts: usize, mut run: F) -> Result<(M, TrainTrace)>
where
    F: FnMut(usize) -> Result<(M, TrainTrace)>,
{
    let mut best: Option<(M, TrainTrace)> = None;
    for r in 0..restarts.max(1) {
        let (model, mut trace) = run(r)?;
        trace.best_restart = r;
        let better = best
            .as_ref()
            .is_none_or(|(_, b)| trace.final_objective() < b.final_objective());
        if better {
            best = Some((model, trace));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fits MI-DORF on a weakly-labelled dataset.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    let set = dataset.training_view()?;
    fit_training_set(&set, config)
}

pub fn fit_training_set(set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    best_of_restarts(config.restarts, |r| {
        let init = initial_params(set.num_levels(), set.feature_dim, config.seed, r);
        fit_chain(init, set, config)
    })
}

/// Fits once per grid value and keeps the one with the highest validation
/// score; ties go to the larger `alpha`. Failed grid points are skipped; an
/// undefined score ranks below every defined one.
pub fn select_by_validation<T, F, S>(grid: &[f64], mut fit_one: F, mut score: S) -> Result<(f64, T)>
where
    F: FnMut(f64) -> Result<T>,
    S: FnMut(&T) -> Option<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    let mut best: Option<(f64, f64, T)> = None;
    let mut last_err = None;
    for &alpha in grid {
        match fit_one(alpha) {
            Ok(model) => {
                let s = score(&model).unwrap_or(f64::NEG_INFINITY);
                let better = match &best {
                    None => true,
                    Some((best_alpha, best_score, _)) => s > *best_score || (s == *best_score && alpha > *best_alpha),
                };
                if better {
                    best = Some((alpha, s, model));
                }
            }
            Err(e) => {
                log::warn!("fit at alpha = {alpha} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((alpha, _, model)) => Ok((alpha, model)),
        None => Err(last_err.expect("non-empty grid")),
    }
}

/// Picks `alpha` for MI-DORF by sequence-level ICC on `validation`.
pub fn select_alpha(train: &Dataset, validation: &Dataset, config: &TrainConfig) -> Result<(f64, ModelParams)> {
    validation.ensure_valid()?;
    let set = train.training_view()?;
    let truth: Vec<f64> = validation.bags.iter().map(|b| b.label.get() as f64).collect();
    let (alpha, (params, _)) = select_by_validation(
        &config.alpha_grid,
        |alpha| fit_training_set(&set, &config.with_alpha(alpha)),
        |(params, _): &(ModelParams, TrainTrace)| {
            let pred: Vec<f64> = validation
                .bags
                .iter()
                .map(|b| crate::inference::predict_bag_label(params, &b.instances).get() as f64)
                .collect();
            crate::metrics::icc(&pred, &truth).ok()
        },
    )?;
    Ok((alpha, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, OrdinalScale};
    use crate::inference::{label_posterior, oracle_enumerate};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_params(rng: &mut ChaCha8Rng, levels: usize, dim: usize) -> ModelParams {
        ModelParams {
            beta: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            cuts: CutPoints {
                first_cut: rng.random_range(-1.0..0.0),
                log_gaps: (0..levels - 2).map(|_| rng.random_range(-0.7..0.3)).collect(),
            },
            transition: SquareMatrix::from_row_major(
                levels,
                (0..levels * levels).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            card_weight: rng.random_range(-0.5..1.0),
        }
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, levels: usize, dim: usize, max_len: usize) -> Dataset {
        let bags = (0..n)
            .map(|i| {
                let len = rng.random_range(1..=max_len);
                Bag {
                    id: format!("b{i}"),
                    instances: (0..len)
                        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .collect(),
                    label: Level::new(rng.random_range(1..=levels)),
                    instance_labels: None,
                }
            })
            .collect();
        Dataset::new(bags, OrdinalScale::new(levels).unwrap(), dim)
    }

    #[test]
    fn single_instance_nll_by_hand() {
        // T = 1, L = 2: Z(y) = p(y | x) e^w, so
        // NLL = -log( p(y|x) e^w / (p(1|x) e^w + p(2|x) e^w) ) = -log p(y | x).
        let p = ModelParams {
            beta: vec![0.8],
            cuts: CutPoints::encode(&[0.3]).unwrap(),
            transition: SquareMatrix::zeros(2),
            card_weight: 0.6,
        };
        let ds = Dataset::new(
            vec![Bag {
                id: "a".into(),
                instances: vec![vec![1.5]],
                label: Level::new(2),
                instance_labels: None,
            }],
            OrdinalScale::new(2).unwrap(),
            1,
        );
        // p(2 | x) = 1 - Φ(0.3 - 1.2) = Φ(0.9) = 0.815939874653375
        let expect = -(0.815_939_874_653_375_f64).ln();
        assert_abs_diff_eq!(negative_log_likelihood(&p, &ds, 0.0).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn regulariser_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 3, 2);
        let ds = random_dataset(&mut rng, 4, 3, 2, 4);
        let base = negative_log_likelihood(&p, &ds, 0.0).unwrap();
        let one = negative_log_likelihood(&p, &ds, 0.5).unwrap() - base;
        let two = negative_log_likelihood(&p, &ds, 1.0).unwrap() - base;
        assert_abs_diff_eq!(two, 2.0 * one, epsilon = 1e-10);
        assert!(base >= 0.0);
    }

    #[test]
    fn vector_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 4, 3);
        let v = p.to_vector();
        assert_eq!(v.len(), 3 + 1 + 2 + 16 + 1);
        assert_eq!(p.from_vector(&v), p);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let levels = rng.random_range(2..=3);
            let dim = rng.random_range(1..=4);
            let p = random_params(&mut rng, levels, dim);
            let ds = random_dataset(&mut rng, 3, levels, dim, 6);
            let alpha = rng.random_range(0.0..0.5);
            let g = gradient(&p, &ds, alpha).unwrap();
            let v = p.to_vector();
            let h = 1e-5;
            for i in 0..v.len() {
                let mut plus = v.clone();
                plus[i] += h;
                let mut minus = v.clone();
                minus[i] -= h;
                let fd = (negative_log_likelihood(&p.from_vector(&plus), &ds, alpha).unwrap()
                    - negative_log_likelihood(&p.from_vector(&minus), &ds, alpha).unwrap())
                    / (2.0 * h);
                let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn card_weight_gradient_is_difference_of_expected_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 3, 2);
        let ds = random_dataset(&mut rng, 1, 3, 2, 4);
        let bag = &ds.bags[0];
        let post = label_posterior(&p, &bag.instances);
        let expected_matches = |y: usize| -> f64 {
            let (_, m) = oracle_enumerate(&p, &bag.instances, Level::new(y)).unwrap();
            (0..bag.len()).map(|t| m.node(t, Level::new(y))).sum()
        };
        let clamped = expected_matches(bag.label.get());
        let free: f64 = (1..=3).map(|y| post[y - 1] * expected_matches(y)).sum();
        let g = gradient(&p, &ds, 0.0).unwrap();
        // -d log P / dw = -(clamped - free)
        assert_abs_diff_eq!(*g.last().unwrap(), free - clamped, epsilon = 1e-10);
    }

    #[test]
    fn dataset_gradient_is_sum_of_bag_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 3, 2);
        let ds = random_dataset(&mut rng, 5, 3, 2, 5);
        let alpha = 0.3;
        let total = gradient(&p, &ds, alpha).unwrap();
        let (_, pen) = p.penalty();
        let mut sum: Vec<f64> = pen.iter().map(|g| alpha * g).collect();
        for bag in &ds.bags {
            let single = Dataset::new(vec![bag.clone()], ds.scale, ds.feature_dim);
            let g = gradient(&p, &single, 0.0).unwrap();
            sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        for (a, b) in total.iter().zip(&sum) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn symmetric_problem_has_pure_regulariser_gradient() {
        // One instance per bag and L = 2 labels; with beta = 0 and a cut at 0
        // both labels have equal partitions... but the observed label still
        // pulls. Use a pair of mirrored bags so the data terms cancel.
        let p = ModelParams {
            beta: vec![0.4],
            cuts: CutPoints::encode(&[0.0]).unwrap(),
            transition: SquareMatrix::from_row_major(2, vec![0.3, -0.1, -0.1, 0.3]).unwrap(),
            card_weight: 0.0,
        };
        let bag = |id: &str, x: f64, y: usize| Bag {
            id: id.into(),
            instances: vec![vec![x]],
            label: Level::new(y),
            instance_labels: None,
        };
        let ds = Dataset::new(
            vec![bag("lo", -1.0, 1), bag("hi", 1.0, 2)],
            OrdinalScale::new(2).unwrap(),
            1,
        );
        let data_grad = gradient(&p, &ds, 0.0).unwrap();
        let alpha = 0.7;
        let full = gradient(&p, &ds, alpha).unwrap();
        let (_, pen) = p.penalty();
        for i in 0..full.len() {
            assert_abs_diff_eq!(full[i] - data_grad[i], alpha * pen[i], epsilon = 1e-12);
        }
        // Mirrored bags cancel for the cut, transitions and w.
        assert_abs_diff_eq!(data_grad[1], 0.0, epsilon = 1e-12);
        for g in &data_grad[2..] {
            assert_abs_diff_eq!(*g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, 4, 3, 2, 5);
        let config = TrainConfig {
            max_iterations: 0,
            seed: 9,
            ..Default::default()
        };
        let (p, trace) = fit(&ds, &config).unwrap();
        assert_eq!(p, initial_params(3, 2, 9, 0));
        assert_eq!(trace.iterations, 0);
    }

    #[test]
    fn training_decreases_objective_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = random_dataset(&mut rng, 8, 3, 2, 6);
        let config = TrainConfig {
            max_iterations: 40,
            alpha: 0.1,
            ..Default::default()
        };
        let (_, trace) = fit(&ds, &config).unwrap();
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(trace.final_objective() < trace.objective[0]);
    }

    #[test]
    fn instance_labels_do_not_influence_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clean = random_dataset(&mut rng, 6, 3, 2, 5);
        let mut poisoned = clean.clone();
        for bag in &mut poisoned.bags {
            bag.instance_labels = Some(vec![Level::new(3); bag.len()]);
        }
        let config = TrainConfig {
            max_iterations: 25,
            ..Default::default()
        };
        let (a, _) = fit(&clean, &config).unwrap();
        let (b, _) = fit(&poisoned, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_value_grid_selects_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = random_dataset(&mut rng, 6, 3, 2, 5);
        let val = random_dataset(&mut rng, 6, 3, 2, 5);
        let config = TrainConfig {
            alpha_grid: vec![0.25],
            max_iterations: 10,
            ..Default::default()
        };
        let (alpha, _) = select_alpha(&train, &val, &config).unwrap();
        assert_eq!(alpha, 0.25);
    }

    #[test]
    fn selection_prefers_larger_alpha_on_ties() {
        let (alpha, _) = select_by_validation(&[0.1, 1.0, 10.0], |a| Ok(a), |_| Some(0.5)).unwrap();
        assert_eq!(alpha, 10.0);
        let (alpha, _) = select_by_validation(&[0.1, 1.0, 10.0], |a| Ok(a), |a| Some(-(a - 1.0f64).abs())).unwrap();
        assert_eq!(alpha, 1.0);
        assert!(select_by_validation(&[1.0], |_| Err::<f64, _>(Error::Numerical("x".into())), |_| Some(0.0)).is_err());
    }
}
