//! Log-domain potentials of the MI-DORF energy and of its auxiliary-variable
//! chain form.
//!
//! Scores are compatibilities: the model is `P ∝ exp(score)`. Configurations
//! forbidden by the multi-instance ordinal constraint are `None`; callers
//! must check before adding. Inside dense lattices the same condition is
//! stored as [`IMPOSSIBLE`].

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{LatentAssignment, Level};
use crate::params::{CutPoints, ModelParams};

/// Log-score of a forbidden configuration inside dense tables.
pub const IMPOSSIBLE: f64 = f64::NEG_INFINITY;

/// Lower clamp for interval probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub fn is_impossible(score: f64) -> bool {
    score == IMPOSSIBLE
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
    }
}

#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(z)`, accurate for large positive `z`.
#[inline]
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `Φ(hi) - Φ(lo)` for `lo < hi`, evaluated on whichever tail keeps
/// precision.
#[inline]
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinal probit log-likelihood of `level` for projection `mu`, with
/// `cuts` the decoded `[-inf, b_1, .., b_{L-1}, +inf]` vector.
#[inline]
pub fn ordinal_log_prob(cuts: &[f64], mu: f64, level: usize) -> f64 {
    let p = normal_interval(cuts[level - 1] - mu, cuts[level] - mu);
    p.max(PROB_FLOOR).ln()
}

/// Partial derivatives of [`ordinal_log_prob`] with respect to
/// `(mu, b_{level-1}, b_level)`. Zero where the probability was clamped.
#[inline]
pub fn ordinal_log_prob_grad(cuts: &[f64], mu: f64, level: usize) -> (f64, f64, f64) {
    let lo = cuts[level - 1] - mu;
    let hi = cuts[level] - mu;
    let p = normal_interval(lo, hi);
    if p < PROB_FLOOR {
        return (0.0, 0.0, 0.0);
    }
    let (phi_lo, phi_hi) = (normal_pdf(lo), normal_pdf(hi));
    ((phi_lo - phi_hi) / p, -phi_lo / p, phi_hi / p)
}

/// Node log-scores of an ordinal probit over a sequence, row-major `T x L`.
pub fn ordinal_node_scores(beta: &[f64], cuts: &CutPoints, instances: &[Vec<f64>]) -> Vec<f64> {
    let decoded = cuts.decode();
    let l = cuts.num_levels();
    let mut out = Vec::with_capacity(instances.len() * l);
    for x in instances {
        let mu = dot(beta, x);
        out.extend((1..=l).map(|level| ordinal_log_prob(&decoded, mu, level)));
    }
    out
}

pub fn node_potential(params: &ModelParams, x: &[f64], level: Level) -> f64 {
    let cuts = params.cuts.decode();
    ordinal_log_prob(&cuts, dot(&params.beta, x), level.get())
}

pub fn edge_potential(params: &ModelParams, from: Level, to: Level) -> f64 {
    params.transition.get(from.index(), to.index())
}

/// `w * #{t : h_t = y}` when `max(h) = y`, otherwise `None`.
pub fn cardinality_potential(params: &ModelParams, h: &LatentAssignment, y: Level) -> Option<f64> {
    match h.max_level() {
        Some(m) if m == y => {
            let matches = h.states.iter().filter(|&&s| s == y).count();
            Some(params.card_weight * matches as f64)
        }
        _ => None,
    }
}

/// Full energy of `(h, y)` for one sequence.
pub fn total_energy(params: &ModelParams, instances: &[Vec<f64>], h: &LatentAssignment, y: Level) -> Option<f64> {
    assert_eq!(instances.len(), h.len(), "assignment length must match the bag");
    let card = cardinality_potential(params, h, y)?;
    let cuts = params.cuts.decode();
    let nodes: f64 = instances
        .iter()
        .zip(&h.states)
        .map(|(x, s)| ordinal_log_prob(&cuts, dot(&params.beta, x), s.get()))
        .sum();
    let edges: f64 = h.states.windows(2).map(|w| edge_potential(params, w[0], w[1])).sum();
    Some(nodes + edges + card)
}

/// State of the auxiliary chain: an ordinal level plus the flag recording
/// whether the bag label has already been visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentedState {
    pub level: Level,
    pub seen_label: bool,
}

impl AugmentedState {
    pub fn new(level: Level, seen_label: bool) -> Self {
        AugmentedState { level, seen_label }
    }
}

/// Admissibility of an augmented node at 0-based position `t` of `len`.
#[inline]
pub(crate) fn augmented_node_admissible(level: usize, seen_label: bool, t: usize, len: usize, y: usize) -> bool {
    if level > y {
        return false;
    }
    if t == 0 {
        let ok = if seen_label { level == y } else { level < y };
        if !ok {
            return false;
        }
    }
    if t + 1 == len && !seen_label {
        return false;
    }
    true
}

#[inline]
pub(crate) fn augmented_edge_admissible(from_seen: bool, to_level: usize, to_seen: bool, y: usize) -> bool {
    match (from_seen, to_seen) {
        (false, false) => to_level != y,
        (false, true) => to_level == y,
        (true, true) => true,
        (true, false) => false,
    }
}

/// Augmented node score at 1-based time `t` of a length-`len` sequence.
pub fn augmented_node(
    params: &ModelParams,
    x: &[f64],
    state: AugmentedState,
    t: usize,
    len: usize,
    y: Level,
) -> Option<f64> {
    assert!(t >= 1 && t <= len, "time index {t} outside 1..={len}");
    if !augmented_node_admissible(state.level.get(), state.seen_label, t - 1, len, y.get()) {
        return None;
    }
    let bonus = if state.level == y { params.card_weight } else { 0.0 };
    Some(node_potential(params, x, state.level) + bonus)
}

pub fn augmented_edge(params: &ModelParams, from: AugmentedState, to: AugmentedState, y: Level) -> Option<f64> {
    if augmented_edge_admissible(from.seen_label, to.level.get(), to.seen_label, y.get()) {
        Some(edge_potential(params, from.level, to.level))
    } else {
        None
    }
}

/// Softmax-normalised multinomial logistic node scores, row-major `T x L`.
/// `weights` holds one `d`-vector per level.
pub fn multinomial_node_scores(weights: &[Vec<f64>], instances: &[Vec<f64>]) -> Vec<f64> {
    let l = weights.len();
    let mut out = Vec::with_capacity(instances.len() * l);
    for x in instances {
        let start = out.len();
        out.extend(weights.iter().map(|w| dot(w, x)));
        let row = &mut out[start..];
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// `log Σ exp(v)` skipping impossible entries; `IMPOSSIBLE` if all are.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(IMPOSSIBLE, f64::max);
    if is_impossible(m) {
        return IMPOSSIBLE;
    }
    let s: f64 = values
        .iter()
        .filter(|v| !is_impossible(**v))
        .map(|v| (v - m).exp())
        .sum();
    m + s.ln()
}
