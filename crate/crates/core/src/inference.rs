//! Exact inference for MI-DORF and the other latent-chain models.
//!
//! The multi-instance ordinal potential couples every latent state with the
//! bag label. Pairing each state with a binary flag ("the label has been
//! visited so far") turns it into a chain over `2y` augmented states per
//! candidate label `y`, so forward-backward costs `O(T (2L)^2)` per label.

use crate::chain::{self, ChainPosterior, Lattice, PairMode};
use crate::data::{LatentAssignment, Level};
use crate::error::{Error, Result};
use crate::params::{ModelParams, SquareMatrix};
use crate::potentials::{
    augmented_edge_admissible, augmented_node_admissible, log_sum_exp, ordinal_node_scores, total_energy, IMPOSSIBLE,
};

/// How the latent states interact with the bag label.
#[derive(Debug, Clone, Copy)]
pub enum Coupling<'a> {
    /// `max(h) = y` constraint plus `w` per state equal to `y`.
    MultiInstance { card_weight: f64 },
    /// Per-step additive compatibility `table[h_t][y]`, no constraint.
    Compatibility(&'a SquareMatrix),
}

/// Node scores of one sequence together with the label-independent chain
/// parameters, ready for inference under any label.
#[derive(Debug, Clone)]
pub struct ScoredSequence<'a> {
    pub len: usize,
    pub levels: usize,
    /// Row-major `len x levels`.
    pub node: Vec<f64>,
    pub transition: &'a SquareMatrix,
    pub coupling: Coupling<'a>,
}

/// Posterior over the original latent states for a fixed label.
#[derive(Debug, Clone)]
pub struct LabelPosterior {
    pub log_partition: f64,
    /// Row-major `len x levels`: `p(h_t = l | X, y)`.
    pub node: Vec<f64>,
    /// `Σ_t p(h_t = a, h_{t+1} = b | X, y)`, row-major `levels x levels`.
    pub pair_sum: Option<Vec<f64>>,
    /// Per-step pairwise posteriors, row-major `(len-1) x levels x levels`.
    pub pairs: Option<Vec<f64>>,
}

impl<'a> ScoredSequence<'a> {
    pub fn new(
        len: usize,
        levels: usize,
        node: Vec<f64>,
        transition: &'a SquareMatrix,
        coupling: Coupling<'a>,
    ) -> Self {
        debug_assert_eq!(node.len(), len * levels);
        debug_assert_eq!(transition.dim(), levels);
        ScoredSequence {
            len,
            levels,
            node,
            transition,
            coupling,
        }
    }

    /// Number of chain states used for label `y`.
    fn lattice_states(&self, y: usize) -> usize {
        match self.coupling {
            Coupling::MultiInstance { .. } => 2 * y,
            Coupling::Compatibility(_) => self.levels,
        }
    }

    /// Chain lattice for label `y` (1-based). Multi-instance lattices index
    /// augmented states as `flag * y + (level - 1)` with levels `1..=y`.
    pub fn lattice(&self, y: usize) -> Lattice {
        let (n, big_l) = (self.len, self.levels);
        match self.coupling {
            Coupling::MultiInstance { card_weight } => {
                let s = 2 * y;
                let mut node = vec![IMPOSSIBLE; n * s];
                for t in 0..n {
                    for flag in [false, true] {
                        for level in 1..=y {
                            if augmented_node_admissible(level, flag, t, n, y) {
                                let bonus = if level == y { card_weight } else { 0.0 };
                                node[t * s + usize::from(flag) * y + level - 1] =
                                    self.node[t * big_l + level - 1] + bonus;
                            }
                        }
                    }
                }
                let mut edge = vec![IMPOSSIBLE; s * s];
                for from_flag in [false, true] {
                    for from in 1..=y {
                        for to_flag in [false, true] {
                            for to in 1..=y {
                                if augmented_edge_admissible(from_flag, to, to_flag, y) {
                                    let i = usize::from(from_flag) * y + from - 1;
                                    let j = usize::from(to_flag) * y + to - 1;
                                    edge[i * s + j] = self.transition.get(from - 1, to - 1);
                                }
                            }
                        }
                    }
                }
                Lattice {
                    len: n,
                    states: s,
                    node,
                    edge,
                }
            }
            Coupling::Compatibility(table) => {
                let mut node = self.node.clone();
                for row in node.chunks_mut(big_l) {
                    for (l, v) in row.iter_mut().enumerate() {
                        *v += table.get(l, y - 1);
                    }
                }
                Lattice {
                    len: n,
                    states: big_l,
                    node,
                    edge: self.transition.as_slice().to_vec(),
                }
            }
        }
    }

    /// Log-partition restricted to label `y`; `None` if no path is admissible.
    pub fn log_partition(&self, y: Level) -> Option<f64> {
        chain::log_partition(&self.lattice(y.get()))
    }

    /// Log-partitions for every label `1..=L` (impossible labels as `IMPOSSIBLE`).
    pub fn label_log_partitions(&self) -> Vec<f64> {
        (1..=self.levels)
            .map(|y| self.log_partition(Level::new(y)).unwrap_or(IMPOSSIBLE))
            .collect()
    }

    pub fn label_posterior(&self) -> Vec<f64> {
        softmax(&self.label_log_partitions())
    }

    /// Conditional posteriors given `y`, with augmented flags summed out.
    pub fn posterior(&self, y: Level, mode: PairMode) -> Option<LabelPosterior> {
        let y = y.get();
        let post = chain::forward_backward(&self.lattice(y), mode)?;
        Some(self.collapse(post, y))
    }

    fn collapse(&self, post: ChainPosterior, y: usize) -> LabelPosterior {
        let (n, big_l) = (self.len, self.levels);
        let s = self.lattice_states(y);
        // Lattice state -> original level index.
        let level_of = |state: usize| match self.coupling {
            Coupling::MultiInstance { .. } => state % y,
            Coupling::Compatibility(_) => state,
        };
        let mut node = vec![0.0; n * big_l];
        for t in 0..n {
            for st in 0..s {
                node[t * big_l + level_of(st)] += post.node[t * s + st];
            }
        }
        let fold_pairs = |table: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; big_l * big_l];
            for i in 0..s {
                for j in 0..s {
                    out[level_of(i) * big_l + level_of(j)] += table[i * s + j];
                }
            }
            out
        };
        let pair_sum = post.pair_sum.as_deref().map(fold_pairs);
        let pairs = post
            .pairs
            .as_deref()
            .map(|full| full.chunks(s * s).flat_map(|step| fold_pairs(step)).collect());
        LabelPosterior {
            log_partition: post.log_partition,
            node,
            pair_sum,
            pairs,
        }
    }
}

/// Softmax over log-scores; impossible entries get probability 0.
pub fn softmax(log_scores: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_scores);
    log_scores
        .iter()
        .map(|&v| if v == IMPOSSIBLE { 0.0 } else { (v - z).exp() })
        .collect()
}

/// First index of the maximum, so ties go to the lower level.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Exact node and pairwise marginals of the latent ordinal states.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub len: usize,
    pub levels: usize,
    /// Row-major `len x levels`.
    pub node: Vec<f64>,
    /// Row-major `(len-1) x levels x levels`.
    pub pair: Vec<f64>,
}

impl Marginals {
    /// `p(h_t = level)` with 0-based `t`.
    pub fn node(&self, t: usize, level: Level) -> f64 {
        self.node[t * self.levels + level.index()]
    }

    /// `p(h_t = a, h_{t+1} = b)` with 0-based `t`.
    pub fn pair(&self, t: usize, a: Level, b: Level) -> f64 {
        self.pair[(t * self.levels + a.index()) * self.levels + b.index()]
    }

    pub fn node_row(&self, t: usize) -> &[f64] {
        &self.node[t * self.levels..(t + 1) * self.levels]
    }
}

impl ModelParams {
    pub fn scored<'a>(&'a self, instances: &[Vec<f64>]) -> ScoredSequence<'a> {
        ScoredSequence::new(
            instances.len(),
            self.num_levels(),
            ordinal_node_scores(&self.beta, &self.cuts, instances),
            &self.transition,
            Coupling::MultiInstance {
                card_weight: self.card_weight,
            },
        )
    }
}

pub fn log_partition_given_label(params: &ModelParams, instances: &[Vec<f64>], y: Level) -> Option<f64> {
    params.scored(instances).log_partition(y)
}

/// `P(y | X)` for `y = 1..=L`.
pub fn label_posterior(params: &ModelParams, instances: &[Vec<f64>]) -> Vec<f64> {
    params.scored(instances).label_posterior()
}

pub fn marginals_given_label(params: &ModelParams, instances: &[Vec<f64>], y: Level) -> Option<Marginals> {
    let post = params.scored(instances).posterior(y, PairMode::Full)?;
    Some(Marginals {
        len: instances.len(),
        levels: params.num_levels(),
        node: post.node,
        pair: post.pairs.unwrap_or_default(),
    })
}

pub fn predict_bag_label(params: &ModelParams, instances: &[Vec<f64>]) -> Level {
    Level::from_index(argmax(&label_posterior(params, instances)))
}

/// Bag label plus per-instance labels conditioned on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bag: Level,
    pub instances: Vec<Level>,
    pub bag_posterior: Vec<f64>,
}

/// Instance labels are the per-step argmax of `p(h_t | X, y*)` with `y*`
/// the predicted bag label.
pub fn predict_sequence(scored: &ScoredSequence<'_>) -> Prediction {
    let posterior = scored.label_posterior();
    let bag = Level::from_index(argmax(&posterior));
    let instances = match scored.posterior(bag, PairMode::None) {
        Some(post) => post
            .node
            .chunks(scored.levels)
            .map(|row| Level::from_index(argmax(row)))
            .collect(),
        None => vec![bag; scored.len],
    };
    Prediction {
        bag,
        instances,
        bag_posterior: posterior,
    }
}

pub fn predict_instance_labels(params: &ModelParams, instances: &[Vec<f64>]) -> Vec<Level> {
    predict_sequence(&params.scored(instances)).instances
}

/// Largest `L^T` the enumeration oracle accepts.
pub const ORACLE_GUARD: u128 = 1_000_000;

/// Every assignment in `{1..L}^T` in lexicographic order.
pub fn enumerate_assignments(levels: usize, len: usize) -> Result<Vec<LatentAssignment>> {
    let total = (levels as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if total > ORACLE_GUARD {
        return Err(Error::EnumerationTooLarge(total));
    }
    let mut out = Vec::with_capacity(total as usize);
    for code in 0..total as usize {
        let mut c = code;
        let mut states = vec![Level::new(1); len];
        for s in states.iter_mut().rev() {
            *s = Level::from_index(c % levels);
            c /= levels;
        }
        out.push(LatentAssignment::new(states));
    }
    Ok(out)
}

/// Brute-force log-partition and marginals given `y`, summing
/// [`total_energy`] over all assignments. Test oracle for the chain.
pub fn oracle_enumerate(params: &ModelParams, instances: &[Vec<f64>], y: Level) -> Result<(Option<f64>, Marginals)> {
    let (n, big_l) = (instances.len(), params.num_levels());
    let assignments = enumerate_assignments(big_l, n)?;
    let scored: Vec<(f64, &LatentAssignment)> = assignments
        .iter()
        .filter_map(|h| total_energy(params, instances, h, y).map(|e| (e, h)))
        .collect();
    let mut marg = Marginals {
        len: n,
        levels: big_l,
        node: vec![0.0; n * big_l],
        pair: vec![0.0; n.saturating_sub(1) * big_l * big_l],
    };
    if scored.is_empty() {
        return Ok((None, marg));
    }
    let energies: Vec<f64> = scored.iter().map(|(e, _)| *e).collect();
    let z = log_sum_exp(&energies);
    for (e, h) in &scored {
        let p = (e - z).exp();
        for (t, s) in h.states.iter().enumerate() {
            marg.node[t * big_l + s.index()] += p;
            if t + 1 < n {
                let next = h.states[t + 1];
                marg.pair[(t * big_l + s.index()) * big_l + next.index()] += p;
            }
        }
    }
    Ok((Some(z), marg))
}
