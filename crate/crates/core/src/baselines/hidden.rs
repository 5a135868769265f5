//! Latent-chain baselines: MI-HCRF, HCRF and HCORF.
//!
//! All three reuse the chain inference and likelihood gradient of MI-DORF.
//! They differ in the node potential (multinomial logistic vs ordinal
//! probit) and in how hidden states meet the sequence label (the
//! multi-instance max constraint vs a per-step compatibility table).

use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::Result;
use crate::inference::{Coupling, ScoredSequence};
use crate::learning::{
    best_of_restarts, fit_chain, init_rng, multinomial_node_gradient, ordinal_node_gradient, small_normal_vec,
    BagStatistics, ChainModel, CouplingGradient, TrainConfig, TrainTrace,
};
use crate::params::{CutPoints, SquareMatrix};
use crate::potentials::{dot, multinomial_node_scores, ordinal_node_scores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeModel {
    /// One weight vector per level; softmax over levels.
    Multinomial {
        weights: Vec<Vec<f64>>,
    },
    Ordinal {
        beta: Vec<f64>,
        cuts: CutPoints,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelCoupling {
    MultiInstance {
        card_weight: f64,
    },
    /// `table[h][y]`, added at every step.
    Compatibility {
        table: SquareMatrix,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenChainKind {
    MiHcrf,
    Hcrf,
    Hcorf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenChainParams {
    pub node: NodeModel,
    pub transition: SquareMatrix,
    pub coupling: LabelCoupling,
}

impl HiddenChainParams {
    fn node_len(&self) -> usize {
        match &self.node {
            NodeModel::Multinomial { weights } => weights.iter().map(Vec::len).sum(),
            NodeModel::Ordinal { beta, cuts } => beta.len() + cuts.num_levels() - 1,
        }
    }
}

/// Random node weights (`N(0, 0.01²)`), ordinal cuts at standard normal
/// quantiles, zero transitions and coupling.
pub fn initial_hidden_chain(
    kind: HiddenChainKind,
    num_levels: usize,
    feature_dim: usize,
    seed: u64,
    restart: usize,
) -> HiddenChainParams {
    let mut rng = init_rng(seed, restart);
    let node = match kind {
        HiddenChainKind::MiHcrf | HiddenChainKind::Hcrf => NodeModel::Multinomial {
            weights: (0..num_levels)
                .map(|_| small_normal_vec(&mut rng, feature_dim))
                .collect(),
        },
        HiddenChainKind::Hcorf => NodeModel::Ordinal {
            beta: small_normal_vec(&mut rng, feature_dim),
            cuts: CutPoints::standard_normal_quantiles(num_levels),
        },
    };
    let coupling = match kind {
        HiddenChainKind::MiHcrf => LabelCoupling::MultiInstance { card_weight: 0.0 },
        HiddenChainKind::Hcrf | HiddenChainKind::Hcorf => LabelCoupling::Compatibility {
            table: SquareMatrix::zeros(num_levels),
        },
    };
    HiddenChainParams {
        node,
        transition: SquareMatrix::zeros(num_levels),
        coupling,
    }
}

impl ChainModel for HiddenChainParams {
    fn num_levels(&self) -> usize {
        self.transition.dim()
    }

    fn scored<'a>(&'a self, instances: &[Vec<f64>]) -> ScoredSequence<'a> {
        let node = match &self.node {
            NodeModel::Multinomial { weights } => multinomial_node_scores(weights, instances),
            NodeModel::Ordinal { beta, cuts } => ordinal_node_scores(beta, cuts, instances),
        };
        let coupling = match &self.coupling {
            LabelCoupling::MultiInstance { card_weight } => Coupling::MultiInstance {
                card_weight: *card_weight,
            },
            LabelCoupling::Compatibility { table } => Coupling::Compatibility(table),
        };
        ScoredSequence::new(instances.len(), self.num_levels(), node, &self.transition, coupling)
    }

    /// `[node block | W | coupling]`; the node block is the row-major
    /// weight matrix or `[beta | first_cut | log_gaps]`.
    fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        match &self.node {
            NodeModel::Multinomial { weights } => weights.iter().for_each(|w| v.extend(w)),
            NodeModel::Ordinal { beta, cuts } => {
                v.extend(beta);
                v.push(cuts.first_cut);
                v.extend(&cuts.log_gaps);
            }
        }
        v.extend(self.transition.as_slice());
        match &self.coupling {
            LabelCoupling::MultiInstance { card_weight } => v.push(*card_weight),
            LabelCoupling::Compatibility { table } => v.extend(table.as_slice()),
        }
        v
    }

    fn from_vector(&self, v: &[f64]) -> Self {
        let big_l = self.num_levels();
        let (node_v, rest) = v.split_at(self.node_len());
        let (w_v, c_v) = rest.split_at(big_l * big_l);
        let node = match &self.node {
            NodeModel::Multinomial { weights } => {
                let d = weights[0].len();
                NodeModel::Multinomial {
                    weights: node_v.chunks(d.max(1)).take(big_l).map(<[f64]>::to_vec).collect(),
                }
            }
            NodeModel::Ordinal { beta, .. } => {
                let d = beta.len();
                NodeModel::Ordinal {
                    beta: node_v[..d].to_vec(),
                    cuts: CutPoints {
                        first_cut: node_v[d],
                        log_gaps: node_v[d + 1..].to_vec(),
                    },
                }
            }
        };
        let coupling = match &self.coupling {
            LabelCoupling::MultiInstance { .. } => LabelCoupling::MultiInstance { card_weight: c_v[0] },
            LabelCoupling::Compatibility { .. } => LabelCoupling::Compatibility {
                table: SquareMatrix::from_row_major(big_l, c_v.to_vec()).expect("layout matches"),
            },
        };
        HiddenChainParams {
            node,
            transition: SquareMatrix::from_row_major(big_l, w_v.to_vec()).expect("layout matches"),
            coupling,
        }
    }

    /// Node weights (not cuts), `W` and the compatibility table.
    fn penalty(&self) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.to_vector().len()];
        let mut value = 0.0;
        let mut at = 0;
        match &self.node {
            NodeModel::Multinomial { weights } => {
                for w in weights {
                    value += dot(w, w);
                    for wi in w {
                        grad[at] = 2.0 * wi;
                        at += 1;
                    }
                }
            }
            NodeModel::Ordinal { beta, cuts } => {
                value += dot(beta, beta);
                for b in beta {
                    grad[at] = 2.0 * b;
                    at += 1;
                }
                at += cuts.num_levels() - 1;
            }
        }
        value += self.transition.frobenius_sq();
        for w in self.transition.as_slice() {
            grad[at] = 2.0 * w;
            at += 1;
        }
        if let LabelCoupling::Compatibility { table } = &self.coupling {
            value += table.frobenius_sq();
            for g in table.as_slice() {
                grad[at] = 2.0 * g;
                at += 1;
            }
        }
        (value, grad)
    }

    fn add_gradient(&self, instances: &[Vec<f64>], stats: &BagStatistics, grad: &mut [f64]) {
        let big_l = self.num_levels();
        let (g_node, rest) = grad.split_at_mut(self.node_len());
        let (g_w, g_c) = rest.split_at_mut(big_l * big_l);
        match &self.node {
            NodeModel::Multinomial { weights } => {
                let scores = multinomial_node_scores(weights, instances);
                multinomial_node_gradient(weights, instances, &scores, &stats.node_coeff, g_node);
            }
            NodeModel::Ordinal { beta, cuts } => {
                let (g_beta, g_cuts) = g_node.split_at_mut(beta.len());
                ordinal_node_gradient(beta, cuts, instances, &stats.node_coeff, g_beta, g_cuts);
            }
        }
        g_w.iter_mut().zip(&stats.transition_coeff).for_each(|(g, c)| *g += c);
        match &stats.coupling {
            CouplingGradient::CardWeight(c) => g_c[0] += c,
            CouplingGradient::Compatibility(table) => {
                g_c.iter_mut().zip(table).for_each(|(g, c)| *g += c);
            }
        }
    }
}

pub fn fit_hidden_chain(
    kind: HiddenChainKind,
    set: &TrainingSet<'_>,
    config: &TrainConfig,
) -> Result<(HiddenChainParams, TrainTrace)> {
    best_of_restarts(config.restarts, |r| {
        let init = initial_hidden_chain(kind, set.num_levels(), set.feature_dim, config.seed, r);
        fit_chain(init, set, config)
    })
}
