//! Forward-backward over a linear chain with time-invariant edge scores.
//!
//! The fast path runs the recursion on exponentiated scores rescaled at
//! every step, carrying the scale factors in log space; it is the log-domain
//! recursion with the per-step maximum factored out. When a step's mass
//! underflows, the whole pass is redone with explicit log-sum-exp.

use crate::potentials::{is_impossible, log_sum_exp, IMPOSSIBLE};

/// Node and edge log-scores of one chain. Entries equal to [`IMPOSSIBLE`]
/// mark forbidden states and transitions.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub len: usize,
    pub states: usize,
    /// Row-major `len x states`.
    pub node: Vec<f64>,
    /// Row-major `states x states`, shared by every step.
    pub edge: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    None,
    /// `Σ_t p(s_t = i, s_{t+1} = j)` as one `states x states` table.
    Summed,
    /// One `states x states` table per step.
    Full,
}

#[derive(Debug, Clone)]
pub struct ChainPosterior {
    pub log_partition: f64,
    /// Row-major `len x states`.
    pub node: Vec<f64>,
    pub pair_sum: Option<Vec<f64>>,
    /// Row-major `(len - 1) x states x states`.
    pub pairs: Option<Vec<f64>>,
}

impl Lattice {
    fn node_row(&self, t: usize) -> &[f64] {
        &self.node[t * self.states..(t + 1) * self.states]
    }
}

fn finite_max(values: &[f64]) -> Option<f64> {
    let m = values.iter().copied().fold(IMPOSSIBLE, f64::max);
    (!is_impossible(m)).then_some(m)
}

struct Scaled {
    alpha: Vec<f64>,
    scale: Vec<f64>,
    emission: Vec<f64>,
    edge: Vec<f64>,
    log_partition: f64,
}

enum ForwardOutcome {
    Done(Scaled),
    Impossible,
    Underflow,
}

fn scaled_forward(lat: &Lattice) -> ForwardOutcome {
    let (n, s) = (lat.len, lat.states);
    let edge_max = if n > 1 {
        match finite_max(&lat.edge) {
            Some(m) => m,
            None => return ForwardOutcome::Impossible,
        }
    } else {
        0.0
    };
    let edge: Vec<f64> = lat.edge.iter().map(|&e| (e - edge_max).exp()).collect();
    let mut emission = vec![0.0; n * s];
    let mut alpha = vec![0.0; n * s];
    let mut scale = vec![0.0; n];
    let mut log_partition = 0.0;
    for t in 0..n {
        let row = lat.node_row(t);
        let Some(m) = finite_max(row) else {
            return ForwardOutcome::Impossible;
        };
        let em = &mut emission[t * s..(t + 1) * s];
        for (e, &v) in em.iter_mut().zip(row) {
            *e = (v - m).exp();
        }
        let (prev, cur) = alpha.split_at_mut(t * s);
        let cur = &mut cur[..s];
        if t == 0 {
            cur.copy_from_slice(em);
        } else {
            let prev = &prev[(t - 1) * s..];
            for (i, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let er = &edge[i * s..(i + 1) * s];
                for (c, &e) in cur.iter_mut().zip(er) {
                    *c += a * e;
                }
            }
            for (c, &e) in cur.iter_mut().zip(em.iter()) {
                *c *= e;
            }
        }
        let c: f64 = cur.iter().sum();
        if !(c > f64::MIN_POSITIVE) || !c.is_finite() {
            return ForwardOutcome::Underflow;
        }
        cur.iter_mut().for_each(|v| *v /= c);
        scale[t] = c;
        log_partition += m + c.ln() + if t > 0 { edge_max } else { 0.0 };
    }
    ForwardOutcome::Done(Scaled {
        alpha,
        scale,
        emission,
        edge,
        log_partition,
    })
}

fn log_forward(lat: &Lattice) -> Vec<f64> {
    let (n, s) = (lat.len, lat.states);
    let mut alpha = vec![IMPOSSIBLE; n * s];
    alpha[..s].copy_from_slice(lat.node_row(0));
    let mut terms = vec![IMPOSSIBLE; s];
    for t in 1..n {
        for j in 0..s {
            let node = lat.node[t * s + j];
            if is_impossible(node) {
                continue;
            }
            for i in 0..s {
                let a = alpha[(t - 1) * s + i];
                let e = lat.edge[i * s + j];
                terms[i] = if is_impossible(a) || is_impossible(e) {
                    IMPOSSIBLE
                } else {
                    a + e
                };
            }
            let acc = log_sum_exp(&terms);
            if !is_impossible(acc) {
                alpha[t * s + j] = acc + node;
            }
        }
    }
    alpha
}

fn log_backward(lat: &Lattice) -> Vec<f64> {
    let (n, s) = (lat.len, lat.states);
    let mut beta = vec![IMPOSSIBLE; n * s];
    beta[(n - 1) * s..].iter_mut().for_each(|b| *b = 0.0);
    let mut terms = vec![IMPOSSIBLE; s];
    for t in (0..n - 1).rev() {
        for i in 0..s {
            for j in 0..s {
                let e = lat.edge[i * s + j];
                let node = lat.node[(t + 1) * s + j];
                let b = beta[(t + 1) * s + j];
                terms[j] = if is_impossible(e) || is_impossible(node) || is_impossible(b) {
                    IMPOSSIBLE
                } else {
                    e + node + b
                };
            }
            beta[t * s + i] = log_sum_exp(&terms);
        }
    }
    beta
}

fn log_domain_posterior(lat: &Lattice, mode: PairMode) -> Option<ChainPosterior> {
    let (n, s) = (lat.len, lat.states);
    let alpha = log_forward(lat);
    let log_partition = log_sum_exp(&alpha[(n - 1) * s..]);
    if is_impossible(log_partition) {
        return None;
    }
    let beta = log_backward(lat);
    let prob = |v: f64| {
        if is_impossible(v) {
            0.0
        } else {
            (v - log_partition).exp()
        }
    };
    let node: Vec<f64> = alpha
        .iter()
        .zip(&beta)
        .map(|(&a, &b)| {
            if is_impossible(a) || is_impossible(b) {
                0.0
            } else {
                prob(a + b)
            }
        })
        .collect();
    let mut pair_sum = (mode == PairMode::Summed).then(|| vec![0.0; s * s]);
    let mut pairs = (mode == PairMode::Full).then(|| vec![0.0; n.saturating_sub(1) * s * s]);
    if mode != PairMode::None {
        for t in 0..n.saturating_sub(1) {
            for i in 0..s {
                let a = alpha[t * s + i];
                if is_impossible(a) {
                    continue;
                }
                for j in 0..s {
                    let parts = [lat.edge[i * s + j], lat.node[(t + 1) * s + j], beta[(t + 1) * s + j]];
                    if parts.iter().any(|&p| is_impossible(p)) {
                        continue;
                    }
                    let p = prob(a + parts.iter().sum::<f64>());
                    if let Some(sum) = pair_sum.as_mut() {
                        sum[i * s + j] += p;
                    }
                    if let Some(full) = pairs.as_mut() {
                        full[(t * s + i) * s + j] = p;
                    }
                }
            }
        }
    }
    Some(ChainPosterior {
        log_partition,
        node,
        pair_sum,
        pairs,
    })
}

/// `log Σ_paths exp(score)`, or `None` when no admissible path exists.
pub fn log_partition(lat: &Lattice) -> Option<f64> {
    assert!(lat.len >= 1, "empty chain");
    match scaled_forward(lat) {
        ForwardOutcome::Done(sc) => Some(sc.log_partition),
        ForwardOutcome::Impossible => None,
        ForwardOutcome::Underflow => {
            let alpha = log_forward(lat);
            let z = log_sum_exp(&alpha[(lat.len - 1) * lat.states..]);
            (!is_impossible(z)).then_some(z)
        }
    }
}

/// Log-partition plus node (and optionally pairwise) posteriors.
pub fn forward_backward(lat: &Lattice, mode: PairMode) -> Option<ChainPosterior> {
    assert!(lat.len >= 1, "empty chain");
    let sc = match scaled_forward(lat) {
        ForwardOutcome::Done(sc) => sc,
        ForwardOutcome::Impossible => return None,
        ForwardOutcome::Underflow => return log_domain_posterior(lat, mode),
    };
    let (n, s) = (lat.len, lat.states);
    let mut beta = vec![0.0; n * s];
    beta[(n - 1) * s..].iter_mut().for_each(|b| *b = 1.0);
    let mut tmp = vec![0.0; s];
    for t in (0..n - 1).rev() {
        let next = &beta[(t + 1) * s..(t + 2) * s];
        let em = &sc.emission[(t + 1) * s..(t + 2) * s];
        let c = sc.scale[t + 1];
        for (v, (&e, &b)) in tmp.iter_mut().zip(em.iter().zip(next)) {
            *v = e * b / c;
        }
        for i in 0..s {
            let er = &sc.edge[i * s..(i + 1) * s];
            beta[t * s + i] = er.iter().zip(&tmp).map(|(a, b)| a * b).sum();
        }
    }
    let node: Vec<f64> = sc.alpha.iter().zip(&beta).map(|(a, b)| a * b).collect();
    let mut pair_sum = (mode == PairMode::Summed).then(|| vec![0.0; s * s]);
    let mut pairs = (mode == PairMode::Full).then(|| vec![0.0; n.saturating_sub(1) * s * s]);
    if mode != PairMode::None {
        for t in 0..n.saturating_sub(1) {
            let em = &sc.emission[(t + 1) * s..(t + 2) * s];
            let next = &beta[(t + 1) * s..(t + 2) * s];
            let c = sc.scale[t + 1];
            for (v, (&e, &b)) in tmp.iter_mut().zip(em.iter().zip(next)) {
                *v = e * b / c;
            }
            for i in 0..s {
                let a = sc.alpha[t * s + i];
                if a == 0.0 {
                    continue;
                }
                let er = &sc.edge[i * s..(i + 1) * s];
                if let Some(sum) = pair_sum.as_mut() {
                    let row = &mut sum[i * s..(i + 1) * s];
                    for ((r, &e), &v) in row.iter_mut().zip(er).zip(&tmp) {
                        *r += a * e * v;
                    }
                }
                if let Some(full) = pairs.as_mut() {
                    let row = &mut full[(t * s + i) * s..(t * s + i + 1) * s];
                    for ((r, &e), &v) in row.iter_mut().zip(er).zip(&tmp) {
                        *r = a * e * v;
                    }
                }
            }
        }
    }
    Some(ChainPosterior {
        log_partition: sc.log_partition,
        node,
        pair_sum,
        pairs,
    })
}
