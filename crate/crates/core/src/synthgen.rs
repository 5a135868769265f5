//! Synthetic weakly-labelled ordinal sequences with known instance labels.
//!
//! Each dataset draws a transition matrix, a random ordinal probit
//! regressor and a pool of Gaussian feature vectors. Sequences follow the
//! Markov chain; each state picks a pool vector with probability
//! proportional to the regressor's probability of that state, then gets
//! Gaussian noise. The bag label is the maximum state.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Level, OrdinalScale};
use crate::error::{Error, Result};
use crate::params::CutPoints;
use crate::potentials::{dot, ordinal_log_prob};

/// How rows of the random transition matrix are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransitionPrior {
    /// Each row uniform on the simplex.
    Dirichlet,
    /// Row `i` keeps state `i` with probability `U(min_stay, max_stay)`; the
    /// rest is spread by a flat Dirichlet draw damped by
    /// `decay^(|i-j|-1)` so jumps favour nearby levels.
    Sticky { min_stay: f64, max_stay: f64, decay: f64 },
}

impl Default for TransitionPrior {
    fn default() -> Self {
        TransitionPrior::Sticky {
            min_stay: 0.9,
            max_stay: 0.98,
            decay: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_datasets: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_val: usize,
    pub length_range: [usize; 2],
    pub feature_dim: usize,
    pub num_levels: usize,
    pub noise_sigma: f64,
    /// Standard deviation of the generator's projection entries.
    pub beta_scale: f64,
    pub pool_size: usize,
    pub seed: u64,
    pub transition_prior: TransitionPrior,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_datasets: 10,
            n_train: 100,
            n_test: 150,
            n_val: 50,
            length_range: [50, 75],
            feature_dim: 10,
            num_levels: 6,
            noise_sigma: 0.25,
            beta_scale: 1.0,
            pool_size: 1000,
            seed: 0,
            transition_prior: TransitionPrior::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synthetic config: {m}")));
        if self.num_datasets == 0 || self.n_train == 0 || self.n_test == 0 || self.n_val == 0 {
            return bad("dataset and split sizes must be positive");
        }
        if self.length_range[0] == 0 || self.length_range[0] > self.length_range[1] {
            return bad("length_range must be positive and ordered");
        }
        if !(self.beta_scale > 0.0) || !self.beta_scale.is_finite() {
            return bad("beta_scale must be positive");
        }
        if self.feature_dim == 0 || self.pool_size == 0 {
            return bad("feature_dim and pool_size must be positive");
        }
        if self.num_levels < 2 {
            return bad("num_levels must be at least 2");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative");
        }
        if let TransitionPrior::Sticky {
            min_stay,
            max_stay,
            decay,
        } = self.transition_prior
        {
            if !(0.0..=1.0).contains(&min_stay) || !(min_stay..=1.0).contains(&max_stay) || !(decay > 0.0) {
                return bad("sticky prior needs 0 <= min_stay <= max_stay <= 1 and decay > 0");
            }
        }
        Ok(())
    }
}

/// Parameters the generator used for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub transition: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    /// Interior cut-points `b_1..b_{L-1}`.
    pub cuts: Vec<f64>,
}

impl GeneratorTruth {
    pub fn level_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut cuts = vec![f64::NEG_INFINITY];
        cuts.extend(&self.cuts);
        cuts.push(f64::INFINITY);
        let mu = dot(&self.beta, x);
        (1..=self.cuts.len() + 1)
            .map(|l| ordinal_log_prob(&cuts, mu, l).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub index: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub val: Dataset,
    pub truth: GeneratorTruth,
}

/// The generator's random stream for dataset `index`.
pub fn dataset_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn sample_transition_matrix(rng: &mut impl Rng, num_levels: usize, prior: &TransitionPrior) -> Vec<Vec<f64>> {
    (0..num_levels)
        .map(|i| {
            // Normalised unit exponentials are a flat Dirichlet draw.
            let draw: Vec<f64> = (0..num_levels).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let row: Vec<f64> = match *prior {
                TransitionPrior::Dirichlet => draw,
                TransitionPrior::Sticky {
                    min_stay,
                    max_stay,
                    decay,
                } => {
                    let stay = if max_stay > min_stay {
                        rng.random_range(min_stay..=max_stay)
                    } else {
                        min_stay
                    };
                    let spread: Vec<f64> = draw
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| {
                            if j == i {
                                0.0
                            } else {
                                p * decay.powi(i.abs_diff(j) as i32 - 1)
                            }
                        })
                        .collect();
                    let total: f64 = spread.iter().sum();
                    spread
                        .iter()
                        .enumerate()
                        .map(|(j, s)| {
                            let moved = if total > 0.0 { (1.0 - stay) * s / total } else { 0.0 };
                            moved + if j == i { stay } else { 0.0 }
                        })
                        .collect()
                }
            };
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect()
}

/// Markov path with a uniform first state; levels are 0-based indices.
pub fn simulate_chain(rng: &mut impl Rng, transition: &[Vec<f64>], len: usize) -> Vec<usize> {
    let rows: Vec<WeightedIndex<f64>> = transition
        .iter()
        .map(|r| WeightedIndex::new(r).expect("row-stochastic"))
        .collect();
    let mut states = Vec::with_capacity(len);
    let mut s = rng.random_range(0..transition.len());
    for t in 0..len {
        if t > 0 {
            s = rows[s].sample(rng);
        }
        states.push(s);
    }
    states
}

/// Stationary distribution by power iteration.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Vec<f64> {
    let n = transition.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for (i, row) in transition.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

fn standard_normal_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Equal-mass empirical quantiles of `values` (sorted copy).
fn empirical_cuts(values: &[f64], num_levels: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..num_levels)
        .map(|k| {
            let pos = k as f64 / num_levels as f64 * (n - 1) as f64;
            let (lo, frac) = (pos.floor() as usize, pos.fract());
            sorted[lo] + frac * (sorted[(lo + 1).min(n - 1)] - sorted[lo])
        })
        .collect()
}

struct Sampler {
    pool: Vec<Vec<f64>>,
    per_level: Vec<WeightedIndex<f64>>,
    transition: Vec<Vec<f64>>,
    noise: Option<Normal<f64>>,
}

impl Sampler {
    fn bag(&self, rng: &mut ChaCha8Rng, id: String, length_range: [usize; 2]) -> Bag {
        let len = rng.random_range(length_range[0]..=length_range[1]);
        let states = simulate_chain(rng, &self.transition, len);
        let instances = states
            .iter()
            .map(|&s| {
                let x = &self.pool[self.per_level[s].sample(rng)];
                match &self.noise {
                    Some(noise) => x.iter().map(|v| v + noise.sample(rng)).collect(),
                    None => x.clone(),
                }
            })
            .collect();
        let instance_labels: Vec<Level> = states.iter().map(|&s| Level::from_index(s)).collect();
        Bag {
            id,
            instances,
            label: *instance_labels.iter().max().expect("non-empty"),
            instance_labels: Some(instance_labels),
        }
    }
}

const MAX_CUT_ATTEMPTS: usize = 10;

/// Dataset `index` of the suite; reproducible from `(config.seed, index)`.
pub fn generate_dataset(config: &SynthConfig, index: usize) -> Result<GeneratedDataset> {
    config.validate()?;
    let (big_l, d) = (config.num_levels, config.feature_dim);
    let mut rng = dataset_rng(config.seed, index);
    let transition = sample_transition_matrix(&mut rng, big_l, &config.transition_prior);

    let mut attempt = 0;
    let (truth, pool, per_level) = loop {
        attempt += 1;
        let beta: Vec<f64> = standard_normal_vec(&mut rng, d)
            .iter()
            .map(|b| b * config.beta_scale)
            .collect();
        let pool: Vec<Vec<f64>> = (0..config.pool_size)
            .map(|_| standard_normal_vec(&mut rng, d))
            .collect();
        let proj: Vec<f64> = pool.iter().map(|x| dot(&beta, x)).collect();
        let cuts = empirical_cuts(&proj, big_l);
        let truth = GeneratorTruth {
            transition: transition.clone(),
            beta,
            cuts,
        };
        let ordered = CutPoints::encode(&truth.cuts).is_ok();
        let probs: Vec<Vec<f64>> = pool.iter().map(|x| truth.level_probs(x)).collect();
        let per_level: std::result::Result<Vec<_>, _> = (0..big_l)
            .map(|l| WeightedIndex::new(probs.iter().map(|p| p[l])))
            .collect();
        match per_level {
            Ok(w) if ordered => break (truth, pool, w),
            _ if attempt < MAX_CUT_ATTEMPTS => continue,
            _ => {
                return Err(Error::Numerical(format!(
                    "dataset {index}: some level has no pool mass after {MAX_CUT_ATTEMPTS} attempts"
                )))
            }
        }
    };

    let sampler = Sampler {
        pool,
        per_level,
        transition,
        noise: (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).expect("valid sigma")),
    };
    let scale = OrdinalScale::new(big_l)?;
    let mut split = |name: &str, n: usize| {
        let bags = (0..n)
            .map(|k| sampler.bag(&mut rng, format!("d{index}-{name}-{k:03}"), config.length_range))
            .collect();
        Dataset::new(bags, scale, d)
    };
    let train = split("train", config.n_train);
    let test = split("test", config.n_test);
    let val = split("val", config.n_val);
    Ok(GeneratedDataset {
        index,
        train,
        test,
        val,
        truth,
    })
}

pub fn generate_suite(config: &SynthConfig) -> Result<Vec<GeneratedDataset>> {
    (0..config.num_datasets).map(|i| generate_dataset(config, i)).collect()
}

/// `Σ_k p(l | pool_k)` for every level `l`.
pub fn pool_level_mass(truth: &GeneratorTruth, pool: &[Vec<f64>]) -> Vec<f64> {
    let mut mass = vec![0.0; truth.cuts.len() + 1];
    for v in pool {
        for (m, p) in mass.iter_mut().zip(truth.level_probs(v)) {
            *m += p;
        }
    }
    mass
}

/// Posterior of the state behind a noise-free pool vector `x` under a
/// uniform state prior.
pub fn bayes_instance_posterior(truth: &GeneratorTruth, level_mass: &[f64], x: &[f64]) -> Vec<f64> {
    let un: Vec<f64> = truth
        .level_probs(x)
        .iter()
        .zip(level_mass)
        .map(|(p, m)| p / m)
        .collect();
    let z: f64 = un.iter().sum();
    un.iter().map(|u| u / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small() -> SynthConfig {
        SynthConfig {
            num_datasets: 3,
            n_train: 20,
            n_test: 10,
            n_val: 5,
            ..Default::default()
        }
    }

    #[test]
    fn bags_follow_the_max_rule() {
        let ds = generate_dataset(&small(), 0).unwrap();
        for split in [&ds.train, &ds.test, &ds.val] {
            split.ensure_valid().unwrap();
            for b in &split.bags {
                let labels = b.instance_labels.as_ref().unwrap();
                assert_eq!(b.label, *labels.iter().max().unwrap());
            }
        }
    }

    #[test]
    fn split_sizes_and_lengths() {
        let config = small();
        let ds = generate_dataset(&config, 1).unwrap();
        assert_eq!(
            (ds.train.bags.len(), ds.test.bags.len(), ds.val.bags.len()),
            (20, 10, 5)
        );
        for b in ds.train.bags.iter().chain(&ds.test.bags) {
            assert!((50..=75).contains(&b.len()));
            assert!(b.instances.iter().all(|x| x.len() == 10));
        }
    }

    #[test]
    fn mean_length_is_near_midpoint() {
        let config = SynthConfig {
            n_train: 1000,
            n_test: 1,
            n_val: 1,
            feature_dim: 2,
            pool_size: 100,
            ..Default::default()
        };
        let ds = generate_dataset(&config, 0).unwrap();
        let mean = ds.train.bags.iter().map(|b| b.len() as f64).sum::<f64>() / 1000.0;
        assert!((61.0..=64.0).contains(&mean), "mean length {mean}");
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let mut rng = dataset_rng(3, 0);
        for prior in [TransitionPrior::Dirichlet, TransitionPrior::default()] {
            for _ in 0..20 {
                for row in sample_transition_matrix(&mut rng, 6, &prior) {
                    assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn chain_frequencies_approach_stationary_distribution() {
        let mut rng = dataset_rng(4, 0);
        for prior in [TransitionPrior::Dirichlet, TransitionPrior::default()] {
            let p = sample_transition_matrix(&mut rng, 6, &prior);
            let path = simulate_chain(&mut rng, &p, 100_000);
            let mut freq = vec![0.0; 6];
            path.iter().for_each(|&s| freq[s] += 1.0 / 100_000.0);
            let pi = stationary_distribution(&p);
            let kl: f64 = freq
                .iter()
                .zip(&pi)
                .filter(|(f, _)| **f > 0.0)
                .map(|(f, q)| f * (f / q).ln())
                .sum();
            assert!(kl < 0.05, "KL {kl}");
        }
    }

    #[test]
    fn datasets_are_reproducible_and_distinct() {
        let config = small();
        let a = generate_dataset(&config, 2).unwrap();
        let b = generate_dataset(&config, 2).unwrap();
        assert_eq!(a, b);
        let suite = generate_suite(&config).unwrap();
        assert_eq!(suite.len(), 3);
        assert_eq!(suite[2], a);
        assert_ne!(suite[0].truth, suite[1].truth);
    }

    #[test]
    fn every_level_has_pool_mass() {
        let config = SynthConfig {
            n_train: 200,
            ..small()
        };
        let ds = generate_dataset(&config, 0).unwrap();
        assert_eq!(ds.truth.cuts.len(), 5);
        assert!(ds.truth.cuts.windows(2).all(|w| w[0] < w[1]));
        let mut seen = [false; 6];
        for b in &ds.train.bags {
            for l in b.instance_labels.as_ref().unwrap() {
                seen[l.index()] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn noise_free_bayes_accuracy_matches_analytic_value() {
        // Without feature noise every instance is a pool vector. The
        // posterior classifier's accuracy on generated data must match its
        // exact expected accuracy Σ_l f_l Σ_k w_l(k) 1[argmax post(k) = l],
        // with f_l the observed state frequencies and w_l the sampling
        // weights over the pool.
        let config = SynthConfig {
            noise_sigma: 0.0,
            n_train: 60,
            n_test: 1,
            n_val: 1,
            ..Default::default()
        };
        let ds = generate_dataset(&config, 0).unwrap();
        let mut rng = dataset_rng(config.seed, 0);
        let _ = sample_transition_matrix(&mut rng, 6, &config.transition_prior);
        let beta = standard_normal_vec(&mut rng, 10);
        let pool: Vec<Vec<f64>> = (0..config.pool_size)
            .map(|_| standard_normal_vec(&mut rng, 10))
            .collect();
        assert_eq!(beta, ds.truth.beta);
        let mass = pool_level_mass(&ds.truth, &pool);

        let mut freq = [0.0; 6];
        let (mut hits, mut total) = (0usize, 0usize);
        for b in &ds.train.bags {
            for (x, l) in b.instances.iter().zip(b.instance_labels.as_ref().unwrap()) {
                let post = bayes_instance_posterior(&ds.truth, &mass, x);
                hits += usize::from(crate::inference::argmax(&post) == l.index());
                total += 1;
                freq[l.index()] += 1.0;
            }
        }
        freq.iter_mut().for_each(|f| *f /= total as f64);
        let empirical = hits as f64 / total as f64;

        let mut per_level = [0.0; 6];
        for x in &pool {
            let k = crate::inference::argmax(&bayes_instance_posterior(&ds.truth, &mass, x));
            per_level[k] += ds.truth.level_probs(x)[k] / mass[k];
        }
        let expected: f64 = freq.iter().zip(&per_level).map(|(f, a)| f * a).sum();
        assert!(
            (empirical - expected).abs() < 0.03,
            "empirical {empirical} vs expected {expected}"
        );
        // The probit noise (unit sigma) keeps the ceiling far from perfect.
        assert!(expected < 0.95);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.length_range = [80, 50];
        assert!(generate_dataset(&c, 0).is_err());
        let c = SynthConfig {
            num_levels: 1,
            ..small()
        };
        assert!(generate_dataset(&c, 0).is_err());
    }
}
