//! Learnable parameters of the MI-DORF model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `n x n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, Self::Error> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(format!("matrix with {n} rows is not square"));
        }
        Ok(SquareMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.data.chunks(m.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// Ordered cut-points `b_1 < ... < b_{L-1}` stored as a free first cut plus
/// log-gaps: `b_{l+1} = b_l + exp(log_gaps[l-1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPoints {
    pub first_cut: f64,
    pub log_gaps: Vec<f64>,
}

impl CutPoints {
    pub fn num_levels(&self) -> usize {
        self.log_gaps.len() + 2
    }

    /// Interior cut-points `b_1..b_{L-1}`.
    pub fn interior(&self) -> Vec<f64> {
        let mut cuts = Vec::with_capacity(self.log_gaps.len() + 1);
        let mut b = self.first_cut;
        cuts.push(b);
        for d in &self.log_gaps {
            b += d.exp();
            cuts.push(b);
        }
        cuts
    }

    /// `[-inf, b_1, ..., b_{L-1}, +inf]`.
    pub fn decode(&self) -> Vec<f64> {
        let mut cuts = Vec::with_capacity(self.num_levels() + 1);
        cuts.push(f64::NEG_INFINITY);
        cuts.extend(self.interior());
        cuts.push(f64::INFINITY);
        cuts
    }

    /// Inverse of [`CutPoints::interior`]; rejects non-increasing input.
    pub fn encode(interior: &[f64]) -> Result<Self> {
        let (&first, rest) = interior
            .split_first()
            .ok_or_else(|| Error::InvalidInput("at least one cut-point is required".into()))?;
        let mut log_gaps = Vec::with_capacity(rest.len());
        let mut prev = first;
        for &b in rest {
            let gap = b - prev;
            if !(gap > 0.0) || !gap.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "cut-points must be strictly increasing and finite ({prev} then {b})"
                )));
            }
            log_gaps.push(gap.ln());
            prev = b;
        }
        Ok(CutPoints {
            first_cut: first,
            log_gaps,
        })
    }

    /// Cuts at the equal-mass quantiles of a standard normal.
    pub fn standard_normal_quantiles(num_levels: usize) -> Self {
        let interior: Vec<f64> = (1..num_levels)
            .map(|k| crate::potentials::normal_quantile(k as f64 / num_levels as f64))
            .collect();
        CutPoints::encode(&interior).expect("normal quantiles are strictly increasing")
    }

    /// Chain rule from a gradient over interior cuts to (first_cut, log_gaps).
    pub fn pullback(&self, grad_interior: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(grad_interior.len(), self.log_gaps.len() + 1);
        let first = grad_interior.iter().sum();
        // b_k depends on log_gaps[j] for every k > j.
        let mut suffix = 0.0;
        let mut gaps = vec![0.0; self.log_gaps.len()];
        for j in (0..self.log_gaps.len()).rev() {
            suffix += grad_interior[j + 1];
            gaps[j] = self.log_gaps[j].exp() * suffix;
        }
        (first, gaps)
    }
}

/// `decode_cutpoints` for full model parameters.
pub fn decode_cutpoints(params: &ModelParams) -> Vec<f64> {
    params.cuts.decode()
}

/// All MI-DORF parameters. The probit scale is fixed to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub cuts: CutPoints,
    pub transition: SquareMatrix,
    pub card_weight: f64,
}

impl ModelParams {
    pub const SIGMA: f64 = 1.0;

    pub fn new(beta: Vec<f64>, cuts: CutPoints, transition: SquareMatrix, card_weight: f64) -> Result<Self> {
        let l = cuts.num_levels();
        if transition.dim() != l {
            return Err(Error::InvalidInput(format!(
                "transition is {0}x{0} but the cut-points encode {l} levels",
                transition.dim()
            )));
        }
        Ok(ModelParams {
            beta,
            cuts,
            transition,
            card_weight,
        })
    }

    /// Neutral parameters: zero projection, standard-normal quantile cuts.
    pub fn neutral(num_levels: usize, feature_dim: usize) -> Self {
        ModelParams {
            beta: vec![0.0; feature_dim],
            cuts: CutPoints::standard_normal_quantiles(num_levels),
            transition: SquareMatrix::zeros(num_levels),
            card_weight: 0.0,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.cuts.num_levels()
    }

    pub fn feature_dim(&self) -> usize {
        self.beta.len()
    }

    pub fn sigma(&self) -> f64 {
        Self::SIGMA
    }
}
