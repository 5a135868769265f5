//! Frame- and sequence-level evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Level};
use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min_len {
        return Err(Error::UndefinedMetric(format!(
            "need at least {min_len} values, got {}",
            pred.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// ICC(3,1): two-way mixed, consistency, single rater, with the two
/// "raters" being prediction and ground truth.
pub fn icc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let n = pred.len() as f64;
    let k = 2.0;
    let grand = (pred.iter().sum::<f64>() + truth.iter().sum::<f64>()) / (n * k);
    let (mp, mt) = (mean(pred), mean(truth));
    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let row = (p + t) / 2.0;
        ss_rows += k * (row - grand).powi(2);
        ss_total += (p - grand).powi(2) + (t - grand).powi(2);
    }
    let ss_cols = n * ((mp - grand).powi(2) + (mt - grand).powi(2));
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let bms = ss_rows / (n - 1.0);
    let ems = ss_err / ((n - 1.0) * (k - 1.0));
    if bms + ems <= 0.0 {
        return Err(Error::UndefinedMetric("ICC with zero variance".into()));
    }
    Ok((bms - ems) / (bms + ems))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn accuracy(pred: &[Level], truth: &[Level]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput("accuracy needs equal non-empty inputs".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1 over classes occurring in `pred` or
/// `truth`. A class predicted but never true contributes 0.
pub fn f1_macro(pred: &[Level], truth: &[Level], num_levels: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput("f1 needs equal non-empty inputs".into()));
    }
    let mut tp = vec![0usize; num_levels];
    let mut fp = vec![0usize; num_levels];
    let mut fneg = vec![0usize; num_levels];
    for (p, t) in pred.iter().zip(truth) {
        if p.get() > num_levels || t.get() > num_levels {
            return Err(Error::InvalidInput(format!("label outside 1..{num_levels}")));
        }
        if p == t {
            tp[p.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fneg[t.index()] += 1;
        }
    }
    let scores: Vec<f64> = (0..num_levels)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64)
        .collect();
    Ok(mean(&scores))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContinuousScores {
    pub corr: Option<f64>,
    pub icc: Option<f64>,
    pub mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub corr: Option<f64>,
    pub icc: Option<f64>,
    pub mae: f64,
    pub acc: f64,
    pub f1_macro: f64,
}

/// `None` metrics are undefined for this input (e.g. constant predictions).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Absent when the dataset has no instance labels.
    pub frame: Option<ContinuousScores>,
    pub sequence: SequenceScores,
    pub frames: usize,
    pub sequences: usize,
}

/// Predicted labels for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag: Level,
    pub frames: Vec<Level>,
}

fn as_f64(levels: &[Level]) -> Vec<f64> {
    levels.iter().map(|l| l.get() as f64).collect()
}

/// Scores `predictions[i]` against `dataset.bags[i]`. Frame metrics pool all
/// frames across bags.
pub fn evaluate(predictions: &[BagPrediction], dataset: &Dataset) -> Result<MetricsReport> {
    if predictions.len() != dataset.bags.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} bags",
            predictions.len(),
            dataset.bags.len()
        )));
    }
    for (p, b) in predictions.iter().zip(&dataset.bags) {
        if p.frames.len() != b.len() {
            return Err(Error::InvalidInput(format!(
                "bag {}: {} frame predictions for {} instances",
                b.id,
                p.frames.len(),
                b.len()
            )));
        }
    }
    let big_l = dataset.num_levels();
    let seq_pred: Vec<Level> = predictions.iter().map(|p| p.bag).collect();
    let seq_true: Vec<Level> = dataset.bags.iter().map(|b| b.label).collect();
    let (sp, st) = (as_f64(&seq_pred), as_f64(&seq_true));
    let sequence = SequenceScores {
        corr: pearson(&sp, &st).ok(),
        icc: icc(&sp, &st).ok(),
        mae: mae(&sp, &st)?,
        acc: accuracy(&seq_pred, &seq_true)?,
        f1_macro: f1_macro(&seq_pred, &seq_true, big_l)?,
    };

    let frame = if dataset.has_instance_labels() {
        let mut fp = Vec::new();
        let mut ft = Vec::new();
        for (p, b) in predictions.iter().zip(&dataset.bags) {
            let truth = b.instance_labels.as_ref().expect("checked above");
            fp.extend(as_f64(&p.frames));
            ft.extend(as_f64(truth));
        }
        Some(ContinuousScores {
            corr: pearson(&fp, &ft).ok(),
            icc: icc(&fp, &ft).ok(),
            mae: mae(&fp, &ft)?,
        })
    } else {
        None
    };
    Ok(MetricsReport {
        frame,
        sequence,
        frames: dataset.bags.iter().map(|b| b.len()).sum(),
        sequences: dataset.bags.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(v: &[usize]) -> Vec<Level> {
        v.iter().map(|&l| Level::new(l)).collect()
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&neg, &a).unwrap(), -1.0, epsilon = 1e-12);
        // sxy = 11, sxx = 5, syy = 26
        assert_abs_diff_eq!(
            pearson(&a, &[2.0, 4.0, 5.0, 9.0]).unwrap(),
            11.0 / 130f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(pearson(&a, &[2.0, 4.0, 5.0, 9.0]).unwrap(), 0.9648, epsilon = 1e-4);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn pearson_and_mae_are_symmetric() {
        let a = [0.3, 1.2, -0.7, 2.2, 0.0];
        let b = [1.0, 0.1, -1.5, 3.0, 0.2];
        assert_abs_diff_eq!(pearson(&a, &b).unwrap(), pearson(&b, &a).unwrap(), epsilon = 1e-15);
        assert_abs_diff_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn icc_examples() {
        let a = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert_abs_diff_eq!(icc(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let shifted: Vec<f64> = a.iter().map(|x| x + 2.5).collect();
        assert_abs_diff_eq!(icc(&shifted, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert!(icc(&[2.0, 2.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn icc_matches_anova_by_hand() {
        // Two raters, three targets: (1,2), (2,2), (3,5).
        // grand 2.5; rows 1.5, 2, 4 -> SSR = 2*(1+0.25+2.25) = 7
        // cols 2, 3 -> SSC = 3*(0.25+0.25) = 1.5
        // SST = 2.25+.25+.25+.25+.25+6.25 = 9.5 -> SSE = 1
        // BMS = 3.5, EMS = 0.5 -> ICC = 3/4
        assert_abs_diff_eq!(icc(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn icc_near_zero_for_independent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        assert!(icc(&a, &b).unwrap().abs() < 0.1);
    }

    #[test]
    fn discrete_examples() {
        let truth = lv(&[1, 1, 2, 3]);
        let pred = lv(&[1, 2, 2, 3]);
        assert_abs_diff_eq!(accuracy(&pred, &truth).unwrap(), 0.75);
        assert_abs_diff_eq!(f1_macro(&pred, &truth, 3).unwrap(), 0.7778, epsilon = 1e-4);
        assert_abs_diff_eq!(f1_macro(&truth, &truth, 5).unwrap(), 1.0);
        let off: Vec<f64> = [2.0, 3.0, 4.0].to_vec();
        assert_abs_diff_eq!(mae(&off, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn f1_excludes_classes_absent_everywhere() {
        let t = lv(&[1, 3, 3]);
        assert_abs_diff_eq!(f1_macro(&t, &t, 6).unwrap(), 1.0);
    }
}
