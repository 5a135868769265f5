//! Bags, datasets and ordinal scales.
//!
//! Ordinal levels are 1-based inside the library (`1..=L`). File formats use
//! 0-based labels; the shift happens once, in [`crate::io`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordinal level in `1..=L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(usize);

impl Level {
    /// Builds a level from its 1-based value. Range against a scale is
    /// checked by [`validate_dataset`], not here.
    pub const fn new(value: usize) -> Self {
        Level(value)
    }

    /// Builds a level from a 0-based array index.
    pub const fn from_index(index: usize) -> Self {
        Level(index + 1)
    }

    pub const fn get(self) -> usize {
        self.0
    }

    /// 0-based position of the level, for table lookups.
    pub const fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalScale {
    num_levels: usize,
}

impl OrdinalScale {
    pub fn new(num_levels: usize) -> Result<Self> {
        if num_levels < 2 {
            return Err(Error::InvalidInput(format!(
                "an ordinal scale needs at least 2 levels, got {num_levels}"
            )));
        }
        Ok(OrdinalScale { num_levels })
    }

    pub fn num_levels(self) -> usize {
        self.num_levels
    }

    pub fn contains(self, level: Level) -> bool {
        (1..=self.num_levels).contains(&level.get())
    }

    pub fn levels(self) -> impl Iterator<Item = Level> {
        (1..=self.num_levels).map(Level::new)
    }
}

/// One temporal sequence of instances with its weak ordinal label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Vec<f64>>,
    pub label: Level,
    /// Per-instance ground truth. Only evaluation code reads this.
    pub instance_labels: Option<Vec<Level>>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// A bag as seen by training code: instance labels are not reachable.
#[derive(Debug, Clone, Copy)]
pub struct WeakBag<'a> {
    pub id: &'a str,
    pub instances: &'a [Vec<f64>],
    pub label: Level,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub scale: OrdinalScale,
    pub feature_dim: usize,
}

/// Weakly-labelled view of a validated dataset, handed to every learner.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    pub bags: Vec<WeakBag<'a>>,
    pub scale: OrdinalScale,
    pub feature_dim: usize,
}

impl<'a> TrainingSet<'a> {
    pub fn num_levels(&self) -> usize {
        self.scale.num_levels()
    }

    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(|b| b.instances.len()).sum()
    }
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, scale: OrdinalScale, feature_dim: usize) -> Self {
        Dataset {
            bags,
            scale,
            feature_dim,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.scale.num_levels()
    }

    /// Validates the dataset and strips instance labels.
    pub fn training_view(&self) -> Result<TrainingSet<'_>> {
        self.ensure_valid()?;
        Ok(TrainingSet {
            bags: self
                .bags
                .iter()
                .map(|b| WeakBag {
                    id: &b.id,
                    instances: &b.instances,
                    label: b.label,
                })
                .collect(),
            scale: self.scale,
            feature_dim: self.feature_dim,
        })
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_dataset(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(report))
        }
    }

    pub fn has_instance_labels(&self) -> bool {
        self.bags.iter().all(|b| b.instance_labels.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyDataset,
    EmptySequence {
        bag: String,
    },
    DimensionMismatch {
        bag: String,
        instance: usize,
        expected: usize,
        found: usize,
    },
    NonFiniteFeature {
        bag: String,
        instance: usize,
    },
    LabelOutOfRange {
        bag: String,
        label: usize,
        num_levels: usize,
    },
    InstanceLabelOutOfRange {
        bag: String,
        instance: usize,
        label: usize,
        num_levels: usize,
    },
    InstanceLabelLength {
        bag: String,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDataset => write!(f, "dataset has no bags"),
            Violation::EmptySequence { bag } => write!(f, "bag {bag}: empty sequence"),
            Violation::DimensionMismatch {
                bag,
                instance,
                expected,
                found,
            } => write!(
                f,
                "bag {bag}: instance {instance} has dimension {found}, expected {expected}"
            ),
            Violation::NonFiniteFeature { bag, instance } => {
                write!(f, "bag {bag}: instance {instance} has a non-finite feature")
            }
            Violation::LabelOutOfRange { bag, label, num_levels } => {
                write!(f, "bag {bag}: label {label} outside 1..={num_levels}")
            }
            Violation::InstanceLabelOutOfRange {
                bag,
                instance,
                label,
                num_levels,
            } => write!(
                f,
                "bag {bag}: instance {instance} label {label} outside 1..={num_levels}"
            ),
            Violation::InstanceLabelLength { bag, expected, found } => {
                write!(f, "bag {bag}: {found} instance labels for {expected} instances")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Reports every consistency violation in `ds`. One violation per bag and
/// kind, so a bag with many ragged instances yields a single dimension entry.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    if ds.bags.is_empty() {
        violations.push(Violation::EmptyDataset);
    }
    let l = ds.scale.num_levels();
    for bag in &ds.bags {
        if bag.instances.is_empty() {
            violations.push(Violation::EmptySequence { bag: bag.id.clone() });
        }
        if let Some((i, x)) = bag
            .instances
            .iter()
            .enumerate()
            .find(|(_, x)| x.len() != ds.feature_dim)
        {
            violations.push(Violation::DimensionMismatch {
                bag: bag.id.clone(),
                instance: i,
                expected: ds.feature_dim,
                found: x.len(),
            });
        }
        if let Some(i) = bag.instances.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
            violations.push(Violation::NonFiniteFeature {
                bag: bag.id.clone(),
                instance: i,
            });
        }
        if !ds.scale.contains(bag.label) {
            violations.push(Violation::LabelOutOfRange {
                bag: bag.id.clone(),
                label: bag.label.get(),
                num_levels: l,
            });
        }
        if let Some(labels) = &bag.instance_labels {
            if labels.len() != bag.instances.len() {
                violations.push(Violation::InstanceLabelLength {
                    bag: bag.id.clone(),
                    expected: bag.instances.len(),
                    found: labels.len(),
                });
            }
            if let Some((i, lab)) = labels.iter().enumerate().find(|(_, lab)| !ds.scale.contains(**lab)) {
                violations.push(Violation::InstanceLabelOutOfRange {
                    bag: bag.id.clone(),
                    instance: i,
                    label: lab.get(),
                    num_levels: l,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// A full latent instance-label sequence for one bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentAssignment {
    pub states: Vec<Level>,
}

impl LatentAssignment {
    pub fn new(states: Vec<Level>) -> Self {
        LatentAssignment { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_level(&self) -> Option<Level> {
        self.states.iter().copied().max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(id: &str, label: usize, xs: Vec<Vec<f64>>) -> Bag {
        Bag {
            id: id.to_string(),
            instances: xs,
            label: Level::new(label),
            instance_labels: None,
        }
    }

    fn scale3() -> OrdinalScale {
        OrdinalScale::new(3).unwrap()
    }

    #[test]
    fn scale_needs_two_levels() {
        assert!(OrdinalScale::new(1).is_err());
        assert_eq!(OrdinalScale::new(2).unwrap().num_levels(), 2);
    }

    #[test]
    fn consistent_dataset_has_empty_report() {
        let ds = Dataset::new(
            vec![
                bag("a", 1, vec![vec![0.0, 1.0]]),
                bag("b", 3, vec![vec![0.5, 1.0], vec![2.0, 2.0]]),
            ],
            scale3(),
            2,
        );
        assert!(validate_dataset(&ds).is_empty());
        assert!(ds.training_view().is_ok());
    }

    #[test]
    fn label_above_scale_is_one_violation_naming_the_bag() {
        let ds = Dataset::new(
            vec![bag("ok", 2, vec![vec![0.0]]), bag("bad", 4, vec![vec![0.0]])],
            scale3(),
            1,
        );
        let report = validate_dataset(&ds);
        assert_eq!(
            report.violations,
            vec![Violation::LabelOutOfRange {
                bag: "bad".into(),
                label: 4,
                num_levels: 3
            }]
        );
        assert!(matches!(ds.training_view(), Err(Error::Validation(_))));
    }

    #[test]
    fn mixed_dimensions_are_one_violation() {
        let ds = Dataset::new(
            vec![bag("m", 1, vec![vec![0.0, 1.0], vec![0.0], vec![1.0, 2.0, 3.0]])],
            scale3(),
            2,
        );
        let report = validate_dataset(&ds);
        assert_eq!(report.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::DimensionMismatch { instance: 1, .. }
        ));
    }

    #[test]
    fn empty_sequences_and_instance_labels_are_checked() {
        let mut b = bag("x", 2, vec![vec![0.0]]);
        b.instance_labels = Some(vec![Level::new(2), Level::new(1)]);
        let mut c = bag("y", 2, vec![vec![0.0]]);
        c.instance_labels = Some(vec![Level::new(7)]);
        let ds = Dataset::new(vec![b, c, bag("z", 1, vec![])], scale3(), 1);
        let report = validate_dataset(&ds);
        assert_eq!(report.len(), 3);
        assert!(validate_dataset(&Dataset::new(vec![], scale3(), 1))
            .violations
            .contains(&Violation::EmptyDataset));
    }
}
