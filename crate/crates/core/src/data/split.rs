use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub group_by_patient: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            group_by_patient: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

fn train_count(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).round() as usize).clamp(1, total - 1)
}

/// Index form of [`split`]: `(train, test)` indices, each in original order.
pub fn split_indices(samples: &[Sample], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut r = rng::substream(spec.seed, streams::SPLIT, 0);
    if spec.group_by_patient {
        if let Some(i) = samples.iter().position(|s| s.patient_id.is_empty()) {
            return Err(Error::Data(format!("sample {i} has no patient id")));
        }
        let patients: BTreeSet<&str> = samples.iter().map(|s| s.patient_id.as_str()).collect();
        if patients.len() < 2 {
            return Err(Error::Config(format!(
                "a patient-grouped split needs at least 2 patients, found {}",
                patients.len()
            )));
        }
        let mut order: Vec<&str> = patients.into_iter().collect();
        order.shuffle(&mut r);
        let n_train = train_count(order.len(), spec.train_fraction);
        let side: BTreeMap<&str, bool> = order.iter().enumerate().map(|(i, p)| (*p, i < n_train)).collect();
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..samples.len()).partition(|&i| side[samples[i].patient_id.as_str()]);
        Ok((train, test))
    } else {
        if samples.len() < 2 {
            return Err(Error::Config("a split needs at least 2 samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut r);
        let n_train = train_count(order.len(), spec.train_fraction);
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

/// Deterministic train/test split; with grouping, whole patients move together.
pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train, test) = split_indices(samples, spec)?;
    Ok((
        train.into_iter().map(|i| samples[i].clone()).collect(),
        test.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}
