//! Sample partition criteria and partition-quality scoring.
//!
//! The three-way criterion compares the two networks' predicted labels with
//! the given label:
//!
//! | network 1 | network 2 | subset |
//! |-----------|-----------|--------|
//! | = GL      | = GL      | clean  |
//! | = GL      | != GL     | hard   |
//! | != GL     | = GL      | hard   |
//! | != GL     | != GL     | noisy  |
//!
//! The two loss-based baselines (small-loss and mixture-model) produce the
//! same result type with an empty hard subset.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::gmm::{fit_two_component, EmConfig, GmmFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Clean,
    Hard,
    Noisy,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Clean => "clean",
            Subset::Hard => "hard",
            Subset::Noisy => "noisy",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: u64,
    pub p1: usize,
    pub p2: usize,
    pub given_label: usize,
    /// Cross-entropy of the sample under network 1.
    pub loss: f64,
}

/// Disjoint clean/hard/noisy id sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub epoch: usize,
    pub clean_ids: Vec<u64>,
    pub hard_ids: Vec<u64>,
    pub noisy_ids: Vec<u64>,
}

impl PartitionResult {
    fn from_assignment(mut assigned: Vec<(u64, Subset)>) -> Self {
        assigned.sort_unstable();
        let mut out = Self {
            epoch: 0,
            clean_ids: Vec::new(),
            hard_ids: Vec::new(),
            noisy_ids: Vec::new(),
        };
        for (id, s) in assigned {
            match s {
                Subset::Clean => out.clean_ids.push(id),
                Subset::Hard => out.hard_ids.push(id),
                Subset::Noisy => out.noisy_ids.push(id),
            }
        }
        out
    }

    pub fn with_epoch(mut self, epoch: usize) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn len(&self) -> usize {
        self.clean_ids.len() + self.hard_ids.len() + self.noisy_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self, subset: Subset) -> &[u64] {
        match subset {
            Subset::Clean => &self.clean_ids,
            Subset::Hard => &self.hard_ids,
            Subset::Noisy => &self.noisy_ids,
        }
    }

    pub fn assignment(&self) -> HashMap<u64, Subset> {
        let mut map = HashMap::with_capacity(self.len());
        for s in [Subset::Clean, Subset::Hard, Subset::Noisy] {
            for &id in self.ids(s) {
                map.insert(id, s);
            }
        }
        map
    }

    /// Checks the sets are pairwise disjoint and cover exactly `ids`.
    pub fn check_covers(&self, ids: &[u64]) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for s in [Subset::Clean, Subset::Hard, Subset::Noisy] {
            for &id in self.ids(s) {
                if !seen.insert(id) {
                    return Err(Error::DuplicateSample(id));
                }
            }
        }
        if seen.len() != ids.len() {
            return Err(Error::InvalidArgument(format!(
                "partition covers {} samples, dataset has {}",
                seen.len(),
                ids.len()
            )));
        }
        if let Some(&id) = ids.iter().find(|id| !seen.contains(id)) {
            return Err(Error::UnknownSample(id));
        }
        Ok(())
    }

    /// `sample_id,subset` rows in ascending id order.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut rows: Vec<(u64, Subset)> = self.assignment().into_iter().collect();
        rows.sort_unstable();
        writeln!(writer, "sample_id,subset")?;
        for (id, s) in rows {
            writeln!(writer, "{id},{s}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }
}

pub fn classify(p1: usize, p2: usize, given_label: usize) -> Subset {
    match (p1 == given_label, p2 == given_label) {
        (true, true) => Subset::Clean,
        (false, false) => Subset::Noisy,
        _ => Subset::Hard,
    }
}

fn check_unique(records: &[PredictionRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.sample_id) {
            return Err(Error::DuplicateSample(r.sample_id));
        }
    }
    Ok(())
}

/// Three-way split by agreement of the two networks with the given label.
pub fn tripartition(records: &[PredictionRecord]) -> Result<PartitionResult> {
    check_unique(records)?;
    Ok(PartitionResult::from_assignment(
        records
            .iter()
            .map(|r| (r.sample_id, classify(r.p1, r.p2, r.given_label)))
            .collect(),
    ))
}

/// The `floor(R * n)` lowest-loss samples are clean, the rest noisy; equal
/// losses are ordered by sample id.
pub fn small_loss_partition(records: &[PredictionRecord], keep_fraction: f64) -> Result<PartitionResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to partition".into()));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    check_unique(records)?;
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.sample_id.cmp(&b.sample_id)));
    // guard against R * n landing just below an integer
    let keep = ((keep_fraction * records.len() as f64) + 1e-9).floor() as usize;
    Ok(PartitionResult::from_assignment(
        order
            .iter()
            .enumerate()
            .map(|(rank, r)| {
                let s = if rank < keep { Subset::Clean } else { Subset::Noisy };
                (r.sample_id, s)
            })
            .collect(),
    ))
}

/// Min-max normalization of the losses; constant losses map to zero.
pub fn normalize_losses(records: &[PredictionRecord]) -> Vec<PredictionRecord> {
    let (lo, hi) = records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.loss), hi.max(r.loss))
        });
    let range = hi - lo;
    records
        .iter()
        .map(|r| PredictionRecord {
            loss: if range > 0.0 { (r.loss - lo) / range } else { 0.0 },
            ..*r
        })
        .collect()
}

/// Fits a two-component mixture to the normalized losses; a sample is clean
/// when its posterior under the lower-mean component is at least `threshold`.
pub fn gmm_partition_with_fit(
    records: &[PredictionRecord],
    threshold: f64,
    em: &EmConfig,
) -> Result<(PartitionResult, GmmFit)> {
    if records.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "mixture partition needs at least 10 records, got {}",
            records.len()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    check_unique(records)?;
    let normalized = normalize_losses(records);
    let values: Vec<f64> = normalized.iter().map(|r| r.loss).collect();
    let fit = fit_two_component(&values, em)?;
    let low = fit.mixture.low_component();
    let partition = PartitionResult::from_assignment(
        normalized
            .iter()
            .map(|r| {
                let s = if fit.mixture.posterior(r.loss)[low] >= threshold {
                    Subset::Clean
                } else {
                    Subset::Noisy
                };
                (r.sample_id, s)
            })
            .collect(),
    );
    Ok((partition, fit))
}

pub fn gmm_partition(records: &[PredictionRecord], threshold: f64) -> Result<PartitionResult> {
    gmm_partition_with_fit(records, threshold, &EmConfig::default()).map(|(p, _)| p)
}

/// Normalized-loss statistics of one subset; `None` when the subset is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub size: usize,
    pub loss_mean: Option<f64>,
    pub loss_variance: Option<f64>,
    /// Empirical lower loss threshold of the subset.
    pub loss_min: Option<f64>,
    /// Empirical upper loss threshold of the subset.
    pub loss_max: Option<f64>,
}

impl SubsetStats {
    fn from_losses(losses: &[f64]) -> Self {
        if losses.is_empty() {
            return Self::default();
        }
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        Self {
            size: losses.len(),
            loss_mean: Some(mean),
            loss_variance: Some(var),
            loss_min: losses.iter().copied().reduce(f64::min),
            loss_max: losses.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionQuality {
    /// Fraction of the clean subset whose given label is correct.
    pub clean_purity: Option<f64>,
    /// Fraction of the noisy subset whose given label is wrong.
    pub noisy_purity: Option<f64>,
    /// Fraction of the hard subset whose given label is correct.
    pub hard_clean_fraction: Option<f64>,
    pub clean: SubsetStats,
    pub hard: SubsetStats,
    pub noisy: SubsetStats,
}

impl PartitionQuality {
    pub fn sizes(&self) -> [usize; 3] {
        [self.clean.size, self.hard.size, self.noisy.size]
    }
}

/// Scores a partition of `dataset` against its true labels. `records` supply
/// the per-sample losses, normalized here over all records.
pub fn score_partition(
    partition: &PartitionResult,
    records: &[PredictionRecord],
    dataset: &LabeledDataset,
) -> Result<PartitionQuality> {
    let index: HashMap<u64, usize> = dataset
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let losses: HashMap<u64, f64> = normalize_losses(records)
        .into_iter()
        .map(|r| (r.sample_id, r.loss))
        .collect();
    let mut stats = [SubsetStats::default(); 3];
    let mut correct = [0usize; 3];
    for (k, s) in [Subset::Clean, Subset::Hard, Subset::Noisy]
        .into_iter()
        .enumerate()
    {
        let ids = partition.ids(s);
        let mut subset_losses = Vec::with_capacity(ids.len());
        for &id in ids {
            let &i = index.get(&id).ok_or(Error::UnknownSample(id))?;
            correct[k] += usize::from(!dataset.is_noisy(i));
            if let Some(&l) = losses.get(&id) {
                subset_losses.push(l);
            }
        }
        stats[k] = SubsetStats::from_losses(&subset_losses);
        stats[k].size = ids.len();
    }
    let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let [clean, hard, noisy] = stats;
    Ok(PartitionQuality {
        clean_purity: frac(correct[0], clean.size),
        noisy_purity: frac(noisy.size - correct[2], noisy.size),
        hard_clean_fraction: frac(correct[1], hard.size),
        clean,
        hard,
        noisy,
    })
}
