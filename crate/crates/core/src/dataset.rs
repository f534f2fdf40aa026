//! ALSC-CR and ALSC-Regular bundle construction.
//!
//! ALSC-CR partitions:
//!
//! * **test**: every CR case from MAMS Test and from all Rest16 splits;
//! * **val**: 15% of the remaining Pronoun cases of MAMS Test and Rest16,
//!   plus 50% of MAMS Val together with Rest16 Val Non-Pronoun cases;
//! * **train**: all of MAMS Train plus Rest16 Train Non-Pronoun cases.
//!
//! Overlaps resolve with priority test > val > train. Percentages round
//! down. Every sampled pool is sorted by instance id and shuffled with a
//! generator keyed by (seed, pool name), so a bundle depends only on the
//! instance set and the seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Polarity, SourceDataset, Split};
use crate::digest::{keyed_rng, sha256_hex};
use crate::labeler::{CaseKind, CrStatus, LabeledInstance};

pub const VAL_PRONOUN_PERCENT: usize = 15;
pub const VAL_REGULAR_PERCENT: usize = 50;

/// Sweep grid for auxiliary dataset fractions.
pub const FRACTION_GRID: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{} unreviewed pronoun cases block the build (first: {})", .0.len(), .0.first().map(String::as_str).unwrap_or("-"))]
    UnreviewedCasesRemain(Vec<String>),
    #[error("partition {0} is empty")]
    EmptyPartition(Partition),
    #[error("{partition} needs {needed} {dataset} instances but only {available} are available")]
    InsufficientInstances {
        partition: Partition,
        dataset: SourceDataset,
        needed: usize,
        available: usize,
    },
    #[error("duplicate instance id {0}")]
    DuplicateInstance(String),
    #[error("bundle references unknown instance {0}")]
    UnknownInstance(String),
    #[error("manifest digest mismatch: recorded {recorded}, computed {computed}")]
    DigestMismatch { recorded: String, computed: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BundleName {
    #[serde(rename = "ALSC-CR")]
    AlscCr,
    #[serde(rename = "ALSC-Regular")]
    AlscRegular,
}

impl fmt::Display for BundleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BundleName::AlscCr => "ALSC-CR",
            BundleName::AlscRegular => "ALSC-Regular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the "50% of (MAMS Val + Rest Val (Non Pronoun))" pool is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValPoolReading {
    /// All of MAMS Val plus Rest16 Val Non-Pronoun cases.
    #[default]
    MamsAllRestNonPronoun,
    /// Non-Pronoun cases of both MAMS Val and Rest16 Val.
    BothNonPronoun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositionRow {
    pub partition: Partition,
    pub dataset: SourceDataset,
    pub kind: CaseKind,
    pub is_cr: CrStatus,
    pub polarity: Polarity,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: BundleName,
    pub build_seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub composition_report: Vec<CompositionRow>,
    pub digest: String,
}

impl DatasetBundle {
    pub fn partition(&self, p: Partition) -> &[String] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    fn content_digest(&self) -> String {
        let content = (
            self.name,
            self.build_seed,
            &self.train,
            &self.val,
            &self.test,
            &self.composition_report,
        );
        sha256_hex(&serde_json::to_vec(&content).unwrap_or_default())
    }

    /// Sum of report counts for one partition, optionally restricted.
    pub fn count(&self, partition: Partition, filter: impl Fn(&CompositionRow) -> bool) -> usize {
        self.composition_report
            .iter()
            .filter(|r| r.partition == partition && filter(r))
            .map(|r| r.count)
            .sum()
    }

    pub fn to_manifest_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap_or_default();
        s.push('\n');
        s
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), BuildError> {
        std::fs::write(path, self.to_manifest_string())?;
        Ok(())
    }

    /// Read a manifest and verify its content digest.
    pub fn read_manifest(path: &Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path)?;
        let bundle: DatasetBundle = serde_json::from_str(&text).map_err(|e| BuildError::Manifest(e.to_string()))?;
        let computed = bundle.content_digest();
        if computed != bundle.digest {
            return Err(BuildError::DigestMismatch {
                recorded: bundle.digest,
                computed,
            });
        }
        Ok(bundle)
    }
}

fn index_instances(instances: &[LabeledInstance]) -> Result<HashMap<&str, &LabeledInstance>, BuildError> {
    let mut map = HashMap::with_capacity(instances.len());
    for li in instances {
        if map.insert(li.id(), li).is_some() {
            return Err(BuildError::DuplicateInstance(li.id().to_string()));
        }
    }
    Ok(map)
}

/// Take floor(percent% of the pool) ids after a keyed shuffle.
fn sample_percent(pool: Vec<&str>, percent: usize, seed: u64, stream: &str) -> Vec<String> {
    let k = pool.len() * percent / 100;
    sample_count(pool, k, seed, stream)
}

fn sample_count(mut pool: Vec<&str>, k: usize, seed: u64, stream: &str) -> Vec<String> {
    pool.sort_unstable();
    pool.shuffle(&mut keyed_rng(seed, stream));
    pool.truncate(k);
    pool.into_iter().map(str::to_string).collect()
}

fn composition(index: &HashMap<&str, &LabeledInstance>, parts: [(Partition, &[String]); 3]) -> Vec<CompositionRow> {
    let mut counts: BTreeMap<(Partition, SourceDataset, CaseKind, CrStatus, Polarity), usize> = BTreeMap::new();
    for (partition, ids) in parts {
        for id in ids {
            let li = index[id.as_str()];
            let key = (
                partition,
                li.instance.provenance.dataset,
                li.label.kind,
                li.label.is_cr,
                li.instance.polarity,
            );
            *counts.entry(key).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|((partition, dataset, kind, is_cr, polarity), count)| CompositionRow {
            partition,
            dataset,
            kind,
            is_cr,
            polarity,
            count,
        })
        .collect()
}

fn finish(
    name: BundleName,
    seed: u64,
    index: &HashMap<&str, &LabeledInstance>,
    mut train: Vec<String>,
    mut val: Vec<String>,
    mut test: Vec<String>,
) -> Result<DatasetBundle, BuildError> {
    for (p, ids) in [
        (Partition::Train, &train),
        (Partition::Val, &val),
        (Partition::Test, &test),
    ] {
        if ids.is_empty() {
            return Err(BuildError::EmptyPartition(p));
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let composition_report = composition(
        index,
        [
            (Partition::Train, &train),
            (Partition::Val, &val),
            (Partition::Test, &test),
        ],
    );
    let mut bundle = DatasetBundle {
        name,
        build_seed: seed,
        train,
        val,
        test,
        composition_report,
        digest: String::new(),
    };
    bundle.digest = bundle.content_digest();
    Ok(bundle)
}

pub fn build_alsc_cr(
    instances: &[LabeledInstance],
    seed: u64,
    reading: ValPoolReading,
) -> Result<DatasetBundle, BuildError> {
    use SourceDataset::{Mams, Rest16};

    let index = index_instances(instances)?;
    let dataset = |li: &LabeledInstance| li.instance.provenance.dataset;
    let split = |li: &LabeledInstance| li.instance.provenance.split;
    let cr_source = |li: &LabeledInstance| dataset(li) == Rest16 || (dataset(li) == Mams && split(li) == Split::Test);

    let mut blocking: Vec<String> = instances
        .iter()
        .filter(|li| cr_source(li) && li.is_pronoun_case() && li.label.is_cr == CrStatus::Unreviewed)
        .map(|li| li.id().to_string())
        .collect();
    if !blocking.is_empty() {
        blocking.sort();
        return Err(BuildError::UnreviewedCasesRemain(blocking));
    }

    let test: Vec<String> = instances
        .iter()
        .filter(|li| cr_source(li) && li.is_cr_case())
        .map(|li| li.id().to_string())
        .collect();
    let taken: HashSet<&str> = test.iter().map(String::as_str).collect();

    let pronoun_pool: Vec<&str> = instances
        .iter()
        .filter(|li| cr_source(li) && li.is_pronoun_case() && !taken.contains(li.id()))
        .map(|li| li.id())
        .collect();
    let regular_pool: Vec<&str> = instances
        .iter()
        .filter(|li| split(li) == Split::Val && !taken.contains(li.id()))
        .filter(|li| match (reading, dataset(li)) {
            (ValPoolReading::MamsAllRestNonPronoun, Mams) => true,
            _ => !li.is_pronoun_case(),
        })
        .map(|li| li.id())
        .collect();

    let mut val = sample_percent(pronoun_pool, VAL_PRONOUN_PERCENT, seed, "alsc-cr/val/pronoun");
    val.extend(sample_percent(
        regular_pool,
        VAL_REGULAR_PERCENT,
        seed,
        "alsc-cr/val/regular",
    ));
    let taken: HashSet<&str> = taken.into_iter().chain(val.iter().map(String::as_str)).collect();

    let train: Vec<String> = instances
        .iter()
        .filter(|li| split(li) == Split::Train && !taken.contains(li.id()))
        .filter(|li| dataset(li) == Mams || !li.is_pronoun_case())
        .map(|li| li.id().to_string())
        .collect();

    finish(BundleName::AlscCr, seed, &index, train, val, test)
}

/// Build a regular (not CR-restricted) bundle with the same partition sizes
/// and per-partition Rest16/MAMS counts as `reference`.
///
/// Test items are drawn from outside the reference train and val sets, so a
/// model trained on the reference train partition never sees them.
pub fn build_alsc_regular(
    instances: &[LabeledInstance],
    seed: u64,
    reference: &DatasetBundle,
) -> Result<DatasetBundle, BuildError> {
    let index = index_instances(instances)?;
    for p in Partition::ALL {
        if reference.partition(p).is_empty() {
            return Err(BuildError::EmptyPartition(p));
        }
    }

    let mut needed: BTreeMap<(Partition, SourceDataset), usize> = BTreeMap::new();
    for p in Partition::ALL {
        for id in reference.partition(p) {
            let li = index
                .get(id.as_str())
                .ok_or_else(|| BuildError::UnknownInstance(id.clone()))?;
            *needed.entry((p, li.instance.provenance.dataset)).or_default() += 1;
        }
    }

    let ref_train: HashSet<&str> = reference.train.iter().map(String::as_str).collect();
    let ref_val: HashSet<&str> = reference.val.iter().map(String::as_str).collect();
    let mut taken: HashSet<String> = HashSet::new();
    let mut parts: BTreeMap<Partition, Vec<String>> = BTreeMap::new();

    for p in [Partition::Test, Partition::Val, Partition::Train] {
        for dataset in [SourceDataset::Rest16, SourceDataset::Mams] {
            let k = needed.get(&(p, dataset)).copied().unwrap_or(0);
            let pool: Vec<&str> = instances
                .iter()
                .filter(|li| li.instance.provenance.dataset == dataset && !taken.contains(li.id()))
                .filter(|li| match p {
                    Partition::Test => !ref_train.contains(li.id()) && !ref_val.contains(li.id()),
                    Partition::Val => !ref_train.contains(li.id()),
                    Partition::Train => true,
                })
                .map(|li| li.id())
                .collect();
            if pool.len() < k {
                return Err(BuildError::InsufficientInstances {
                    partition: p,
                    dataset,
                    needed: k,
                    available: pool.len(),
                });
            }
            let stream = format!("alsc-regular/{p}/{dataset}");
            let chosen = sample_count(pool, k, seed, &stream);
            taken.extend(chosen.iter().cloned());
            parts.entry(p).or_default().extend(chosen);
        }
    }

    let mut take = |p| parts.remove(&p).unwrap_or_default();
    let (train, val, test) = (take(Partition::Train), take(Partition::Val), take(Partition::Test));
    finish(BundleName::AlscRegular, seed, &index, train, val, test)
}

fn is_grid_fraction(fraction: f64) -> bool {
    FRACTION_GRID.iter().any(|g| (g - fraction).abs() < 1e-12)
}

/// Number of records kept for a fraction: floor(fraction * n).
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004
    // rounding the other way.
    (((fraction * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Choose floor(fraction * n) records by a seed-keyed shuffle, keeping
/// their original relative order. A fraction of 1.0 returns the input
/// unchanged.
pub fn subset_fraction<T: Clone>(records: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if !is_grid_fraction(fraction) {
        log::warn!("fraction {fraction} is outside the sweep grid {FRACTION_GRID:?}");
    }
    if fraction >= 1.0 {
        return records.to_vec();
    }
    let k = fraction_count(records.len(), fraction.max(0.0));
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut keyed_rng(seed, "aux-subset"));
    idx.truncate(k);
    idx.sort_unstable();
    idx.into_iter().map(|i| records[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_counts_round_down() {
        assert_eq!(fraction_count(67_389, 0.1), 6_738);
        assert_eq!(fraction_count(30, 0.1), 3);
        assert_eq!(fraction_count(10, 0.5), 5);
        assert_eq!(fraction_count(9, 0.2), 1);
    }

    #[test]
    fn full_fraction_is_identity() {
        let v: Vec<u32> = (0..17).rev().collect();
        assert_eq!(subset_fraction(&v, 1.0, 3), v);
    }

    #[test]
    fn subset_size_and_seed_dependence() {
        let v: Vec<u32> = (0..10).collect();
        let a = subset_fraction(&v, 0.5, 1);
        let b = subset_fraction(&v, 0.5, 2);
        assert_eq!(a.len(), 5);
        assert_eq!(b.len(), 5);
        assert_eq!(a, subset_fraction(&v, 0.5, 1));
        let big: Vec<u32> = (0..1000).collect();
        assert_ne!(subset_fraction(&big, 0.5, 1), subset_fraction(&big, 0.5, 2));
    }
}
