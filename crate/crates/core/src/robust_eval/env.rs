//! Coupled-network environments built from a record store.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::trainer::{Axis, AxisValue, ExperimentRecord, HyperparameterConfig};

/// Pairs of runs from two configurations that differ in one axis, or, for a
/// weak environment, the union of such pairs over the remaining axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub id: String,
    pub axis: Axis,
    /// Ascending `(old, new)` values of the varying axis.
    pub value_pair: (AxisValue, AxisValue),
    /// `(H, H')` configuration pairs the samples come from.
    pub config_pairs: Vec<(HyperparameterConfig, HyperparameterConfig)>,
    /// Indices into the record slice the environment was built from; the
    /// first index of each pair has the smaller axis value.
    pub pairs: Vec<(usize, usize)>,
    /// Smallest test set size among the runs involved.
    pub m_test: usize,
    pub weak: bool,
}

/// A configuration pair that could not form an environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedEnvironment {
    pub axis: Axis,
    pub slice: String,
    pub value_pair: (String, String),
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct EnvironmentSet {
    pub environments: Vec<Environment>,
    pub skipped: Vec<SkippedEnvironment>,
    pub warnings: Vec<String>,
    /// Records ignored because an earlier record had the same key.
    pub duplicates: usize,
}

fn env_id(axis: Axis, pair: &(AxisValue, AxisValue), slice: &str) -> String {
    format!("{}:{}->{}|{}", axis.name(), pair.0, pair.1, slice)
}

/// Indices of the first record per `(config, seed)`.
fn dedup(records: &[ExperimentRecord]) -> (Vec<usize>, usize) {
    let mut seen = HashSet::new();
    let mut keep = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if seen.insert(r.key()) {
            keep.push(i);
        }
    }
    let dups = records.len() - keep.len();
    (keep, dups)
}

/// Strict environments for each axis: every pair of distinct axis values
/// within each slice of the remaining axes, sampled over the full seed cross
/// product.
pub fn build_coupled_environments(records: &[ExperimentRecord], axes: &[Axis]) -> EnvironmentSet {
    let (keep, duplicates) = dedup(records);
    let mut out = EnvironmentSet {
        duplicates,
        ..Default::default()
    };
    for &axis in axes {
        let values: BTreeSet<AxisValue> = keep.iter().map(|&i| records[i].config.value(axis)).collect();
        if values.len() < 2 {
            out.warnings
                .push(format!("axis {axis} has fewer than two values; no environments"));
            continue;
        }
        let values: Vec<AxisValue> = values.into_iter().collect();
        let mut slices: BTreeMap<String, BTreeMap<AxisValue, Vec<usize>>> = BTreeMap::new();
        for &i in &keep {
            let c = &records[i].config;
            slices
                .entry(c.id_without(axis))
                .or_default()
                .entry(c.value(axis))
                .or_default()
                .push(i);
        }
        for (slice, groups) in &slices {
            for (ia, va) in values.iter().enumerate() {
                for vb in &values[ia + 1..] {
                    let pair = (va.clone(), vb.clone());
                    let (Some(ga), Some(gb)) = (groups.get(va), groups.get(vb)) else {
                        out.skipped.push(SkippedEnvironment {
                            axis,
                            slice: slice.clone(),
                            value_pair: (va.to_string(), vb.to_string()),
                            reason: "no records for one configuration".into(),
                        });
                        continue;
                    };
                    let pairs: Vec<(usize, usize)> = ga
                        .iter()
                        .flat_map(|&a| gb.iter().map(move |&b| (a, b)))
                        .collect();
                    let m_test = ga
                        .iter()
                        .chain(gb)
                        .map(|&i| records[i].test_set_size)
                        .min()
                        .expect("nonempty groups");
                    out.environments.push(Environment {
                        id: env_id(axis, &pair, slice),
                        axis,
                        config_pairs: vec![(records[ga[0]].config.clone(), records[gb[0]].config.clone())],
                        value_pair: pair,
                        pairs,
                        m_test,
                        weak: false,
                    });
                }
            }
        }
    }
    out
}

/// Merges strict environments sharing an axis and value pair into one
/// environment whose samples are the union of theirs.
pub fn build_weak_environments(strict: &[Environment]) -> Vec<Environment> {
    let mut groups: BTreeMap<(Axis, AxisValue, AxisValue), Environment> = BTreeMap::new();
    for e in strict {
        let key = (e.axis, e.value_pair.0.clone(), e.value_pair.1.clone());
        groups
            .entry(key)
            .and_modify(|w| {
                w.pairs.extend_from_slice(&e.pairs);
                w.config_pairs.extend(e.config_pairs.iter().cloned());
                w.m_test = w.m_test.min(e.m_test);
            })
            .or_insert_with(|| Environment {
                id: env_id(e.axis, &e.value_pair, "weak"),
                weak: true,
                ..e.clone()
            });
    }
    groups.into_values().collect()
}
