//! Training-dynamics statistics, easy/hard splits, word overlap and
//! plot-ready exports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ResolvedPair;
use crate::error::{Error, Result};
use crate::text::normalized_tokens;
use crate::trainer::TrainingDynamics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub uuid: String,
    /// Mean gold-label probability.
    pub confidence: f64,
    /// Population standard deviation of the gold-label probability.
    pub variability: f64,
    /// Fraction of epochs with gold-label probability strictly above 0.5.
    pub correctness: f64,
}

/// `(confidence, variability, correctness)` of one probability trace.
pub fn summarize_trace(probs: &[f64]) -> Result<(f64, f64, f64)> {
    if probs.is_empty() {
        return Err(Error::invalid("a dynamics trace needs at least one epoch"));
    }
    let n = probs.len() as f64;
    let mean = probs.iter().sum::<f64>() / n;
    let var = probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    let correct = probs.iter().filter(|&&p| p > 0.5).count() as f64 / n;
    Ok((mean, var.sqrt(), correct))
}

pub fn summarize_dynamics(dynamics: &TrainingDynamics) -> Result<Vec<DynamicsSummary>> {
    if dynamics.instances.is_empty() {
        return Err(Error::invalid("dynamics are empty"));
    }
    dynamics
        .instances
        .iter()
        .map(|(uuid, d)| {
            let (confidence, variability, correctness) =
                summarize_trace(&d.gold_probs).map_err(|e| Error::instance(uuid, e.to_string()))?;
            Ok(DynamicsSummary {
                uuid: uuid.clone(),
                confidence,
                variability,
                correctness,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DifficultyMethod {
    MinMaxWeights,
    Cartography,
}

impl fmt::Display for DifficultyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyMethod::MinMaxWeights => "MinMaxWeights",
            DifficultyMethod::Cartography => "Cartography",
        })
    }
}

impl FromStr for DifficultyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "minmaxweights" | "minmax" | "weights" => Ok(DifficultyMethod::MinMaxWeights),
            "cartography" => Ok(DifficultyMethod::Cartography),
            _ => Err(Error::invalid(format!("unknown difficulty method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultySets {
    pub method: DifficultyMethod,
    pub easy: BTreeSet<String>,
    pub hard: BTreeSet<String>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean-split classification gated on final-epoch correctness.
///
/// `MinMaxWeights`: easy = correct with weight below the mean weight of the
/// correct group; hard = incorrect with weight above the mean of the
/// incorrect group. `Cartography` does the same with confidence, reversed.
/// Instances exactly at a mean fall in neither set.
pub fn classify_difficulty(
    summaries: &[DynamicsSummary],
    final_weights: &BTreeMap<String, f64>,
    final_correct: &BTreeMap<String, bool>,
    method: DifficultyMethod,
) -> Result<DifficultySets> {
    let uuids: BTreeSet<&String> = summaries.iter().map(|s| &s.uuid).collect();
    if uuids.len() != summaries.len() {
        return Err(Error::invalid("duplicate uuid in summaries"));
    }
    if !uuids.iter().copied().eq(final_weights.keys()) || !uuids.iter().copied().eq(final_correct.keys()) {
        return Err(Error::invalid(
            "summaries, weights and predictions must cover the same uuids",
        ));
    }
    let score = |s: &DynamicsSummary| match method {
        DifficultyMethod::MinMaxWeights => final_weights[&s.uuid],
        DifficultyMethod::Cartography => s.confidence,
    };
    let (correct, incorrect): (Vec<&DynamicsSummary>, Vec<&DynamicsSummary>) =
        summaries.iter().partition(|s| final_correct[&s.uuid]);
    let correct_scores: Vec<f64> = correct.iter().map(|s| score(s)).collect();
    let incorrect_scores: Vec<f64> = incorrect.iter().map(|s| score(s)).collect();

    let mut sets = DifficultySets {
        method,
        easy: BTreeSet::new(),
        hard: BTreeSet::new(),
    };
    match mean(&correct_scores) {
        Some(m) => {
            for (s, &v) in correct.iter().zip(&correct_scores) {
                let easy = match method {
                    DifficultyMethod::MinMaxWeights => v < m,
                    DifficultyMethod::Cartography => v > m,
                };
                if easy {
                    sets.easy.insert(s.uuid.clone());
                }
            }
        }
        None => log::warn!("{method}: no correctly predicted instances; easy set is empty"),
    }
    match mean(&incorrect_scores) {
        Some(m) => {
            for (s, &v) in incorrect.iter().zip(&incorrect_scores) {
                let hard = match method {
                    DifficultyMethod::MinMaxWeights => v > m,
                    DifficultyMethod::Cartography => v < m,
                };
                if hard {
                    sets.hard.insert(s.uuid.clone());
                }
            }
        }
        None => log::warn!("{method}: no incorrectly predicted instances; hard set is empty"),
    }
    Ok(sets)
}

/// Classification straight from logged dynamics, using final-epoch weights
/// and correctness.
pub fn classify_from_dynamics(dynamics: &TrainingDynamics, method: DifficultyMethod) -> Result<DifficultySets> {
    let summaries = summarize_dynamics(dynamics)?;
    let weights = final_weights(dynamics);
    let correct = dynamics
        .instances
        .iter()
        .map(|(u, d)| (u.clone(), d.final_correct()))
        .collect();
    classify_difficulty(&summaries, &weights, &correct, method)
}

pub fn final_weights(dynamics: &TrainingDynamics) -> BTreeMap<String, f64> {
    dynamics
        .instances
        .iter()
        .filter_map(|(u, d)| d.final_weight().map(|w| (u.clone(), w)))
        .collect()
}

/// `(easy ∩ easy, hard ∩ hard)`.
pub fn intersect_difficulty(a: &DifficultySets, b: &DifficultySets) -> (BTreeSet<String>, BTreeSet<String>) {
    (
        a.easy.intersection(&b.easy).cloned().collect(),
        a.hard.intersection(&b.hard).cloned().collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub uuid: String,
    pub overlap: f64,
}

/// Share of distinct hypothesis tokens that also occur in the premise.
pub fn word_overlap(pair: &ResolvedPair) -> Result<OverlapStats> {
    let hyp: HashSet<String> = normalized_tokens(&pair.hypothesis).into_iter().collect();
    if hyp.is_empty() {
        return Err(Error::instance(&pair.uuid, "hypothesis has no tokens"));
    }
    let prem: HashSet<String> = normalized_tokens(&pair.premise).into_iter().collect();
    let shared = hyp.iter().filter(|t| prem.contains(*t)).count();
    Ok(OverlapStats {
        uuid: pair.uuid.clone(),
        overlap: shared as f64 / hyp.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub uuid: String,
    pub method: DifficultyMethod,
    pub group: String,
    pub overlap: f64,
}

/// Word overlap of every easy and hard instance, for comparing groups.
pub fn overlap_by_difficulty(pairs: &[ResolvedPair], sets: &[&DifficultySets]) -> Result<Vec<OverlapRow>> {
    let by_uuid: BTreeMap<&str, &ResolvedPair> = pairs.iter().map(|p| (p.uuid.as_str(), p)).collect();
    let mut rows = Vec::new();
    for set in sets {
        for (group, members) in [("easy", &set.easy), ("hard", &set.hard)] {
            for uuid in members {
                let pair = by_uuid
                    .get(uuid.as_str())
                    .ok_or_else(|| Error::instance(uuid, "no resolved pair for this uuid"))?;
                rows.push(OverlapRow {
                    uuid: uuid.clone(),
                    method: set.method,
                    group: group.to_string(),
                    overlap: word_overlap(pair)?.overlap,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed. Identical
/// values collapse to a single bin.
pub fn weight_histogram(weights: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if weights.is_empty() {
        return Err(Error::invalid("cannot bin an empty weight list"));
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    let (lo, hi) = range(weights);
    if lo == hi {
        return Ok(vec![HistogramBin {
            bin: 0,
            lower: lo,
            upper: hi,
            count: weights.len(),
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin: b,
            lower: lo + b as f64 * width,
            upper: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &w in weights {
        out[bin_index(w, lo, hi, bins)].count += 1;
    }
    Ok(out)
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn bin_index(w: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi == lo {
        return 0;
    }
    let raw = ((w - lo) / (hi - lo) * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// One row of the data map. `bin` is the weight-histogram bin of the
/// instance's final auxiliary weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMapRow {
    pub uuid: String,
    pub variability: f64,
    pub confidence: f64,
    pub correctness: f64,
    pub bin: usize,
}

pub fn data_map_rows(
    summaries: &[DynamicsSummary],
    weights: &BTreeMap<String, f64>,
    bins: usize,
) -> Result<Vec<DataMapRow>> {
    if summaries.is_empty() {
        return Err(Error::invalid("no summaries to export"));
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    let ws: Vec<f64> = summaries
        .iter()
        .map(|s| {
            weights
                .get(&s.uuid)
                .copied()
                .ok_or_else(|| Error::instance(&s.uuid, "no final weight"))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = range(&ws);
    Ok(summaries
        .iter()
        .zip(ws)
        .map(|(s, w)| DataMapRow {
            uuid: s.uuid.clone(),
            variability: s.variability,
            confidence: s.confidence,
            correctness: s.correctness,
            bin: bin_index(w, lo, hi, bins),
        })
        .collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

/// Writes the data map to `data_map` and the weight histogram to `histogram`.
pub fn export_data_map(
    summaries: &[DynamicsSummary],
    weights: &BTreeMap<String, f64>,
    bins: usize,
    data_map: &Path,
    histogram: &Path,
) -> Result<()> {
    let rows = data_map_rows(summaries, weights, bins)?;
    let ws: Vec<f64> = summaries.iter().map(|s| weights[&s.uuid]).collect();
    write_csv(data_map, &rows)?;
    write_csv(histogram, &weight_histogram(&ws, bins)?)
}

pub fn read_data_map(path: &Path) -> Result<Vec<DataMapRow>> {
    read_csv(path)
}

pub fn read_histogram(path: &Path) -> Result<Vec<HistogramBin>> {
    read_csv(path)
}

pub fn write_overlap(path: &Path, rows: &[OverlapRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_difficulty(path: &Path, sets: &DifficultySets) -> Result<()> {
    let text = serde_json::to_string_pretty(sets).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_difficulty(path: &Path) -> Result<DifficultySets> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
