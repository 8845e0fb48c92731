//! Min-max training of a hashed linear learner against an auxiliary
//! instance-weighting network.
//!
//! Each mini-batch takes one AdamW ascent step on the auxiliary parameters
//! (maximizing the weighted loss) followed by one AdamW descent step on the
//! learner. At the end of every epoch the gold-label probability and the
//! auxiliary weight of every training instance are logged.

pub mod checkpoint;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, ResolvedPair};
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use features::{featurize, FeatureVector, DEFAULT_DIM};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{
    aux_weight, cross_entropy_loss, learner_predict_proba, minmax_objective, weighted_objective,
    AuxParams, Example, LearnerParams,
};
use optim::{AdamW, AdamWConfig, Direction};

/// What the learner minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Auxiliary-weighted loss with alternating ascent/descent steps.
    #[default]
    MinMax,
    /// Unweighted mean loss; the auxiliary network is left untouched. Useful
    /// for warm-starting the learner before min-max training.
    Plain,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::MinMax => "minmax",
            Objective::Plain => "plain",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" | "min-max" => Ok(Objective::MinMax),
            "plain" => Ok(Objective::Plain),
            _ => Err(Error::invalid(format!("unknown objective `{s}` (expected minmax or plain)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learner_lr: f64,
    pub aux_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub objective: Objective,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            learner_lr: 3.3e-3,
            aux_lr: 5.8e-3,
            weight_decay: 0.01,
            seed: 0,
            dim: DEFAULT_DIM,
            hidden1: 64,
            hidden2: 16,
            objective: Objective::MinMax,
            dynamics_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learner_lr > 0.0 && self.learner_lr.is_finite()) {
            return fail("learner_lr must be positive");
        }
        if !(self.aux_lr > 0.0 && self.aux_lr.is_finite()) {
            return fail("aux_lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return fail("dim out of range");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return fail("hidden sizes must be positive");
        }
        Ok(())
    }
}

/// One line of the dynamics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub uuid: String,
    /// 1-based.
    pub epoch: usize,
    pub gold_prob: f64,
    pub aux_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstanceDynamics {
    pub gold_probs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl InstanceDynamics {
    /// Whether the final-epoch prediction matches the gold label.
    pub fn final_correct(&self) -> bool {
        self.gold_probs.last().is_some_and(|&p| p > 0.5)
    }

    pub fn final_weight(&self) -> Option<f64> {
        self.weights.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingDynamics {
    pub epochs: usize,
    pub instances: BTreeMap<String, InstanceDynamics>,
}

impl TrainingDynamics {
    /// Log lines ordered by epoch, then uuid.
    pub fn records(&self) -> Vec<DynamicsRecord> {
        let mut out = Vec::with_capacity(self.epochs * self.instances.len());
        for e in 0..self.epochs {
            for (uuid, d) in &self.instances {
                out.push(DynamicsRecord {
                    uuid: uuid.clone(),
                    epoch: e + 1,
                    gold_prob: d.gold_probs[e],
                    aux_weight: d.weights[e],
                });
            }
        }
        out
    }

    /// Rebuilds dynamics from log lines; every instance must have exactly
    /// one record for each epoch `1..=E`.
    pub fn from_records(records: &[DynamicsRecord]) -> Result<Self> {
        let mut by_uuid: BTreeMap<String, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
        for r in records {
            if r.epoch == 0 {
                return Err(Error::instance(&r.uuid, "epochs are numbered from 1"));
            }
            if !(0.0..=1.0).contains(&r.gold_prob) {
                return Err(Error::instance(&r.uuid, format!("gold_prob {} outside [0,1]", r.gold_prob)));
            }
            let slot = by_uuid.entry(r.uuid.clone()).or_default();
            if slot.insert(r.epoch, (r.gold_prob, r.aux_weight)).is_some() {
                return Err(Error::instance(&r.uuid, format!("duplicate record for epoch {}", r.epoch)));
            }
        }
        let epochs = by_uuid.values().map(BTreeMap::len).max().unwrap_or(0);
        let mut instances = BTreeMap::new();
        for (uuid, per_epoch) in by_uuid {
            if per_epoch.len() != epochs || per_epoch.keys().copied().ne(1..=epochs) {
                return Err(Error::instance(
                    &uuid,
                    format!("expected records for epochs 1..={epochs}"),
                ));
            }
            let (gold_probs, weights) = per_epoch.into_values().unzip();
            instances.insert(uuid, InstanceDynamics { gold_probs, weights });
        }
        Ok(TrainingDynamics { epochs, instances })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        crate::corpus::write_jsonl(path, self.records())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::from_records(&crate::corpus::read_jsonl::<DynamicsRecord>(path)?)
    }
}

pub struct TrainOutput {
    pub theta: LearnerParams,
    pub phi: AuxParams,
    pub dynamics: TrainingDynamics,
}

fn labeled_features(pairs: &[ResolvedPair], dim: usize) -> Result<Vec<(FeatureVector, Label)>> {
    pairs
        .iter()
        .map(|p| {
            let label = p
                .label
                .ok_or_else(|| Error::instance(&p.uuid, "training requires a gold label"))?;
            Ok((featurize(p, dim), label))
        })
        .collect()
}

fn diverged(what: &str, epoch: usize, batch: &[usize], pairs: &[ResolvedPair], value: f64) -> Error {
    let uuids: Vec<&str> = batch.iter().map(|&i| pairs[i].uuid.as_str()).collect();
    Error::Diverged(format!(
        "{what} is {value} at epoch {} on batch [{}]",
        epoch + 1,
        uuids.join(", ")
    ))
}

/// Trains on labeled pairs. `warm_start` replaces the zero learner
/// initialization; the auxiliary network is always initialized from the seed.
pub fn train(
    pairs: &[ResolvedPair],
    cfg: &TrainConfig,
    warm_start: Option<&LearnerParams>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::invalid("training needs at least two instances"));
    }
    let data = labeled_features(pairs, cfg.dim)?;
    for label in Label::ALL {
        if !data.iter().any(|(_, y)| *y == label) {
            return Err(Error::invalid(format!(
                "training corpus has no {} instances; both labels are required",
                label.as_str()
            )));
        }
    }
    let mut theta = match warm_start {
        Some(t) if t.dim != cfg.dim => {
            return Err(Error::invalid(format!(
                "warm-start dimension {} does not match configured dim {}",
                t.dim, cfg.dim
            )))
        }
        Some(t) if !t.is_finite() => return Err(Error::invalid("warm-start parameters are not finite")),
        Some(t) => t.clone(),
        None => LearnerParams::zeros(cfg.dim),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut phi = AuxParams::init(cfg.dim, cfg.hidden1, cfg.hidden2, &mut rng);
    let mut opt_theta = AdamW::new(AdamWConfig::new(cfg.learner_lr, cfg.weight_decay), theta.len());
    let mut opt_phi = AdamW::new(AdamWConfig::new(cfg.aux_lr, cfg.weight_decay), phi.len());
    let mut g_theta = vec![0.0; theta.len()];
    let mut g_phi = match cfg.objective {
        Objective::MinMax => vec![0.0; phi.len()],
        Objective::Plain => Vec::new(),
    };

    let mut dynamics = TrainingDynamics {
        epochs: cfg.epochs,
        instances: pairs
            .iter()
            .map(|p| (p.uuid.clone(), InstanceDynamics::default()))
            .collect(),
    };
    if dynamics.instances.len() != pairs.len() {
        return Err(Error::invalid("training pairs contain duplicate uuids"));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            let weights = match cfg.objective {
                Objective::MinMax => {
                    g_phi.iter_mut().for_each(|g| *g = 0.0);
                    let (j, _) = model::accumulate_phi_grad(&theta, &phi, &batch, &mut g_phi)?;
                    if !j.is_finite() {
                        return Err(diverged("objective", epoch, chunk, pairs, j));
                    }
                    opt_phi.step(&mut phi.values, &g_phi, Direction::Ascent);
                    batch.iter().map(|&(x, y)| aux_weight(&phi, x, y)).collect()
                }
                Objective::Plain => vec![1.0; batch.len()],
            };
            g_theta.iter_mut().for_each(|g| *g = 0.0);
            let j = model::accumulate_theta_grad(&theta, &batch, &weights, &mut g_theta)?;
            if !j.is_finite() {
                return Err(diverged("objective", epoch, chunk, pairs, j));
            }
            opt_theta.step(&mut theta.values, &g_theta, Direction::Descent);
        }
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite parameters after epoch {}",
                epoch + 1
            )));
        }
        for (pair, (x, y)) in pairs.iter().zip(&data) {
            let p = learner_predict_proba(&theta, x)[y.index()];
            let w = aux_weight(&phi, x, *y);
            let d = dynamics.instances.get_mut(&pair.uuid).expect("uuid registered");
            d.gold_probs.push(p);
            d.weights.push(w);
        }
        log::info!("epoch {}/{} done", epoch + 1, cfg.epochs);
    }
    if let Some(path) = &cfg.dynamics_path {
        dynamics.write_jsonl(path)?;
    }
    Ok(TrainOutput { theta, phi, dynamics })
}

/// Fraction of pairs whose argmax prediction matches the gold label.
pub fn accuracy(theta: &LearnerParams, pairs: &[ResolvedPair]) -> Result<f64> {
    let data = labeled_features(pairs, theta.dim)?;
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty set is undefined"));
    }
    let hits = data
        .iter()
        .filter(|(x, y)| argmax_label(learner_predict_proba(theta, x)) == *y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Ties go to Entailment.
pub fn argmax_label(probs: [f64; 2]) -> Label {
    if probs[Label::Contradiction.index()] > probs[Label::Entailment.index()] {
        Label::Contradiction
    } else {
        Label::Entailment
    }
}

/// Most frequent label; errors on an empty list or a tie.
pub fn majority_vote(labels: &[Label]) -> Result<Label> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    match counts[0].cmp(&counts[1]) {
        std::cmp::Ordering::Greater => Ok(Label::from_index(0)),
        std::cmp::Ordering::Less => Ok(Label::from_index(1)),
        std::cmp::Ordering::Equal if labels.is_empty() => Err(Error::invalid("no votes to count")),
        std::cmp::Ordering::Equal => Err(Error::invalid("tied vote; use an odd number of runs")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Odd number of stochastic passes.
    pub runs: usize,
    /// Feature dropout probability for runs when `runs > 1`.
    pub dropout: f64,
    /// Run `r` draws from `seed + r`.
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            runs: 5,
            dropout: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub uuid: String,
    pub label: Label,
    pub votes: Vec<Label>,
}

fn dropout_features<R: Rng>(x: &FeatureVector, p: f64, rng: &mut R) -> FeatureVector {
    let keep = 1.0 - p;
    let entries = x
        .entries
        .iter()
        .filter(|_| rng.gen::<f64>() < keep)
        .map(|&(i, c)| (i, c / keep))
        .collect();
    FeatureVector { dim: x.dim, entries }
}

/// Majority vote over `runs` passes. With one run the pass is
/// deterministic and dropout is not applied.
pub fn predict(theta: &LearnerParams, pairs: &[ResolvedPair], opts: &PredictOptions) -> Result<Vec<Prediction>> {
    if opts.runs == 0 || opts.runs.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "number of runs must be odd, got {}",
            opts.runs
        )));
    }
    if !(0.0..1.0).contains(&opts.dropout) {
        return Err(Error::invalid("dropout must lie in [0, 1)"));
    }
    let feats: Vec<FeatureVector> = pairs.iter().map(|p| featurize(p, theta.dim)).collect();
    let mut votes: Vec<Vec<Label>> = vec![Vec::with_capacity(opts.runs); pairs.len()];
    for r in 0..opts.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        for (x, v) in feats.iter().zip(votes.iter_mut()) {
            let probs = if opts.runs == 1 {
                learner_predict_proba(theta, x)
            } else {
                learner_predict_proba(theta, &dropout_features(x, opts.dropout, &mut rng))
            };
            v.push(argmax_label(probs));
        }
    }
    pairs
        .iter()
        .zip(votes)
        .map(|(p, votes)| {
            Ok(Prediction {
                uuid: p.uuid.clone(),
                label: majority_vote(&votes)?,
                votes,
            })
        })
        .collect()
}
