//! Learner, auxiliary weighting network, loss and objective, with
//! hand-derived gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::trainer::features::FeatureVector;

pub const LOSS_EPS: f64 = 1e-12;
const N_CLASSES: usize = 2;

/// Linear softmax classifier: `W` (`dim × 2`, row per feature) then bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LearnerParams {
    pub fn zeros(dim: usize) -> Self {
        LearnerParams {
            dim,
            values: vec![0.0; dim * N_CLASSES + N_CLASSES],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight_index(feature: usize, class: usize) -> usize {
        feature * N_CLASSES + class
    }

    pub fn bias_index(&self, class: usize) -> usize {
        self.dim * N_CLASSES + class
    }

    pub fn logits(&self, x: &FeatureVector) -> [f64; 2] {
        let mut z = [self.values[self.bias_index(0)], self.values[self.bias_index(1)]];
        for &(j, c) in &x.entries {
            let row = j as usize * N_CLASSES;
            z[0] += c * self.values[row];
            z[1] += c * self.values[row + 1];
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Class probabilities indexed by [`Label::index`].
pub fn learner_predict_proba(theta: &LearnerParams, x: &FeatureVector) -> [f64; 2] {
    softmax(theta.logits(x))
}

pub fn cross_entropy_loss(probs: [f64; 2], gold: Label) -> f64 {
    -probs[gold.index()].max(LOSS_EPS).ln()
}

/// Two-layer ReLU network over `[x/‖x‖₁ ; onehot(gold)]` with a logistic head.
///
/// Layout: `W1` (`(dim+2) × h1`, one row per input), `b1`, `W2` (`h2 × h1`),
/// `b2`, `w3` (`h2`), `b3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    pub dim: usize,
    pub h1: usize,
    pub h2: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxLayout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub len: usize,
}

impl AuxParams {
    pub fn layout_for(dim: usize, h1: usize, h2: usize) -> AuxLayout {
        let w1 = 0;
        let b1 = w1 + (dim + N_CLASSES) * h1;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        AuxLayout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + 1,
        }
    }

    pub fn layout(&self) -> AuxLayout {
        Self::layout_for(self.dim, self.h1, self.h2)
    }

    pub fn zeros(dim: usize, h1: usize, h2: usize) -> Self {
        let len = Self::layout_for(dim, h1, h2).len;
        AuxParams {
            dim,
            h1,
            h2,
            values: vec![0.0; len],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases. The first layer uses
    /// a fan-in of 64 rather than `dim + 2`, since inputs are sparse.
    pub fn init<R: Rng>(dim: usize, h1: usize, h2: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim, h1, h2);
        let l = p.layout();
        let fill = |vals: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in vals {
                *v = rng.gen_range(-bound..bound);
            }
        };
        fill(&mut p.values[l.w1..l.b1], 64, rng);
        fill(&mut p.values[l.w2..l.b2], h1, rng);
        fill(&mut p.values[l.w3..l.b3], h2, rng);
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row of `W1` for the one-hot label input.
    pub fn label_row(&self, gold: Label) -> usize {
        self.dim + gold.index()
    }

    pub fn forward(&self, x: &FeatureVector, gold: Label) -> AuxForward {
        let l = self.layout();
        let (h1, h2) = (self.h1, self.h2);
        let v = &self.values;
        let mut a1 = v[l.b1..l.b1 + h1].to_vec();
        let mut add_row = |row: usize, scale: f64| {
            let w = &v[l.w1 + row * h1..l.w1 + (row + 1) * h1];
            for (acc, wk) in a1.iter_mut().zip(w) {
                *acc += scale * wk;
            }
        };
        let scale_x = aux_input_scale(x);
        for &(j, c) in &x.entries {
            add_row(j as usize, c * scale_x);
        }
        add_row(self.label_row(gold), 1.0);
        let z1: Vec<f64> = a1.iter().map(|&a| a.max(0.0)).collect();
        let mut a2 = v[l.b2..l.b2 + h2].to_vec();
        for (k2, acc) in a2.iter_mut().enumerate() {
            let w = &v[l.w2 + k2 * h1..l.w2 + (k2 + 1) * h1];
            *acc += w.iter().zip(&z1).map(|(a, b)| a * b).sum::<f64>();
        }
        let z2: Vec<f64> = a2.iter().map(|&a| a.max(0.0)).collect();
        let s = v[l.b3] + v[l.w3..l.w3 + h2].iter().zip(&z2).map(|(a, b)| a * b).sum::<f64>();
        AuxForward {
            a1,
            z1,
            a2,
            z2,
            logit: s,
            weight: sigmoid(s),
        }
    }

    /// Adds `scale · ∂g/∂φ` for one input into `grad`.
    pub fn accumulate_weight_grad(
        &self,
        x: &FeatureVector,
        gold: Label,
        fwd: &AuxForward,
        scale: f64,
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let (h1, h2) = (self.h1, self.h2);
        let v = &self.values;
        let ds = scale * fwd.weight * (1.0 - fwd.weight);
        grad[l.b3] += ds;
        let mut da2 = vec![0.0; h2];
        for k2 in 0..h2 {
            grad[l.w3 + k2] += ds * fwd.z2[k2];
            if fwd.a2[k2] > 0.0 {
                da2[k2] = ds * v[l.w3 + k2];
            }
        }
        let mut da1 = vec![0.0; h1];
        for (k2, &d) in da2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.b2 + k2] += d;
            let row = l.w2 + k2 * h1;
            for k1 in 0..h1 {
                grad[row + k1] += d * fwd.z1[k1];
                da1[k1] += d * v[row + k1];
            }
        }
        for (d, &a) in da1.iter_mut().zip(&fwd.a1) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        for (k1, &d) in da1.iter().enumerate() {
            grad[l.b1 + k1] += d;
        }
        let mut add_row = |row: usize, c: f64| {
            let base = l.w1 + row * h1;
            for (k1, &d) in da1.iter().enumerate() {
                grad[base + k1] += c * d;
            }
        };
        let scale_x = aux_input_scale(x);
        for &(j, c) in &x.entries {
            add_row(j as usize, c * scale_x);
        }
        add_row(self.label_row(gold), 1.0);
    }
}

#[derive(Debug, Clone)]
pub struct AuxForward {
    pub a1: Vec<f64>,
    pub z1: Vec<f64>,
    pub a2: Vec<f64>,
    pub z2: Vec<f64>,
    pub logit: f64,
    pub weight: f64,
}

/// The feature block of the auxiliary input is scaled to unit L1 norm so
/// its pre-activations do not grow with text length.
fn aux_input_scale(x: &FeatureVector) -> f64 {
    let n: f64 = x.entries.iter().map(|e| e.1.abs()).sum();
    if n > 0.0 {
        1.0 / n
    } else {
        1.0
    }
}

/// Largest `f64` below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside `(0, 1)` even where `f64`
/// would round to an endpoint.
pub fn sigmoid(s: f64) -> f64 {
    let g = if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    };
    g.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

pub fn aux_weight(phi: &AuxParams, x: &FeatureVector, gold: Label) -> f64 {
    phi.forward(x, gold).weight
}

/// One labeled example borrowed from a featurized corpus.
pub type Example<'a> = (&'a FeatureVector, Label);

fn check_batch(batch: &[Example<'_>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("objective needs a non-empty batch"));
    }
    Ok(())
}

/// `J(θ, φ) = mean_i g_φ(x_i, y_i) · L(f_θ(x_i), y_i)`.
pub fn minmax_objective(theta: &LearnerParams, phi: &AuxParams, batch: &[Example<'_>]) -> Result<f64> {
    let weights: Vec<f64> = batch.iter().map(|&(x, y)| aux_weight(phi, x, y)).collect();
    weighted_objective(theta, batch, &weights)
}

/// The objective with externally supplied instance weights.
pub fn weighted_objective(theta: &LearnerParams, batch: &[Example<'_>], weights: &[f64]) -> Result<f64> {
    check_batch(batch)?;
    if weights.len() != batch.len() {
        return Err(Error::invalid("one weight per batch instance is required"));
    }
    let total: f64 = batch
        .iter()
        .zip(weights)
        .map(|(&(x, y), w)| w * cross_entropy_loss(learner_predict_proba(theta, x), y))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Adds `∂J/∂θ` for the given weights into `grad`; returns `J`.
pub fn accumulate_theta_grad(
    theta: &LearnerParams,
    batch: &[Example<'_>],
    weights: &[f64],
    grad: &mut [f64],
) -> Result<f64> {
    check_batch(batch)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (&(x, y), &w) in batch.iter().zip(weights) {
        let p = learner_predict_proba(theta, x);
        total += w * cross_entropy_loss(p, y);
        if p[y.index()] < LOSS_EPS {
            // Clamped region: the loss is locally constant.
            continue;
        }
        for class in 0..N_CLASSES {
            let target = if class == y.index() { 1.0 } else { 0.0 };
            let d = w * (p[class] - target) / n;
            grad[theta.bias_index(class)] += d;
            for &(j, c) in &x.entries {
                grad[LearnerParams::weight_index(j as usize, class)] += c * d;
            }
        }
    }
    Ok(total / n)
}

/// Adds `∂J/∂φ` into `grad`; returns `J` and the per-instance weights.
pub fn accumulate_phi_grad(
    theta: &LearnerParams,
    phi: &AuxParams,
    batch: &[Example<'_>],
    grad: &mut [f64],
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut weights = Vec::with_capacity(batch.len());
    for &(x, y) in batch {
        let loss = cross_entropy_loss(learner_predict_proba(theta, x), y);
        let fwd = phi.forward(x, y);
        total += fwd.weight * loss;
        weights.push(fwd.weight);
        phi.accumulate_weight_grad(x, y, &fwd, loss / n, grad);
    }
    Ok((total / n, weights))
}

/// Full analytic gradients of `J` with respect to both parameter sets.
pub struct ObjectiveGrads {
    pub value: f64,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn objective_gradients(
    theta: &LearnerParams,
    phi: &AuxParams,
    batch: &[Example<'_>],
) -> Result<ObjectiveGrads> {
    let mut g_phi = vec![0.0; phi.len()];
    let (value, weights) = accumulate_phi_grad(theta, phi, batch, &mut g_phi)?;
    let mut g_theta = vec![0.0; theta.len()];
    accumulate_theta_grad(theta, batch, &weights, &mut g_theta)?;
    Ok(ObjectiveGrads {
        value,
        theta: g_theta,
        phi: g_phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(entries: &[(u32, f64)], dim: usize) -> FeatureVector {
        FeatureVector::from_counts(dim, entries.to_vec())
    }

    #[test]
    fn zero_learner_is_uniform() {
        let theta = LearnerParams::zeros(16);
        assert_eq!(learner_predict_proba(&theta, &fv(&[(3, 2.0)], 16)), [0.5, 0.5]);
    }

    #[test]
    fn softmax_by_hand() {
        let p = softmax([3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = softmax([rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)]);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_values() {
        assert_eq!(cross_entropy_loss([1.0, 0.0], Label::Entailment), 0.0);
        assert!((cross_entropy_loss([0.5, 0.5], Label::Contradiction) - 2f64.ln()).abs() < 1e-15);
        let clamped = cross_entropy_loss([1.0, 0.0], Label::Contradiction);
        assert!(clamped.is_finite());
        assert!((clamped + LOSS_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_aux_gives_half() {
        let phi = AuxParams::zeros(8, 4, 3);
        assert_eq!(aux_weight(&phi, &fv(&[(1, 1.0)], 8), Label::Entailment), 0.5);
        assert_eq!(aux_weight(&phi, &FeatureVector::zeros(8), Label::Contradiction), 0.5);
    }

    #[test]
    fn aux_depends_on_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = AuxParams::init(8, 4, 3, &mut rng);
        let x = fv(&[(2, 1.0), (5, 1.0)], 8);
        let we = aux_weight(&phi, &x, Label::Entailment);
        let wc = aux_weight(&phi, &x, Label::Contradiction);
        assert!(we > 0.0 && we < 1.0 && wc > 0.0 && wc < 1.0);
        assert_ne!(we, wc);
    }

    #[test]
    fn sigmoid_is_monotone_and_bounded() {
        let xs = [-40.0, -3.0, -1e-3, 0.0, 1e-3, 2.0, 30.0];
        for w in xs.windows(2) {
            assert!(sigmoid(w[0]) < sigmoid(w[1]));
        }
        assert!(xs.iter().all(|&s| sigmoid(s) > 0.0 && sigmoid(s) < 1.0));
        assert!(sigmoid(800.0) < 1.0 && sigmoid(-800.0) > 0.0);
    }

    #[test]
    fn objective_arithmetic() {
        // Losses 2 and 4 via probabilities e^-2 and e^-4 on the gold class.
        let dim = 4;
        let mut theta = LearnerParams::zeros(dim);
        let target = |loss: f64| {
            let p: f64 = (-loss).exp();
            (p / (1.0 - p)).ln()
        };
        theta.values[LearnerParams::weight_index(0, 0)] = target(2.0);
        theta.values[LearnerParams::weight_index(1, 0)] = target(4.0);
        let x0 = fv(&[(0, 1.0)], dim);
        let x1 = fv(&[(1, 1.0)], dim);
        let batch = [(&x0, Label::Entailment), (&x1, Label::Entailment)];
        let j = weighted_objective(&theta, &batch, &[0.5, 1.0]).unwrap();
        assert!((j - 2.5).abs() < 1e-12);
        let single = weighted_objective(&theta, &batch[..1], &[0.3]).unwrap();
        let l0 = cross_entropy_loss(learner_predict_proba(&theta, &x0), Label::Entailment);
        assert_eq!(single, 0.3 * l0);
        assert!(weighted_objective(&theta, &[], &[]).is_err());
        let phi = AuxParams::zeros(dim, 2, 2);
        assert!(minmax_objective(&theta, &phi, &[]).is_err());
    }

    #[test]
    fn layout_lengths() {
        let l = AuxParams::layout_for(10, 4, 3);
        assert_eq!(l.len, 12 * 4 + 4 + 3 * 4 + 3 + 3 + 1);
        assert_eq!(AuxParams::zeros(10, 4, 3).len(), l.len);
        assert_eq!(LearnerParams::zeros(10).len(), 22);
    }
}
