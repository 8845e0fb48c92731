//! Central finite-difference check of the objective gradients.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trainer::model::{minmax_objective, objective_gradients, AuxParams, Example, LearnerParams};

/// Coordinates sampled from each parameter set.
const COORDS_PER_SET: usize = 30;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamSet {
    Learner,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub set: ParamSet,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords: Vec<CoordCheck>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Coordinates whose gradient can be nonzero for this batch.
fn active_coords(theta: &LearnerParams, phi: &AuxParams, batch: &[Example<'_>]) -> (Vec<usize>, Vec<usize>) {
    let mut features = BTreeSet::new();
    let mut labels = BTreeSet::new();
    for &(x, y) in batch {
        features.extend(x.entries.iter().map(|&(j, _)| j as usize));
        labels.insert(y);
    }
    let mut t: Vec<usize> = features
        .iter()
        .flat_map(|&j| [LearnerParams::weight_index(j, 0), LearnerParams::weight_index(j, 1)])
        .collect();
    t.extend([theta.bias_index(0), theta.bias_index(1)]);

    let l = phi.layout();
    let rows = features
        .iter()
        .copied()
        .chain(labels.iter().map(|&y| phi.label_row(y)));
    let mut p: Vec<usize> = rows
        .flat_map(|r| (0..phi.h1).map(move |k| l.w1 + r * phi.h1 + k))
        .collect();
    p.extend(l.b1..l.len);
    (t, p)
}

fn sample(coords: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    if coords.len() <= COORDS_PER_SET {
        return coords.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, coords.len(), COORDS_PER_SET)
        .into_iter()
        .map(|i| coords[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Compares analytic gradients of the min-max objective with central
/// differences of step `h` on up to 30 learner and 30 auxiliary coordinates
/// that the batch can influence.
pub fn gradient_check(
    theta: &LearnerParams,
    phi: &AuxParams,
    batch: &[Example<'_>],
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = objective_gradients(theta, phi, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_active, p_active) = active_coords(theta, phi, batch);
    let t_coords = sample(&t_active, &mut rng);
    let p_coords = sample(&p_active, &mut rng);

    let mut coords = Vec::with_capacity(t_coords.len() + p_coords.len());
    let mut theta_buf = theta.clone();
    for &i in &t_coords {
        let orig = theta_buf.values[i];
        theta_buf.values[i] = orig + h;
        let up = minmax_objective(&theta_buf, phi, batch)?;
        theta_buf.values[i] = orig - h;
        let down = minmax_objective(&theta_buf, phi, batch)?;
        theta_buf.values[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        coords.push(CoordCheck {
            set: ParamSet::Learner,
            index: i,
            analytic: grads.theta[i],
            numeric,
            rel_error: relative_error(grads.theta[i], numeric),
        });
    }
    let mut phi_buf = phi.clone();
    for &i in &p_coords {
        let orig = phi_buf.values[i];
        phi_buf.values[i] = orig + h;
        let up = minmax_objective(theta, &phi_buf, batch)?;
        phi_buf.values[i] = orig - h;
        let down = minmax_objective(theta, &phi_buf, batch)?;
        phi_buf.values[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        coords.push(CoordCheck {
            set: ParamSet::Auxiliary,
            index: i,
            analytic: grads.phi[i],
            numeric,
            rel_error: relative_error(grads.phi[i], numeric),
        });
    }
    let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, coords })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::trainer::features::FeatureVector;
    use crate::trainer::model::{accumulate_theta_grad, weighted_objective};
    use rand::Rng;

    fn random_fixture(seed: u64, dim: usize) -> (LearnerParams, AuxParams, Vec<(FeatureVector, Label)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = LearnerParams::zeros(dim);
        for v in &mut theta.values {
            *v = rng.gen_range(-0.5..0.5);
        }
        let phi = AuxParams::init(dim, 16, 8, &mut rng);
        let batch = (0..4)
            .map(|_| {
                let raw = (0..6).map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(1..3) as f64)).collect();
                let y = Label::from_index(rng.gen_range(0..2));
                (FeatureVector::from_counts(dim, raw), y)
            })
            .collect();
        (theta, phi, batch)
    }

    #[test]
    fn random_instances_pass() {
        for seed in 0..5 {
            let (theta, phi, data) = random_fixture(seed, 128);
            let batch: Vec<Example<'_>> = data.iter().map(|(x, y)| (x, *y)).collect();
            let r = gradient_check(&theta, &phi, &batch, 1e-5, seed).unwrap();
            assert!(r.coords.len() >= 50);
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn zero_parameters_zero_features() {
        let dim = 8;
        let theta = LearnerParams::zeros(dim);
        let phi = AuxParams::zeros(dim, 4, 3);
        let x = FeatureVector::zeros(dim);
        let batch = [(&x, Label::Entailment), (&x, Label::Contradiction)];
        let grads = objective_gradients(&theta, &phi, &batch).unwrap();
        for j in 0..dim {
            for c in 0..2 {
                assert_eq!(grads.theta[LearnerParams::weight_index(j, c)], 0.0);
            }
        }
        let l = phi.layout();
        assert!(grads.phi[l.w1..l.b3].iter().all(|&g| g == 0.0));
        let r = gradient_check(&theta, &phi, &batch, 1e-5, 0).unwrap();
        for c in &r.coords {
            let is_bias = match c.set {
                ParamSet::Learner => c.index >= dim * 2,
                ParamSet::Auxiliary => c.index == l.b3,
            };
            if !is_bias {
                assert_eq!(c.analytic, 0.0);
                assert!(c.numeric.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn theta_gradient_scales_with_forced_weights() {
        let (theta, _, data) = random_fixture(11, 64);
        let batch: Vec<Example<'_>> = data.iter().map(|(x, y)| (x, *y)).collect();
        let w = [0.2, 0.9, 0.5, 0.7];
        let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let mut g1 = vec![0.0; theta.len()];
        let mut g2 = vec![0.0; theta.len()];
        accumulate_theta_grad(&theta, &batch, &w, &mut g1).unwrap();
        accumulate_theta_grad(&theta, &batch, &w2, &mut g2).unwrap();
        let h = 1e-5;
        let mut buf = theta.clone();
        for i in (0..theta.len()).filter(|&i| g1[i] != 0.0) {
            assert!((g2[i] - 2.0 * g1[i]).abs() <= 1e-15 * g1[i].abs().max(1.0));
            let orig = buf.values[i];
            buf.values[i] = orig + h;
            let up = weighted_objective(&buf, &batch, &w2).unwrap();
            buf.values[i] = orig - h;
            let down = weighted_objective(&buf, &batch, &w2).unwrap();
            buf.values[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(relative_error(g2[i], numeric) < 1e-6);
        }
    }
}
