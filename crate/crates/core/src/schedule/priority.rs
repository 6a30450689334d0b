use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::ScheduleError;

/// How a pull result feeds back into a coordinate's sampling weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorityForm {
    /// `(beta_new - beta_old)^2 + eta`
    #[default]
    Change,
    /// `beta_new^2 + eta`
    Magnitude,
}

/// Per-coordinate sampling weights, each `>= eta > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityState {
    weights: Vec<f64>,
    eta: f64,
}

impl PriorityState {
    /// Never-updated coordinates start at `1 + eta`.
    pub fn new(d: usize, eta: f64) -> Result<Self, ScheduleError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ScheduleError::InvalidEta(eta));
        }
        Ok(Self {
            weights: vec![1.0 + eta; d],
            eta,
        })
    }

    pub fn from_weights(weights: Vec<f64>, eta: f64) -> Result<Self, ScheduleError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ScheduleError::InvalidEta(eta));
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w > 0.0 && w.is_finite()))
        {
            return Err(ScheduleError::InvalidWeight { index, value });
        }
        Ok(Self { weights, eta })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn record(&mut self, form: PriorityForm, j: usize, old: f64, new: f64) {
        let v = match form {
            PriorityForm::Change => new - old,
            PriorityForm::Magnitude => new,
        };
        self.weights[j] = v * v + self.eta;
    }
}

/// `q` distinct indices drawn without replacement, each step choosing among
/// the remaining indices with probability proportional to weight.
///
/// One `f64` is drawn per pick: the pick is the first remaining index (in
/// ascending order) whose running weight sum exceeds `u * remaining_total`.
pub fn schedule_priority_draw<R: Rng + ?Sized>(
    prio: &PriorityState,
    q: usize,
    rng: &mut R,
) -> Vec<usize> {
    let weights = prio.weights();
    let q = q.min(weights.len());
    let mut taken = vec![false; weights.len()];
    let mut picks = Vec::with_capacity(q);
    for _ in 0..q {
        let total: f64 = weights
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(w, _)| *w)
            .sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (j, w) in weights.iter().enumerate() {
            if taken[j] {
                continue;
            }
            acc += w;
            pick = Some(j);
            if target < acc {
                break;
            }
        }
        // rounding can leave target == acc at the end; the last remaining
        // index absorbs it
        let j = pick.expect("q <= d leaves a remaining index");
        taken[j] = true;
        picks.push(j);
    }
    picks
}

/// Uniform draw of `q` distinct indices from `0..d`; the same rule as
/// [`schedule_priority_draw`] with unit weights.
pub fn draw_uniform<R: Rng + ?Sized>(d: usize, q: usize, rng: &mut R) -> Vec<usize> {
    let q = q.min(d);
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut picks = Vec::with_capacity(q);
    for _ in 0..q {
        let target = rng.gen::<f64>() * remaining.len() as f64;
        let k = (target as usize).min(remaining.len() - 1);
        picks.push(remaining.remove(k));
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn initial_weights_bootstrap_everything() {
        let p = PriorityState::new(3, 0.1).unwrap();
        assert_eq!(p.weights(), &[1.1, 1.1, 1.1]);
        assert!(PriorityState::new(3, 0.0).is_err());
        assert!(PriorityState::from_weights(vec![1.0, -1.0], 0.1).is_err());
    }

    #[test]
    fn record_forms() {
        let mut p = PriorityState::new(2, 0.5).unwrap();
        p.record(PriorityForm::Change, 0, 1.0, 3.0);
        assert_eq!(p.weights()[0], 4.5);
        p.record(PriorityForm::Magnitude, 1, 1.0, 3.0);
        assert_eq!(p.weights()[1], 9.5);
        p.record(PriorityForm::Change, 1, 2.0, 2.0);
        assert_eq!(p.weights()[1], 0.5);
    }

    #[test]
    fn draws_are_distinct() {
        let p = PriorityState::from_weights(vec![5.0, 1.0, 0.01, 2.0, 3.0], 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut picks = schedule_priority_draw(&p, 5, &mut rng);
            picks.sort_unstable();
            assert_eq!(picks, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn equal_weights_are_uniform() {
        let d = 10;
        let p = PriorityState::from_weights(vec![2.0; d], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut counts = vec![0u64; d];
        for _ in 0..draws {
            counts[schedule_priority_draw(&p, 1, &mut rng)[0]] += 1;
        }
        let expected = draws as f64 / d as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p_value = 1.0 - ChiSquared::new((d - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi2 {stat}, p {p_value}");
    }

    #[test]
    fn skewed_weights_match_hand_normalization() {
        let p = PriorityState::from_weights(vec![4.01, 0.01, 0.01], 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            counts[schedule_priority_draw(&p, 1, &mut rng)[0]] += 1;
        }
        let freq0 = counts[0] as f64 / draws as f64;
        assert!((freq0 - 4.01 / 4.03).abs() <= 0.01, "{freq0}");
        // eta-floor coordinates are still drawn
        assert!(counts[1] > 0 && counts[2] > 0);
    }

    #[test]
    fn uniform_matches_unit_weight_rule() {
        let p = PriorityState::from_weights(vec![1.0; 9], 0.1).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            assert_eq!(
                draw_uniform(9, 4, &mut a),
                schedule_priority_draw(&p, 4, &mut b)
            );
        }
    }
}
