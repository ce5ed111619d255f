//! Grid search for the scoring constants against manually labeled responses.

use serde::{Deserialize, Serialize};

use super::s_sim;

/// One manually labeled response with precomputed similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub cs: f64,
    pub cs_a: f64,
    pub cs_o: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub p_pen: f64,
    pub b_bon: f64,
    pub theta: f64,
    /// Fraction of samples whose automatic label matches the manual one.
    pub agreement: f64,
}

/// Inclusive grid `start, start + step, ..., <= stop`.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

/// Exhaustive search; ties keep the first point in `(p, b, theta)` grid order.
pub fn grid_search(
    samples: &[LabeledSample],
    ps: &[f64],
    bs: &[f64],
    thetas: &[f64],
) -> Option<Calibration> {
    if samples.is_empty() {
        return None;
    }
    let mut best: Option<Calibration> = None;
    for &p in ps {
        for &b in bs {
            let scores: Vec<f64> = samples
                .iter()
                .map(|s| s_sim(s.cs, s.cs_a, s.cs_o, p, b))
                .collect();
            for &t in thetas {
                let hits = scores
                    .iter()
                    .zip(samples)
                    .filter(|(sc, s)| (**sc > t) == s.correct)
                    .count();
                let agreement = hits as f64 / samples.len() as f64;
                if best.is_none_or(|c| agreement > c.agreement) {
                    best = Some(Calibration {
                        p_pen: p,
                        b_bon: b,
                        theta: t,
                        agreement,
                    });
                }
            }
        }
    }
    best
}
