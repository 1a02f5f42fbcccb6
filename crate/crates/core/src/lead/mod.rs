//! Lecturer/audience uncertainty: perturbed copies of a trained model
//! ("audiences") score how strongly they disagree with its predictions.

mod audience;
mod baselines;
mod report;

pub use audience::{maskable_entries, prune, spawn_audiences};
pub use baselines::{baseline_uncertainty, entropy, population_variance, Method};
pub use report::{parse_report, score_baseline, score_reviews, write_report, ReportHeader, ReviewUncertainty, UncertaintyReport};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AudienceKind {
    /// Seeded pruning of a fixed fraction of weight entries.
    DropoutPrune,
    /// A few extra mini-batches at a very small learning rate.
    ContinuedTraining,
}

impl std::str::FromStr for AudienceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dropout-prune" => Ok(AudienceKind::DropoutPrune),
            "continued-training" => Ok(AudienceKind::ContinuedTraining),
            other => Err(format!("unknown audience kind {other:?} (expected dropout-prune or continued-training)")),
        }
    }
}

pub const MAX_ELIGIBLE_RATE: f64 = 0.3;
pub const MAX_ELIGIBLE_LR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudienceSpec {
    pub kind: AudienceKind,
    pub count: usize,
    /// Fraction of maskable entries pruned per audience.
    pub rate: f64,
    /// Learning rate of continued training.
    pub lr: f64,
    /// Mini-batches of continued training.
    pub batches: usize,
    pub seed: u64,
    /// Exponent of each audience's factor.
    pub zeta: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl Default for AudienceSpec {
    fn default() -> Self {
        Self {
            kind: AudienceKind::DropoutPrune,
            count: 20,
            rate: 0.1,
            lr: 1e-5,
            batches: 50,
            seed: 42,
            zeta: 1.0,
            lambda: 1.0,
            eta: 1.0,
        }
    }
}

impl AudienceSpec {
    /// Rejects audiences that would know too little of the lecturer.
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Ineligible("at least one audience is required".into()));
        }
        match self.kind {
            AudienceKind::DropoutPrune if !(0.0..=MAX_ELIGIBLE_RATE).contains(&self.rate) => {
                return Err(Error::Ineligible(format!(
                    "pruning rate {} exceeds the small-rate bound {MAX_ELIGIBLE_RATE}",
                    self.rate
                )))
            }
            AudienceKind::ContinuedTraining if !(0.0..=MAX_ELIGIBLE_LR).contains(&self.lr) => {
                return Err(Error::Ineligible(format!(
                    "continued-training learning rate {} exceeds the small-rate bound {MAX_ELIGIBLE_LR}",
                    self.lr
                )))
            }
            _ => {}
        }
        check_smoothing(self.lambda, self.eta)?;
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config(format!("zeta {} must be nonnegative", self.zeta)));
        }
        Ok(())
    }
}

fn check_smoothing(lambda: f64, eta: f64) -> Result<()> {
    if !(lambda >= 0.0) || !(eta >= 1.0) || !lambda.is_finite() || !eta.is_finite() {
        return Err(Error::Contract(format!("smoothing needs lambda >= 0 and eta >= 1, got {lambda} and {eta}")));
    }
    Ok(())
}

/// Cross-entropy of an audience's distributions against the lecturer's
/// one-hot predictions, per aspect: `-ln p[lecturer class]`.
pub fn audience_uncertainty(probs: &[Vec<f64>], lecturer: &[usize]) -> Result<Vec<f64>> {
    if probs.len() != lecturer.len() {
        return Err(Error::Contract(format!("{} distributions for {} lecturer labels", probs.len(), lecturer.len())));
    }
    probs
        .iter()
        .zip(lecturer)
        .map(|(p, &c)| {
            let q = *p.get(c).ok_or_else(|| Error::Contract(format!("class {c} outside {} classes", p.len())))?;
            Ok(-q.max(PROB_FLOOR).ln())
        })
        .collect()
}

/// `ln(exp(a) + eta)` without overflow for large `a`.
fn ln_exp_plus(a: f64, eta: f64) -> f64 {
    if a > 0.0 {
        a + (eta * (-a).exp()).ln_1p()
    } else {
        (a.exp() + eta).ln()
    }
}

/// Logarithm of `prod over audiences (prod over aspects (psi + lambda) +
/// eta)^zeta`, accumulated in log space. `psi[mu][k]`, `zeta[mu]`.
pub fn log_aggregate_uncertainty(psi: &[Vec<f64>], zeta: &[f64], lambda: f64, eta: f64) -> Result<f64> {
    check_smoothing(lambda, eta)?;
    if psi.is_empty() || psi.len() != zeta.len() {
        return Err(Error::Contract(format!("{} audiences with {} zeta values", psi.len(), zeta.len())));
    }
    let mut total = 0.0;
    for (row, &z) in psi.iter().zip(zeta) {
        if let Some(bad) = row.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Contract(format!("audience uncertainty {bad} is negative")));
        }
        let inner: f64 = row.iter().map(|v| (v + lambda).ln()).sum();
        total += z * ln_exp_plus(inner, eta);
    }
    Ok(total)
}

/// `exp` of [`log_aggregate_uncertainty`]; may overflow to infinity for
/// many confident disagreements, in which case rank by the log.
pub fn aggregate_uncertainty(psi: &[Vec<f64>], zeta: &[f64], lambda: f64, eta: f64) -> Result<f64> {
    Ok(log_aggregate_uncertainty(psi, zeta, lambda, eta)?.exp())
}

/// Review selection rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// The top `ceil(fraction * n)` reviews.
    Fraction(f64),
    /// Reviews whose aggregated score exceeds this value.
    Threshold(f64),
}

/// Indices of `scores` from most to least uncertain; ties go to the
/// smaller id.
pub fn rank(ids: &[String], log_scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| log_scores[b].total_cmp(&log_scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}

/// Ids chosen by `selection`, in rank order. Scores are logarithms of the
/// aggregated uncertainty.
pub fn rank_and_select(ids: &[String], log_scores: &[f64], selection: Selection) -> Result<Vec<String>> {
    if ids.len() != log_scores.len() {
        return Err(Error::Contract(format!("{} ids for {} scores", ids.len(), log_scores.len())));
    }
    let order = rank(ids, log_scores);
    let take = match selection {
        Selection::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Contract(format!("fraction {f} outside (0, 1]")));
            }
            ((f * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize
        }
        Selection::Threshold(t) => order.iter().take_while(|&&i| log_scores[i] > t.ln()).count(),
    };
    Ok(order.into_iter().take(take).map(|i| ids[i].clone()).collect())
}

/// Fraction of `(review, aspect)` pairs among `selected` whose prediction
/// differs from the gold label.
pub fn triage_error_rate(
    selected: &[String],
    predictions: &HashMap<String, Vec<usize>>,
    gold: &HashMap<String, Vec<usize>>,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Contract("no reviews selected".into()));
    }
    let (mut wrong, mut total) = (0usize, 0usize);
    for id in selected {
        let (p, g) = match (predictions.get(id), gold.get(id)) {
            (Some(p), Some(g)) if p.len() == g.len() => (p, g),
            _ => return Err(Error::Contract(format!("review {id} lacks a prediction or gold labels"))),
        };
        wrong += p.iter().zip(g).filter(|(a, b)| a != b).count();
        total += p.len();
    }
    Ok(wrong as f64 / total as f64)
}

#[cfg(test)]
mod tests;
