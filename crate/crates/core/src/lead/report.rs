use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{audience_uncertainty, baseline_uncertainty, log_aggregate_uncertainty, rank, AudienceSpec, Method};
use crate::model::{forward, FedarParams, ModelInput};
use crate::{Error, Result};

/// Settings a report was produced with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub method: Method,
    pub split: String,
    pub seed: u64,
    pub lambda: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<AudienceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewUncertainty {
    pub id: String,
    /// 1-based position, most uncertain first.
    pub rank: usize,
    /// Lecturer's class per aspect.
    pub predicted: Vec<usize>,
    /// Nonnegative per-aspect uncertainty, one row per audience (a single
    /// row for baselines).
    pub per_aspect: Vec<Vec<f64>>,
    pub log_score: f64,
    /// `exp(log_score)`, absent when it overflows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub header: ReportHeader,
    /// In rank order.
    pub reviews: Vec<ReviewUncertainty>,
}

impl UncertaintyReport {
    /// Sorts `rows` by descending score (ties by id) and numbers them.
    pub fn ranked(header: ReportHeader, mut rows: Vec<ReviewUncertainty>) -> Self {
        let ids: Vec<String> = rows.iter().map(|r| r.id.clone()).collect();
        let scores: Vec<f64> = rows.iter().map(|r| r.log_score).collect();
        let order = rank(&ids, &scores);
        let mut slots: Vec<Option<ReviewUncertainty>> = rows.drain(..).map(Some).collect();
        let reviews = order
            .into_iter()
            .enumerate()
            .map(|(i, j)| {
                let mut r = slots[j].take().expect("rank is a permutation");
                r.rank = i + 1;
                r
            })
            .collect();
        Self { header, reviews }
    }

    pub fn ids(&self) -> Vec<String> {
        self.reviews.iter().map(|r| r.id.clone()).collect()
    }

    pub fn log_scores(&self) -> Vec<f64> {
        self.reviews.iter().map(|r| r.log_score).collect()
    }
}

fn row(id: &str, predicted: Vec<usize>, per_aspect: Vec<Vec<f64>>, zeta: f64, lambda: f64, eta: f64) -> Result<ReviewUncertainty> {
    let zetas = vec![zeta; per_aspect.len()];
    let log_score = log_aggregate_uncertainty(&per_aspect, &zetas, lambda, eta)?;
    Ok(ReviewUncertainty { id: id.to_owned(), rank: 0, predicted, per_aspect, log_score, score: Some(log_score.exp()).filter(|s| s.is_finite()) })
}

/// Scores each review by how much the audiences disagree with the lecturer.
pub fn score_reviews(
    lecturer: &FedarParams<f32>,
    audiences: &[FedarParams<f32>],
    ids: &[String],
    inputs: &[ModelInput<f32>],
    spec: &AudienceSpec,
    split: &str,
) -> Result<UncertaintyReport> {
    if ids.len() != inputs.len() {
        return Err(Error::Contract(format!("{} ids for {} inputs", ids.len(), inputs.len())));
    }
    if audiences.is_empty() {
        return Err(Error::Contract("no audiences".into()));
    }
    let rows = ids
        .par_iter()
        .zip(inputs)
        .map(|(id, input)| {
            let lecturer_labels = forward(lecturer, input)?.labels();
            let psi = audiences
                .iter()
                .map(|a| {
                    let probs: Vec<Vec<f64>> = forward(a, input)?.aspects.into_iter().map(|t| t.probs).collect();
                    audience_uncertainty(&probs, &lecturer_labels)
                })
                .collect::<Result<Vec<_>>>()?;
            row(id, lecturer_labels, psi, spec.zeta, spec.lambda, spec.eta)
        })
        .collect::<Result<Vec<_>>>()?;
    let header = ReportHeader {
        method: Method::Lead,
        split: split.to_owned(),
        seed: spec.seed,
        lambda: spec.lambda,
        eta: spec.eta,
        audience: Some(spec.clone()),
        mc_samples: None,
        mc_rate: None,
    };
    Ok(UncertaintyReport::ranked(header, rows))
}

/// A single-model baseline mapped onto the same aggregate, with one
/// pseudo-audience and unit smoothing.
pub fn score_baseline(
    method: Method,
    model: &FedarParams<f32>,
    ids: &[String],
    inputs: &[ModelInput<f32>],
    samples: usize,
    rate: f64,
    seed: u64,
    split: &str,
) -> Result<UncertaintyReport> {
    if ids.len() != inputs.len() {
        return Err(Error::Contract(format!("{} ids for {} inputs", ids.len(), inputs.len())));
    }
    let raw = baseline_uncertainty(method, model, inputs, samples, rate, seed)?;
    let predicted = inputs
        .par_iter()
        .map(|input| Ok(forward(model, input)?.labels()))
        .collect::<Result<Vec<_>>>()?;
    let rows = ids
        .iter()
        .zip(raw)
        .zip(predicted)
        .map(|((id, u), p)| {
            let mapped = u.into_iter().map(|v| method.to_nonnegative(v)).collect();
            row(id, p, vec![mapped], 1.0, 1.0, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mc = method == Method::McDropout;
    let header = ReportHeader {
        method,
        split: split.to_owned(),
        seed,
        lambda: 1.0,
        eta: 1.0,
        audience: None,
        mc_samples: mc.then_some(samples),
        mc_rate: mc.then_some(rate),
    };
    Ok(UncertaintyReport::ranked(header, rows))
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ReportHeader,
}

/// Line-delimited JSON: a `{"header": ...}` line, then one line per review
/// in rank order.
pub fn write_report<W: Write>(report: &UncertaintyReport, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &HeaderLine { header: report.header.clone() })?;
    out.write_all(b"\n")?;
    for r in &report.reviews {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_report<R: BufRead>(reader: R) -> Result<UncertaintyReport> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let bad = |i: usize, e: serde_json::Error| Error::Contract(format!("uncertainty report line {}: {e}", i + 1));
    let (i, first) = lines.next().ok_or_else(|| Error::Contract("empty uncertainty report".into()))?;
    let first = first.map_err(|e| Error::io("<report>", e))?;
    let header = serde_json::from_str::<HeaderLine>(&first).map_err(|e| bad(i, e))?.header;
    let reviews = lines
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io("<report>", e))?;
            serde_json::from_str(&l).map_err(|e| bad(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyReport { header, reviews })
}
