use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::model::{build_review, layers, Dropout, FedarParams, ModelInput};
use crate::seeds::rng_for;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lead,
    MaxMargin,
    PlVariance,
    McDropout,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lead => "lead",
            Method::MaxMargin => "max-margin",
            Method::PlVariance => "pl-variance",
            Method::McDropout => "mc-dropout",
        }
    }

    /// Maps a per-aspect uncertainty monotonically onto `[0, inf)` so it can
    /// stand in for an audience score in the aggregate.
    pub fn to_nonnegative(self, u: f64) -> f64 {
        match self {
            Method::MaxMargin => 1.0 + u,
            Method::PlVariance => u.exp(),
            Method::Lead | Method::McDropout => u,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lead" => Ok(Method::Lead),
            "max-margin" => Ok(Method::MaxMargin),
            "pl-variance" => Ok(Method::PlVariance),
            "mc-dropout" => Ok(Method::McDropout),
            other => Err(format!(
                "unknown uncertainty method {other:?} (expected lead, max-margin, pl-variance or mc-dropout)"
            )),
        }
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Per-review, per-aspect uncertainty of a single-model baseline:
/// `-max p` (max-margin), `-variance(logits)` (pl-variance), or the mean
/// predictive entropy over `samples` passes with classifier dropout at
/// `rate` (mc-dropout).
pub fn baseline_uncertainty(
    method: Method,
    params: &FedarParams<f32>,
    inputs: &[ModelInput<f32>],
    samples: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if method == Method::Lead {
        return Err(Error::Contract("lead is not a single-model baseline".into()));
    }
    if method == Method::McDropout && samples == 0 {
        return Err(Error::Contract("mc-dropout needs at least one sample".into()));
    }
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false)?;
            let graph = build_review(&mut tape, params.layout(), &bound, input, None)?;
            let mut rng = rng_for(seed, &[i as u64]);
            let layout = params.layout();
            graph
                .aspects
                .iter()
                .zip(&layout.aspects)
                .map(|(a, ids)| {
                    let probs = tape.value(a.classified.probs).to_f64_vec();
                    let logits = tape.value(a.classified.logits).to_f64_vec();
                    Ok(match method {
                        Method::MaxMargin => -probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        Method::PlVariance => -population_variance(&logits),
                        Method::McDropout => {
                            let mut total = 0.0;
                            for _ in 0..samples {
                                let mut drop = Dropout { rate, rng: &mut rng };
                                let drop = (rate > 0.0).then_some(&mut drop);
                                let c = layers::classify(&mut tape, &bound, ids, a.features, drop)?;
                                total += entropy(&tape.value(c.probs).to_f64_vec());
                            }
                            total / samples as f64
                        }
                        Method::Lead => unreachable!(),
                    })
                })
                .collect()
        })
        .collect()
}
