use serde::{Deserialize, Serialize};

use crate::autograd::Real;
use crate::corpus::{RatingScale, Review};
use crate::model::{forward_many, FedarParams, Lexicon};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectMetrics {
    pub aspect: String,
    pub accuracy: f64,
    /// Mean squared rating difference on the original scale.
    pub mse: f64,
}

/// Accuracy and MSE per aspect and averaged over aspects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_aspect: Vec<AspectMetrics>,
    pub accuracy: f64,
    pub mse: f64,
    pub count: usize,
}

/// Scores predicted class indices against gold ones. MSE maps both back to
/// ratings on `scale`.
pub fn score_predictions(
    predictions: &[Vec<usize>],
    gold: &[Vec<usize>],
    scale: &RatingScale,
    aspect_names: &[String],
) -> Result<MetricsReport> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold rows",
            predictions.len(),
            gold.len()
        )));
    }
    let k = aspect_names.len();
    if let Some(bad) = predictions.iter().chain(gold).find(|row| row.len() != k) {
        return Err(Error::Contract(format!("row of {} labels for {k} aspects", bad.len())));
    }
    let n = predictions.len() as f64;
    let per_aspect: Vec<AspectMetrics> = (0..k)
        .map(|a| {
            let (mut hits, mut sq) = (0usize, 0.0);
            for (p, g) in predictions.iter().zip(gold) {
                hits += usize::from(p[a] == g[a]);
                let d = (scale.rating(p[a]) - scale.rating(g[a])) as f64;
                sq += d * d;
            }
            AspectMetrics { aspect: aspect_names[a].clone(), accuracy: hits as f64 / n, mse: sq / n }
        })
        .collect();
    let accuracy = per_aspect.iter().map(|m| m.accuracy).sum::<f64>() / k as f64;
    let mse = per_aspect.iter().map(|m| m.mse).sum::<f64>() / k as f64;
    Ok(MetricsReport { per_aspect, accuracy, mse, count: predictions.len() })
}

/// Eval-mode predictions for `reviews`, scored against their gold labels.
pub fn evaluate<T: Real>(
    params: &FedarParams<T>,
    lexicon: &Lexicon<T>,
    reviews: &[&Review],
    scale: &RatingScale,
    aspect_names: &[String],
) -> Result<MetricsReport> {
    if reviews.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let predictions: Vec<Vec<usize>> = forward_many(params, lexicon, reviews)?.iter().map(|t| t.labels()).collect();
    let gold: Vec<Vec<usize>> = reviews.iter().map(|r| r.aspect_labels.clone()).collect();
    score_predictions(&predictions, &gold, scale, aspect_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let rows = vec![vec![0, 4], vec![2, 1]];
        let r = score_predictions(&rows, &rows, &RatingScale::new(1, 5), &names(2)).unwrap();
        assert_eq!((r.accuracy, r.mse, r.count), (1.0, 0.0, 2));
    }

    #[test]
    fn squared_error_on_rating_scale() {
        let r = score_predictions(&[vec![2]], &[vec![4]], &RatingScale::new(1, 5), &names(1)).unwrap();
        assert_eq!(r.mse, 4.0);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn averages_over_aspects() {
        let gold: Vec<Vec<usize>> = (0..5).map(|_| vec![0, 0]).collect();
        let pred = vec![vec![0, 0], vec![0, 0], vec![1, 0], vec![1, 1], vec![1, 0]];
        let r = score_predictions(&pred, &gold, &RatingScale::new(1, 2), &names(2)).unwrap();
        assert!((r.per_aspect[0].accuracy - 0.4).abs() < 1e-12);
        assert!((r.per_aspect[1].accuracy - 0.8).abs() < 1e-12);
        assert!((r.accuracy - 0.6).abs() < 1e-12);
    }
}
