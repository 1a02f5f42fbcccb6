use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{argmax, Tensor};
use crate::model::{forward, FedarParams, ModelConfig, ModelInput};
use crate::training::TrainConfig;

fn toy() -> ModelConfig {
    ModelConfig {
        d_emb: 6,
        d_hidden: 6,
        encoder_layers: 1,
        fm_factors: 2,
        num_aspects: 2,
        num_classes: 3,
        d_or: 3,
        ..Default::default()
    }
}

fn inputs(n: usize, seed: u64) -> Vec<ModelInput<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(1..6);
            let data = (0..t * 6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            ModelInput { embedded: Tensor::new(t, 6, data), overall: Some(rng.gen_range(0..3)) }
        })
        .collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i:03}")).collect()
}

#[test]
fn cross_entropy_point_values() {
    let psi = audience_uncertainty(&[vec![0.1, 0.9], vec![0.2, 0.8], vec![0.5, 0.5]], &[0, 1, 1]).unwrap();
    for (got, want) in psi.iter().zip([2.30, 0.22, 0.69]) {
        assert!((got - want).abs() < 0.005, "{got} vs {want}");
    }
    assert_eq!(audience_uncertainty(&[vec![0.0, 1.0]], &[1]).unwrap(), vec![0.0]);
    assert!((audience_uncertainty(&[vec![0.0, 1.0]], &[0]).unwrap()[0] - 1e12f64.ln()).abs() < 1e-9);
    assert!(audience_uncertainty(&[vec![0.5, 0.5]], &[2]).is_err());
}

#[test]
fn aggregate_hand_cases() {
    assert!((aggregate_uncertainty(&[vec![0.0]], &[1.0], 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
    assert!((aggregate_uncertainty(&[vec![1.0, 2.0]], &[1.0], 1.0, 1.0).unwrap() - 7.0).abs() < 1e-9);
    let two = vec![vec![1.0, 2.0]; 2];
    assert!((aggregate_uncertainty(&two, &[1.0, 1.0], 1.0, 1.0).unwrap() - 49.0).abs() < 1e-9);
    assert!(matches!(aggregate_uncertainty(&[vec![-0.1]], &[1.0], 1.0, 1.0), Err(crate::Error::Contract(_))));
    assert!(aggregate_uncertainty(&[vec![0.0]], &[1.0], 1.0, 0.5).is_err());
    // lambda = 0 with a zero entry collapses the inner product to zero
    assert!((aggregate_uncertainty(&[vec![0.0, 3.0]], &[1.0], 0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn aggregate_survives_huge_products() {
    let psi = vec![vec![27.6; 8]; 20];
    let log = log_aggregate_uncertainty(&psi, &vec![1.0; 20], 1.0, 1.0).unwrap();
    assert!(log.is_finite());
    assert!((log - 20.0 * 8.0 * 28.6f64.ln()).abs() < 1e-6);
}

fn direct(psi: &[Vec<f64>], zeta: &[f64], lambda: f64, eta: f64) -> f64 {
    psi.iter().zip(zeta).map(|(row, z)| (row.iter().map(|v| v + lambda).product::<f64>() + eta).powf(*z)).product()
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4, 1usize..4).prop_flat_map(|(a, k)| prop::collection::vec(prop::collection::vec(0.0f64..20.0, k), a))
}

proptest! {
    #[test]
    fn log_space_matches_direct_product(psi in matrix(), lambda in 0.0f64..2.0, eta in 1.0f64..3.0, zeta in 0.1f64..2.0) {
        let z = vec![zeta; psi.len()];
        let log = log_aggregate_uncertainty(&psi, &z, lambda, eta).unwrap();
        let d = direct(&psi, &z, lambda, eta);
        prop_assert!((log - d.ln()).abs() < 1e-9, "{} vs {}", log, d.ln());
        prop_assert!(log.exp() > 0.0);
    }

    #[test]
    fn aggregate_strictly_increases(psi in matrix(), pick in any::<prop::sample::Index>(), bump in 1e-3f64..5.0,
                                     lambda in 0.0f64..2.0, eta in 1.0f64..3.0) {
        let z = vec![1.0; psi.len()];
        let cells: Vec<(usize, usize)> = psi.iter().enumerate().flat_map(|(a, r)| (0..r.len()).map(move |k| (a, k))).collect();
        let (a, k) = cells[pick.index(cells.len())];
        let mut up = psi.clone();
        up[a][k] += bump;
        // lambda = 0 with another zero in the row makes the row constant
        prop_assume!(lambda > 0.0 || psi[a].iter().enumerate().all(|(j, v)| j == k || *v > 0.0));
        prop_assert!(log_aggregate_uncertainty(&up, &z, lambda, eta).unwrap() > log_aggregate_uncertainty(&psi, &z, lambda, eta).unwrap());
    }

    #[test]
    fn aggregate_ignores_audience_order(psi in matrix(), seed in 0u64..1000) {
        let z = vec![1.0; psi.len()];
        let mut shuffled = psi.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let a = log_aggregate_uncertainty(&psi, &z, 1.0, 1.0).unwrap();
        let b = log_aggregate_uncertainty(&shuffled, &z, 1.0, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn selection_is_the_top_of_a_total_order(scores in prop::collection::vec(0i32..5, 1..60), f in 0.01f64..1.0) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let ids = ids(scores.len());
        let picked = rank_and_select(&ids, &scores, Selection::Fraction(f)).unwrap();
        prop_assert_eq!(picked.len(), (f * scores.len() as f64 - 1e-9).ceil() as usize);
        let mut reversed_ids = ids.clone();
        reversed_ids.reverse();
        let mut reversed_scores = scores.clone();
        reversed_scores.reverse();
        prop_assert_eq!(&picked, &rank_and_select(&reversed_ids, &reversed_scores, Selection::Fraction(f)).unwrap());
        let key = |id: &String| scores[ids.iter().position(|x| x == id).unwrap()];
        for w in picked.windows(2) {
            prop_assert!(key(&w[0]) > key(&w[1]) || (key(&w[0]) == key(&w[1]) && w[0] < w[1]));
        }
        let cut = key(picked.last().unwrap());
        for id in ids.iter().filter(|i| !picked.contains(i)) {
            prop_assert!(key(id) < cut || (key(id) == cut && id > picked.last().unwrap()));
        }
    }
}

#[test]
fn selection_examples() {
    let ids = ids(100);
    let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
    let top = rank_and_select(&ids, &scores, Selection::Fraction(0.05)).unwrap();
    assert_eq!(top.len(), 5);
    let mut want: Vec<usize> = (0..100).collect();
    want.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    assert_eq!(top, want[..5].iter().map(|&i| ids[i].clone()).collect::<Vec<_>>());
    assert_eq!(rank_and_select(&ids, &scores, Selection::Fraction(1.0)).unwrap().len(), 100);
    let flat = vec![0.3; 100];
    assert_eq!(rank_and_select(&ids, &flat, Selection::Fraction(0.05)).unwrap(), ids[..5].to_vec());
    let above = rank_and_select(&ids, &scores, Selection::Threshold(94f64.exp())).unwrap();
    assert_eq!(above.len(), 5);
    assert!(rank_and_select(&ids, &scores, Selection::Fraction(0.0)).is_err());
}

#[test]
fn triage_rates() {
    let ids = ids(3);
    let pred: HashMap<String, Vec<usize>> = ids.iter().map(|i| (i.clone(), vec![0, 1])).collect();
    let wrong: HashMap<String, Vec<usize>> = ids.iter().map(|i| (i.clone(), vec![1, 0])).collect();
    assert_eq!(triage_error_rate(&ids, &pred, &wrong).unwrap(), 1.0);
    let mut gold = pred.clone();
    gold.insert(ids[0].clone(), vec![0, 2]);
    assert_eq!(triage_error_rate(&ids, &pred, &gold).unwrap(), 1.0 / 6.0);
    assert_eq!(triage_error_rate(&ids[1..], &pred, &gold).unwrap(), 0.0);
    assert!(triage_error_rate(&["zzz".to_string()], &pred, &gold).is_err());
}

#[test]
fn eligibility_bounds() {
    let ok = AudienceSpec::default();
    assert!(ok.validate().is_ok());
    let bad_rate = AudienceSpec { rate: 0.5, ..ok.clone() };
    assert!(matches!(bad_rate.validate(), Err(crate::Error::Ineligible(m)) if m.contains("pruning rate")));
    let bad_lr = AudienceSpec { kind: AudienceKind::ContinuedTraining, lr: 1e-3, ..ok.clone() };
    assert!(matches!(bad_lr.validate(), Err(crate::Error::Ineligible(m)) if m.contains("learning rate")));
    assert!(AudienceSpec { count: 0, ..ok }.validate().is_err());
}

#[test]
fn pruning_masks_count_and_differ() {
    let lecturer = FedarParams::<f32>::init(&toy(), 7).unwrap();
    let n = maskable_entries(&lecturer).len();
    let spec = AudienceSpec { count: 20, rate: 0.1, seed: 5, ..Default::default() };
    let auds = spawn_audiences(&lecturer, &spec, None, &TrainConfig::default()).unwrap();
    let mut masks = Vec::new();
    for a in &auds {
        let mut mask = Vec::new();
        for (i, (t, l)) in a.tensors().iter().zip(lecturer.tensors()).enumerate() {
            for (j, (x, y)) in t.data().iter().zip(l.data()).enumerate() {
                if x != y {
                    assert_eq!(*x, 0.0, "survivors are not rescaled");
                    assert!(lecturer.specs()[i].maskable());
                    mask.push((i, j));
                }
            }
        }
        let frac = mask.len() as f64 / n as f64;
        assert!((frac - 0.1).abs() <= 0.01, "{frac}");
        masks.push(mask);
    }
    masks.sort();
    masks.dedup();
    assert_eq!(masks.len(), 20);
    let again = spawn_audiences(&lecturer, &spec, None, &TrainConfig::default()).unwrap();
    assert!(auds.iter().zip(&again).all(|(a, b)| a.tensors() == b.tensors()));
}

#[test]
fn degenerate_audiences_equal_the_lecturer() {
    let lecturer = FedarParams::<f32>::init(&toy(), 8).unwrap();
    let zero = AudienceSpec { count: 3, rate: 0.0, ..Default::default() };
    for a in spawn_audiences(&lecturer, &zero, None, &TrainConfig::default()).unwrap() {
        assert_eq!(a.tensors(), lecturer.tensors());
    }
    let ct = AudienceSpec { kind: AudienceKind::ContinuedTraining, count: 2, batches: 0, ..Default::default() };
    let examples: Vec<_> = inputs(4, 1).into_iter().map(|x| (x, vec![0, 1])).collect();
    for a in spawn_audiences(&lecturer, &ct, Some(&examples), &TrainConfig::default()).unwrap() {
        assert_eq!(a.tensors(), lecturer.tensors());
    }
    assert!(spawn_audiences(&lecturer, &AudienceSpec { batches: 1, ..ct }, None, &TrainConfig::default()).is_err());
}

#[test]
fn continued_training_moves_each_audience_differently() {
    let lecturer = FedarParams::<f32>::init(&toy(), 9).unwrap();
    let examples: Vec<_> = inputs(12, 2).into_iter().map(|x| (x, vec![1, 2])).collect();
    let spec = AudienceSpec { kind: AudienceKind::ContinuedTraining, count: 2, batches: 2, lr: 1e-4, ..Default::default() };
    let cfg = TrainConfig { batch_size: 4, ..Default::default() };
    let auds = spawn_audiences(&lecturer, &spec, Some(&examples), &cfg).unwrap();
    assert_ne!(auds[0].tensors(), lecturer.tensors());
    assert_ne!(auds[0].tensors(), auds[1].tensors());
}

#[test]
fn identical_audiences_rank_by_lecturer_confidence() {
    let lecturer = FedarParams::<f32>::init(&toy(), 10).unwrap();
    let xs = inputs(15, 3);
    let ids = ids(15);
    let spec = AudienceSpec { count: 3, rate: 0.0, ..Default::default() };
    let auds = spawn_audiences(&lecturer, &spec, None, &TrainConfig::default()).unwrap();
    let report = score_reviews(&lecturer, &auds, &ids, &xs, &spec, "test").unwrap();
    let mut own = Vec::new();
    for r in &report.reviews {
        let i = ids.iter().position(|x| *x == r.id).unwrap();
        let trace = forward(&lecturer, &xs[i]).unwrap();
        let conf: Vec<f64> = trace.aspects.iter().map(|a| -a.probs[argmax(&a.probs)].ln()).collect();
        for row in &r.per_aspect {
            for (p, c) in row.iter().zip(&conf) {
                assert!((p - c).abs() < 1e-12);
            }
        }
        own.push(direct(&[conf.clone()], &[1.0], 1.0, 1.0).ln() * 3.0);
    }
    assert!(own.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    assert_eq!(report.reviews.iter().map(|r| r.rank).collect::<Vec<_>>(), (1..=15).collect::<Vec<_>>());
}

#[test]
fn baselines_on_degenerate_inputs() {
    assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
    assert!((entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    assert_eq!(population_variance(&[1.0, 1.0, 1.0]), 0.0);
    assert!((population_variance(&[1.0, 2.0, 3.0]) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(Method::MaxMargin.to_nonnegative(-1.0), 0.0);
    assert_eq!(Method::PlVariance.to_nonnegative(0.0), 1.0);
    assert!("bogus".parse::<Method>().is_err());

    let model = FedarParams::<f32>::init(&toy(), 11).unwrap();
    let xs = inputs(4, 4);
    let mm = baseline_uncertainty(Method::MaxMargin, &model, &xs, 0, 0.0, 1).unwrap();
    let pv = baseline_uncertainty(Method::PlVariance, &model, &xs, 0, 0.0, 1).unwrap();
    let mc0 = baseline_uncertainty(Method::McDropout, &model, &xs, 7, 0.0, 1).unwrap();
    let mc = baseline_uncertainty(Method::McDropout, &model, &xs, 50, 0.5, 1).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let t = forward(&model, x).unwrap();
        for (k, a) in t.aspects.iter().enumerate() {
            assert!((mm[i][k] + a.probs.iter().cloned().fold(0.0, f64::max)).abs() < 1e-12);
            assert!((pv[i][k] + population_variance(&a.logits)).abs() < 1e-12);
            assert!((mc0[i][k] - entropy(&a.probs)).abs() < 1e-9);
            assert!(mc[i][k] >= 0.0 && mc[i][k] <= 3f64.ln() + 1e-9);
        }
    }
    assert_eq!(mc, baseline_uncertainty(Method::McDropout, &model, &xs, 50, 0.5, 1).unwrap());
    assert!(baseline_uncertainty(Method::Lead, &model, &xs, 1, 0.0, 1).is_err());
}

#[test]
fn report_round_trip() {
    let model = FedarParams::<f32>::init(&toy(), 12).unwrap();
    let xs = inputs(6, 5);
    let ids = ids(6);
    let spec = AudienceSpec { count: 2, ..Default::default() };
    let auds = spawn_audiences(&model, &spec, None, &TrainConfig::default()).unwrap();
    let report = score_reviews(&model, &auds, &ids, &xs, &spec, "dev").unwrap();
    let mut buf = Vec::new();
    write_report(&report, &mut buf).unwrap();
    assert_eq!(parse_report(&buf[..]).unwrap(), report);
    assert!(report.reviews.iter().all(|r| r.score.unwrap() > 0.0 && r.per_aspect.len() == 2));

    let base = score_baseline(Method::McDropout, &model, &ids, &xs, 5, 0.5, 3, "dev").unwrap();
    let mut buf = Vec::new();
    write_report(&base, &mut buf).unwrap();
    let back = parse_report(&buf[..]).unwrap();
    assert_eq!(back.header.mc_samples, Some(5));
    assert_eq!(back, base);
}
