//! Acceptance suite. Each test is one criterion and prints a single
//! PASS/FAIL line (visible with `--nocapture`); the test fails with it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedar_core::akr::{
    aspect_keyword_scores, build_attention_index, keyword_table, opinion_keyword_scores, AttentionIndex,
    IndexedReview, KeywordMode,
};
use fedar_core::autograd::{finite_difference_check, Tensor};
use fedar_core::corpus::{build_vocabulary, generate_synthetic_corpus, random_embeddings, Corpus, Review, Split, SyntheticSpec};
use fedar_core::lead::{
    aggregate_uncertainty, audience_uncertainty, rank_and_select, score_baseline, score_reviews, spawn_audiences,
    triage_error_rate, AudienceSpec, Method, Selection,
};
use fedar_core::model::layers::factorize;
use fedar_core::model::{batch_loss, forward, Bound, FedarParams, Lexicon, ModelConfig, ModelInput};
use fedar_core::training::{clip_gradients, global_norm, schedule_lr, train, TrainConfig, TrainOutcome};

fn verdict(n: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn toy(overall: bool, deliberation: bool, enrichment: bool) -> ModelConfig {
    ModelConfig {
        d_emb: 8,
        d_hidden: 8,
        encoder_layers: 1,
        fm_factors: 2,
        num_aspects: 2,
        num_classes: 3,
        d_or: 4,
        use_overall_rating: overall,
        use_deliberation: deliberation,
        use_feature_enrichment: enrichment,
        ..Default::default()
    }
}

fn random_input(rng: &mut ChaCha8Rng, t: usize, d: usize, overall: Option<usize>) -> ModelInput<f64> {
    ModelInput { embedded: Tensor::new(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()), overall }
}

fn perturbed(config: &ModelConfig, seed: u64) -> FedarParams<f64> {
    let mut p = FedarParams::<f64>::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

#[test]
fn criterion_01_gradient_check() {
    let start = Instant::now();
    let p = perturbed(&toy(true, true, true), 101);
    let layout = p.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let batch = vec![(random_input(&mut rng, 12, 8, Some(2)), vec![0, 2]), (random_input(&mut rng, 7, 8, None), vec![1, 1])];
    let mut tensors = p.into_tensors();
    let check = finite_difference_check(&mut tensors, 1e-5, 1e-6, |tape, vars| {
        batch_loss(tape, &layout, &Bound::from_vars(vars.to_vec()), &batch)
    })
    .unwrap();
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient check",
        check.max_rel_err < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel err {:.2e} over {} entries in {:.1?}", check.max_rel_err, check.entries, elapsed),
    );
}

#[test]
fn criterion_02_uncertainty_point_values() {
    let psi = audience_uncertainty(&[vec![0.1, 0.6, 0.3], vec![0.8, 0.1, 0.1], vec![0.25, 0.25, 0.5]], &[0, 0, 2]).unwrap();
    let psi_ok = psi.iter().zip([2.30, 0.22, 0.69]).all(|(a, b)| (a - b).abs() <= 0.005);
    let agg = aggregate_uncertainty(&[vec![1.0, 2.0]], &[1.0], 1.0, 1.0).unwrap();
    verdict(
        2,
        "uncertainty point values",
        psi_ok && (agg - 7.0).abs() < 1e-9,
        format!("psi {:.4} {:.4} {:.4}, aggregate {agg}", psi[0], psi[1], psi[2]),
    );
}

#[test]
fn criterion_03_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    let mut negative = 0usize;
    for draw in 0..1000u64 {
        let cfg = toy(rng.gen_bool(0.5), true, rng.gen_bool(0.5));
        let p = perturbed(&cfg, 1000 + draw);
        let t = rng.gen_range(1..=12);
        let overall = rng.gen_bool(0.5).then(|| rng.gen_range(0..3));
        let trace = forward(&p, &random_input(&mut rng, t, 8, overall)).unwrap();
        for a in &trace.aspects {
            for dist in [Some(&a.alpha_global), a.alpha_deliberate.as_ref(), Some(&a.probs)].into_iter().flatten() {
                worst = worst.max((dist.iter().sum::<f64>() - 1.0).abs());
                negative += dist.iter().filter(|v| **v < 0.0).count();
            }
        }
    }
    verdict(
        3,
        "normalization",
        worst <= 1e-6 && negative == 0,
        format!("1000 draws, worst |sum - 1| {worst:.2e}, {negative} negative entries"),
    );
}

#[test]
fn criterion_04_factorization_machine() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=32);
        let f = rng.gen_range(1..=8);
        let w0 = rng.gen_range(-1.0..1.0);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = Tensor::new(n, f, (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut naive = w0 + (0..n).map(|i| w[i] * z[i]).sum::<f64>();
        for i in 0..n {
            for j in i + 1..n {
                let vij: f64 = (0..f).map(|q| v.get(i, q) * v.get(j, q)).sum();
                naive += vij * z[i] * z[j];
            }
        }
        worst = worst.max((factorize(w0, &w, &v, &z) - naive).abs());
    }
    verdict(4, "factorization machine", worst <= 1e-10, format!("100 instances, worst abs diff {worst:.2e}"));
}

/// Literal triple loop: words, reviews, positions.
fn triple_loop(reviews: &[IndexedReview], aspect: usize, label: Option<usize>, gamma: f64) -> BTreeMap<String, f64> {
    let kept: Vec<&IndexedReview> = reviews.iter().filter(|r| label.map_or(true, |l| r.labels[aspect] == l)).collect();
    let words: HashSet<&String> = kept.iter().flat_map(|r| r.tokens.iter()).collect();
    let mut out = BTreeMap::new();
    for w in words {
        let (mut mass, mut freq) = (0.0, 0.0);
        for r in &kept {
            for (t, tok) in r.tokens.iter().enumerate() {
                if tok == w {
                    mass += r.weights[aspect][t];
                    freq += 1.0;
                }
            }
        }
        out.insert(w.clone(), mass / (freq + gamma));
    }
    out
}

fn random_index(rng: &mut ChaCha8Rng) -> AttentionIndex {
    let words = ["good", "beer", "dark", "head", "malt", "thin", "hop", "sweet"];
    let reviews = (0..rng.gen_range(1..=20))
        .map(|i| {
            let t = rng.gen_range(1..=15);
            let tokens: Vec<String> = (0..t).map(|_| words.choose(rng).unwrap().to_string()).collect();
            let weights = (0..2)
                .map(|_| {
                    let raw: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect();
            IndexedReview { id: format!("r{i}"), tokens, pos_tags: None, labels: vec![rng.gen_range(0..3), rng.gen_range(0..3)], weights }
        })
        .collect();
    AttentionIndex::new(reviews, 2).unwrap()
}

#[test]
fn criterion_05_keyword_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for _ in 0..50 {
        let idx = random_index(&mut rng);
        let gamma = rng.gen_range(0.1..3.0);
        for k in 0..2 {
            let mut pairs = vec![(aspect_keyword_scores(&idx, k, gamma).unwrap(), triple_loop(&idx.reviews, k, None, gamma))];
            for l in 0..3 {
                if idx.reviews.iter().any(|r| r.labels[k] == l) {
                    pairs.push((opinion_keyword_scores(&idx, k, l, gamma).unwrap(), triple_loop(&idx.reviews, k, Some(l), gamma)));
                }
            }
            for (got, want) in pairs {
                assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
                for (w, v) in &want {
                    worst = worst.max((got[w] - v).abs());
                    compared += 1;
                }
            }
        }
    }
    let hand = AttentionIndex::new(
        vec![IndexedReview {
            id: "h".into(),
            tokens: ["good", "beer", "good"].iter().map(|s| s.to_string()).collect(),
            pos_tags: None,
            labels: vec![0],
            weights: vec![vec![1.0 / 3.0; 3]],
        }],
        1,
    )
    .unwrap();
    let good = aspect_keyword_scores(&hand, 0, 1.0).unwrap()["good"];
    verdict(
        5,
        "keyword oracle",
        worst <= 1e-12 && good == 2.0 / 9.0,
        format!("{compared} scores over 50 corpora, worst diff {worst:.2e}; hand case {good}"),
    );
}

#[test]
fn criterion_09_schedule_and_clipping() {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = [0, 2, 5].iter().map(|&e| schedule_lr(e, &cfg)).collect();
    let mut grads = vec![Tensor::<f64>::new(1, 2, vec![2.4, 0.0]), Tensor::new(2, 1, vec![0.0, 3.2])];
    let before = global_norm(&grads);
    clip_gradients(&mut grads, cfg.clip_threshold);
    let after = global_norm(&grads);
    verdict(
        9,
        "schedule and clipping",
        lrs == [0.0005, 0.0004, 0.00032] && (before - 4.0).abs() < 1e-12 && (after - 2.0).abs() <= 1e-9,
        format!("lr {lrs:?}, norm {before} -> {after}"),
    );
}

// Desk-scale synthetic experiments

fn planted_spec(reviews_per_cell: usize) -> SyntheticSpec {
    SyntheticSpec {
        aspects: vec!["look".into(), "taste".into()],
        classes: 3,
        keywords: (0..2).map(|a| (0..3).map(|c| (0..3).map(|i| format!("k{a}c{c}w{i}")).collect()).collect()).collect(),
        reviews_per_cell,
        length_range: [12, 24],
        noise_rate: 0.5,
        noise_vocab: (0..30).map(|i| format!("n{i}")).collect(),
        shuffle_segments: false,
    }
}

fn desk_model(overall: bool, deliberation: bool, enrichment: bool) -> ModelConfig {
    ModelConfig {
        d_emb: 16,
        d_hidden: 16,
        encoder_layers: 1,
        fm_factors: 4,
        num_aspects: 2,
        num_classes: 3,
        d_or: 8,
        use_overall_rating: overall,
        use_deliberation: deliberation,
        use_feature_enrichment: enrichment,
        ..Default::default()
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig { initial_lr: 0.002, max_epochs: 10, ..Default::default() }
}

struct Desk {
    corpus: Corpus,
    spec: SyntheticSpec,
    lexicon: Lexicon,
    full: TrainOutcome,
    elapsed: Duration,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let spec = planted_spec(417);
        let mut corpus = generate_synthetic_corpus(&spec, 42).unwrap();
        corpus.reviews.truncate(2500);
        for (i, r) in corpus.reviews.iter_mut().enumerate() {
            r.split = Some(match i {
                0..=1999 => Split::Train,
                2000..=2249 => Split::Dev,
                _ => Split::Test,
            });
        }
        let vocab = build_vocabulary(&corpus, 1);
        let lexicon = Lexicon { embeddings: random_embeddings(&vocab, 16, 42), vocab };
        let start = Instant::now();
        let full = train(&corpus, &lexicon, &desk_model(true, true, true), &desk_train()).unwrap();
        Desk { corpus, spec, lexicon, full, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_06_end_to_end_synthetic() {
    let d = desk();
    let acc = d.full.best_dev_accuracy().unwrap();
    let train_reviews = d.corpus.split(Split::Train);
    let index = build_attention_index(&d.full.params, &d.lexicon, &train_reviews).unwrap();
    let table = keyword_table(&index, KeywordMode::Aspect, 1.0, 10, 3).unwrap();
    let mut missing = Vec::new();
    for list in &table.lists {
        let top: HashSet<&str> = list.keywords.iter().map(|k| k.word.as_str()).collect();
        for w in d.spec.keywords[list.aspect].iter().flatten() {
            if !top.contains(w.as_str()) {
                missing.push(w.clone());
            }
        }
    }
    verdict(
        6,
        "end-to-end synthetic",
        acc >= 0.90 && d.elapsed < Duration::from_secs(600) && missing.is_empty(),
        format!(
            "best dev acc {acc:.4} at epoch {:?}, {:.1?} training, planted keywords missing from top-10: {missing:?}",
            d.full.best_epoch, d.elapsed
        ),
    );
}

#[test]
fn criterion_07_ablation_ordering() {
    let d = desk();
    let full = d.full.best_dev_accuracy().unwrap();
    let variants = [("no overall rating", (false, true, true)), ("no deliberation", (true, false, true)), ("no enrichment", (true, true, false))];
    let mut pass = true;
    let mut detail = format!("full {full:.4}");
    for (name, (o, da, fe)) in variants {
        let acc = train(&d.corpus, &d.lexicon, &desk_model(o, da, fe), &desk_train()).unwrap().best_dev_accuracy().unwrap();
        pass &= full >= acc - 0.02;
        detail.push_str(&format!(", {name} {acc:.4}"));
    }
    verdict(7, "ablation ordering", pass, detail);
}

/// Moves a test review toward another class of one aspect: its gold label
/// becomes the new class and about half of that aspect's planted keywords
/// are swapped for keywords of the new class.
fn corrupt(review: &mut Review, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) {
    let aspect = rng.gen_range(0..spec.aspects.len());
    let old = review.aspect_labels[aspect];
    let new = (old + rng.gen_range(1..spec.classes)) % spec.classes;
    let old_words = &spec.keywords[aspect][old];
    let mut slots: Vec<usize> = (0..review.tokens.len()).filter(|&t| old_words.contains(&review.tokens[t])).collect();
    slots.shuffle(rng);
    let swap = slots.len() / 2 + usize::from(slots.len() % 2 == 1 && rng.gen_bool(0.5));
    for &t in &slots[..swap] {
        review.tokens[t] = spec.keywords[aspect][new].choose(rng).unwrap().clone();
    }
    review.aspect_labels[aspect] = new;
}

struct Triage {
    overall: f64,
    lead: f64,
    max_margin: f64,
}

fn triage(d: &Desk, reviews: &[Review]) -> Triage {
    let max_len = d.full.params.config().max_len;
    let inputs: Vec<ModelInput<f32>> = reviews.iter().map(|r| d.lexicon.input(r, max_len).unwrap()).collect();
    let ids: Vec<String> = reviews.iter().map(|r| r.id.clone()).collect();
    let gold: HashMap<String, Vec<usize>> = reviews.iter().map(|r| (r.id.clone(), r.aspect_labels.clone())).collect();
    let spec = AudienceSpec::default();
    let audiences = spawn_audiences(&d.full.params, &spec, None, &desk_train()).unwrap();
    let lead = score_reviews(&d.full.params, &audiences, &ids, &inputs, &spec, "test").unwrap();
    let mm = score_baseline(Method::MaxMargin, &d.full.params, &ids, &inputs, 0, 0.0, 42, "test").unwrap();
    let predicted: HashMap<String, Vec<usize>> = lead.reviews.iter().map(|r| (r.id.clone(), r.predicted.clone())).collect();
    let top = |report: &fedar_core::lead::UncertaintyReport| {
        let picked = rank_and_select(&report.ids(), &report.log_scores(), Selection::Fraction(0.10)).unwrap();
        triage_error_rate(&picked, &predicted, &gold).unwrap()
    };
    Triage { overall: triage_error_rate(&ids, &predicted, &gold).unwrap(), lead: top(&lead), max_margin: top(&mm) }
}

#[test]
fn criterion_08_uncertainty_triage() {
    let d = desk();
    let clean: Vec<Review> = d.corpus.split(Split::Test).into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let picks = sample(&mut rng, clean.len(), (0.15 * clean.len() as f64).round() as usize);

    let mut label_only = clean.clone();
    for i in picks.iter() {
        let a = rng.gen_range(0..2);
        label_only[i].aspect_labels[a] = (label_only[i].aspect_labels[a] + rng.gen_range(1..3)) % 3;
    }
    let mut rewritten = clean.clone();
    for i in picks.iter() {
        corrupt(&mut rewritten[i], &d.spec, &mut rng);
    }
    let r = triage(d, &rewritten);
    println!(
        "criterion  8 (keywords rewritten with the label, informational): overall {:.4}, lead top-10% {:.4}, max-margin top-10% {:.4}",
        r.overall, r.lead, r.max_margin
    );

    let t = triage(d, &label_only);
    verdict(
        8,
        "uncertainty triage",
        t.lead >= 1.5 * t.overall && t.lead >= t.max_margin,
        format!("overall error {:.4}, lead top-10% {:.4}, max-margin top-10% {:.4}", t.overall, t.lead, t.max_margin),
    );
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
d_emb = 8
d_hidden = 8
encoder_layers = 1
fm_factors = 2
d_or = 4

[train]
initial_lr = 0.002
max_epochs = 3

[synth]
aspects = ["look", "taste"]
classes = 3
keywords = [[["a0", "a1"], ["b0", "b1"], ["c0", "c1"]], [["d0", "d1"], ["e0", "e1"], ["f0", "f1"]]]
reviews_per_cell = 30
length_range = [8, 14]
noise_rate = 0.4
noise_vocab = ["x", "y", "z"]
"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_fedar");
    let run = |args: &[&str]| {
        let out = Command::new(bin).arg("--config").arg(&cfg).args(args).env("RUST_LOG", "warn").output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let corpus = dir.path().join("corpus.jsonl");
    run(&["--seed", "7", "synth-data", "--out", corpus.to_str().unwrap()]);
    let [a, b] = ["a", "b"].map(|n| dir.path().join(n));
    for out in [&a, &b] {
        run(&["--seed", "7", "train", "--corpus", corpus.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    let losses = |d: &std::path::Path| -> Vec<f64> {
        std::fs::read_to_string(d.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .flat_map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                [v["train_loss"].as_f64().unwrap(), v["train_eval_loss"].as_f64().unwrap()]
            })
            .collect()
    };
    let (la, lb) = (losses(&a), losses(&b));
    let curve_gap = la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let identical = ["params.bin", "manifest.json", "vocab.json"]
        .iter()
        .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
    verdict(
        10,
        "determinism",
        la.len() == lb.len() && !la.is_empty() && curve_gap <= 1e-6 && identical,
        format!("{} loss values, max gap {curve_gap:.2e}, checkpoint files identical: {identical}", la.len()),
    );
}
