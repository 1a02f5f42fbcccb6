use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use fedar_core::akr::{build_attention_index, keyword_records, keyword_table, write_keyword_table, KeywordMode};
use fedar_core::attention::{attention_records, highlight_page, write_attention};
use fedar_core::corpus::{
    build_vocabulary, generate_synthetic_corpus, load_corpus, load_pretrained_embeddings, random_embeddings,
    split_dataset, write_corpus, Corpus, Review, SchemaConfig, Split,
};
use fedar_core::fsutil::write_atomic;
use fedar_core::lead::{
    rank_and_select, score_baseline, score_reviews, spawn_audiences, triage_error_rate, write_report, Method,
    Selection,
};
use fedar_core::model::{
    forward_many, load_checkpoint, save_checkpoint, AspectTrace, Checkpoint, Lexicon, ModelInput,
};
use fedar_core::seeds::derive_seed;
use fedar_core::training::{evaluate, split_examples, train, write_history};

use crate::config::{output_path, RunConfig};
use crate::{Cli, CliError, Command, Common};

const SPLIT_STREAM: u64 = 4;
const EMBEDDING_STREAM: u64 = 5;

type Res<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> Res {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = config.resolve_seed(cli.seed);
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::SynthData { out } => synth_data(&config, seed, out),
        Command::Train { corpus, embeddings, out, no_or, no_da, no_fe } => {
            if no_or {
                config.model.use_overall_rating = false;
            }
            if no_da {
                config.model.use_deliberation = false;
            }
            if no_fe {
                config.model.use_feature_enrichment = false;
            }
            train_cmd(&mut config, seed, corpus, embeddings, out)
        }
        Command::Eval { common } => eval_cmd(&config, common),
        Command::Predict { common } => predict_cmd(&config, common),
        Command::Keywords { common, mode, gamma, top_k, aspect } => {
            if let Some(m) = mode {
                config.keywords.mode = m.parse::<KeywordMode>().map_err(CliError::Usage)?;
            }
            config.keywords.gamma = gamma.unwrap_or(config.keywords.gamma);
            config.keywords.top_k = top_k.unwrap_or(config.keywords.top_k);
            keywords_cmd(&config, common, aspect)
        }
        Command::Uncertainty { common, method, top_frac } => {
            if let Some(m) = method {
                config.uncertainty.method = m.parse::<Method>().map_err(CliError::Usage)?;
            }
            config.uncertainty.top_frac = top_frac.unwrap_or(config.uncertainty.top_frac);
            uncertainty_cmd(&config, seed, common)
        }
        Command::AttnExport { common, aspect, limit } => attn_cmd(&config, common, aspect, limit),
    }
}

fn existing(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Res<PathBuf> {
    let path = flag
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("--{what} is required")))?;
    if !path.exists() {
        return Err(CliError::Data(format!("{what} path {} does not exist", path.display())));
    }
    Ok(path)
}

enum SplitChoice {
    One(Split),
    All,
}

fn split_choice(flag: &Option<String>, default: Split) -> Res<SplitChoice> {
    match flag.as_deref() {
        None => Ok(SplitChoice::One(default)),
        Some("all") => Ok(SplitChoice::All),
        Some(s) => s.parse().map(SplitChoice::One).map_err(CliError::Usage),
    }
}

impl SplitChoice {
    fn name(&self) -> &'static str {
        match self {
            SplitChoice::One(s) => s.name(),
            SplitChoice::All => "all",
        }
    }

    fn select<'c>(&self, corpus: &'c Corpus) -> Vec<&'c Review> {
        match self {
            SplitChoice::One(s) => corpus.split(*s),
            SplitChoice::All => corpus.reviews.iter().collect(),
        }
    }
}

fn assign_splits(corpus: Corpus, ratios: [f64; 3], seed: u64) -> Res<Corpus> {
    if corpus.reviews.iter().all(|r| r.split.is_some()) {
        return Ok(corpus);
    }
    Ok(split_dataset(corpus, ratios, derive_seed(seed, &[SPLIT_STREAM]))?)
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Res {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).map_err(|e| CliError::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(write_atomic(path, &buf)?)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn synth_data(config: &RunConfig, seed: u64, out: Option<PathBuf>) -> Res {
    let out = output_path(out, config, "synthetic.jsonl");
    let corpus = generate_synthetic_corpus(&config.synth, seed)?;
    let corpus = assign_splits(corpus, config.corpus.split, seed)?;
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out, &buf)?;
    print_json(&json!({
        "seed": seed,
        "reviews": corpus.reviews.len(),
        "train": corpus.count(Split::Train),
        "dev": corpus.count(Split::Dev),
        "test": corpus.count(Split::Test),
        "out": out,
    }));
    Ok(())
}

fn train_cmd(
    config: &mut RunConfig,
    seed: u64,
    corpus: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Res {
    let corpus_path = existing(corpus, &config.paths.corpus, "corpus")?;
    let emb_path = match embeddings.or_else(|| config.paths.embeddings.clone()) {
        Some(p) => Some(existing(Some(p), &None, "embeddings")?),
        None => None,
    };
    let out = output_path(out, config, "model");
    config.train.validate()?;

    let schema = SchemaConfig {
        num_aspects: config.corpus.num_aspects,
        scale: config.corpus.scale,
        aspect_names: config.corpus.aspect_names.clone(),
    };
    let corpus = assign_splits(load_corpus(&corpus_path, &schema)?, config.corpus.split, seed)?;
    let vocab = build_vocabulary(&corpus, config.corpus.min_freq);
    let embeddings = match &emb_path {
        Some(p) => load_pretrained_embeddings(p, &vocab, derive_seed(seed, &[EMBEDDING_STREAM]))?,
        None => random_embeddings(&vocab, config.model.d_emb, derive_seed(seed, &[EMBEDDING_STREAM])),
    };
    if embeddings.dim() != config.model.d_emb {
        log::info!("d_emb set to the embedding width {}", embeddings.dim());
        config.model.d_emb = embeddings.dim();
    }
    config.model.num_aspects = corpus.num_aspects();
    config.model.num_classes = corpus.num_classes();
    let lexicon = Lexicon { vocab, embeddings };

    let outcome = train(&corpus, &lexicon, &config.model, &config.train)?;
    let best_epoch = outcome.best_epoch.ok_or_else(|| CliError::Usage("max_epochs must be at least 1".into()))?;
    let best_acc = outcome.best_dev_accuracy().unwrap_or(f64::NAN);
    let mut meta = BTreeMap::new();
    meta.insert("best_epoch".to_string(), json!(best_epoch));
    meta.insert("best_dev_accuracy".to_string(), json!(best_acc));
    meta.insert("split".to_string(), json!(config.corpus.split));
    meta.insert("train".to_string(), serde_json::to_value(&config.train).expect("config serializes"));
    let ckpt = Checkpoint {
        params: outcome.params,
        lexicon,
        aspect_names: corpus.aspect_names.clone(),
        scale: corpus.scale,
        seed,
        meta,
    };
    save_checkpoint(&ckpt, &out)?;
    let mut history = Vec::new();
    write_history(&outcome.history, &mut history).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out.join("metrics.jsonl"), &history)?;
    print_json(&json!({
        "seed": seed,
        "best_epoch": best_epoch,
        "best_dev_accuracy": best_acc,
        "epochs": outcome.history.len(),
        "out": out,
    }));
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    corpus: Corpus,
}

fn load_for_inference(config: &RunConfig, common: &Common) -> Res<Loaded> {
    let ckpt_path = existing(common.checkpoint.clone(), &config.paths.checkpoint, "checkpoint")?;
    let corpus_path = existing(common.corpus.clone(), &config.paths.corpus, "corpus")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let schema = SchemaConfig {
        num_aspects: Some(ckpt.aspect_names.len()),
        scale: Some(ckpt.scale),
        aspect_names: Some(ckpt.aspect_names.clone()),
    };
    let ratios = ckpt
        .meta
        .get("split")
        .and_then(|v| serde_json::from_value::<[f64; 3]>(v.clone()).ok())
        .unwrap_or(config.corpus.split);
    let corpus = assign_splits(load_corpus(&corpus_path, &schema)?, ratios, ckpt.seed)?;
    Ok(Loaded { ckpt, corpus })
}

fn aspect_filter(names: &[String], aspect: &Option<String>) -> Res<Vec<usize>> {
    match aspect {
        None => Ok((0..names.len()).collect()),
        Some(a) => names
            .iter()
            .position(|n| n == a)
            .map(|k| vec![k])
            .ok_or_else(|| CliError::Usage(format!("unknown aspect {a:?}; known: {}", names.join(", ")))),
    }
}

fn nonempty<'c>(reviews: Vec<&'c Review>, split: &SplitChoice) -> Res<Vec<&'c Review>> {
    if reviews.is_empty() {
        return Err(CliError::Data(format!("split {} is empty", split.name())));
    }
    Ok(reviews)
}

fn eval_cmd(config: &RunConfig, common: Common) -> Res {
    let split = split_choice(&common.split, Split::Dev)?;
    let Loaded { ckpt, corpus } = load_for_inference(config, &common)?;
    let reviews = nonempty(split.select(&corpus), &split)?;
    let report = evaluate(&ckpt.params, &ckpt.lexicon, &reviews, &ckpt.scale, &ckpt.aspect_names)?;
    let value = json!({ "seed": ckpt.seed, "split": split.name(), "metrics": report });
    if let Some(out) = common.out.or_else(|| config.paths.out.clone()) {
        let text = serde_json::to_string_pretty(&value).expect("json values serialize") + "\n";
        write_atomic(&out, text.as_bytes())?;
    }
    print_json(&value);
    Ok(())
}

#[derive(Serialize)]
struct AspectPrediction<'a> {
    aspect: &'a str,
    rating: i64,
    #[serde(flatten)]
    trace: &'a AspectTrace,
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    ratings: Vec<i64>,
    aspects: Vec<AspectPrediction<'a>>,
}

fn predict_cmd(config: &RunConfig, common: Common) -> Res {
    let split = split_choice(&common.split, Split::Test)?;
    let out = output_path(common.out.clone(), config, "predictions.jsonl");
    let Loaded { ckpt, corpus } = load_for_inference(config, &common)?;
    let reviews = nonempty(split.select(&corpus), &split)?;
    let traces = forward_many(&ckpt.params, &ckpt.lexicon, &reviews)?;
    let rows: Vec<Prediction> = reviews
        .iter()
        .zip(&traces)
        .map(|(r, t)| Prediction {
            id: &r.id,
            ratings: t.labels().into_iter().map(|c| ckpt.scale.rating(c)).collect(),
            aspects: t
                .aspects
                .iter()
                .zip(&ckpt.aspect_names)
                .map(|(a, name)| AspectPrediction { aspect: name, rating: ckpt.scale.rating(a.predicted()), trace: a })
                .collect(),
        })
        .collect();
    write_json_lines(&out, &rows)?;
    print_json(&json!({ "split": split.name(), "reviews": rows.len(), "out": out }));
    Ok(())
}

fn keywords_cmd(config: &RunConfig, common: Common, aspect: Option<String>) -> Res {
    let split = split_choice(&common.split, Split::Train)?;
    let out = output_path(common.out.clone(), config, "keywords.jsonl");
    let Loaded { ckpt, corpus } = load_for_inference(config, &common)?;
    let wanted = aspect_filter(&ckpt.aspect_names, &aspect)?;
    let reviews = nonempty(split.select(&corpus), &split)?;
    let index = build_attention_index(&ckpt.params, &ckpt.lexicon, &reviews)?;
    let s = &config.keywords;
    let mut table = keyword_table(&index, s.mode, s.gamma, s.top_k, ckpt.scale.num_classes())?;
    table.lists.retain(|l| wanted.contains(&l.aspect));
    let records = keyword_records(&table, &ckpt.aspect_names, &ckpt.scale, split.name());
    let mut buf = Vec::new();
    write_keyword_table(&records, &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out, &buf)?;
    print_json(&json!({
        "mode": s.mode,
        "gamma": s.gamma,
        "top_k": s.top_k,
        "pos_filtered": table.pos_filtered,
        "lists": table.lists.len(),
        "out": out,
    }));
    Ok(())
}

fn uncertainty_cmd(config: &RunConfig, seed: u64, common: Common) -> Res {
    let split = split_choice(&common.split, Split::Test)?;
    let out = output_path(common.out.clone(), config, "uncertainty.jsonl");
    let u = &config.uncertainty;
    if !(u.top_frac > 0.0 && u.top_frac <= 1.0) {
        return Err(CliError::Usage(format!("--top-frac {} must lie in (0, 1]", u.top_frac)));
    }
    config.audience.validate()?;
    let Loaded { ckpt, corpus } = load_for_inference(config, &common)?;
    let reviews = nonempty(split.select(&corpus), &split)?;
    let max_len = ckpt.params.config().max_len;
    let inputs: Vec<ModelInput<f32>> =
        reviews.iter().map(|r| ckpt.lexicon.input(r, max_len)).collect::<Result<_, _>>()?;
    let ids: Vec<String> = reviews.iter().map(|r| r.id.clone()).collect();
    let report = match u.method {
        Method::Lead => {
            let train_set = match config.audience.kind {
                fedar_core::lead::AudienceKind::ContinuedTraining => {
                    Some(split_examples(&ckpt.lexicon, &corpus, Split::Train, max_len)?)
                }
                fedar_core::lead::AudienceKind::DropoutPrune => None,
            };
            let audiences = spawn_audiences(&ckpt.params, &config.audience, train_set.as_deref(), &config.train)?;
            score_reviews(&ckpt.params, &audiences, &ids, &inputs, &config.audience, split.name())?
        }
        m => score_baseline(m, &ckpt.params, &ids, &inputs, u.mc_samples, u.mc_rate, seed, split.name())?,
    };
    let selected = rank_and_select(&report.ids(), &report.log_scores(), Selection::Fraction(u.top_frac))?;
    let predictions: HashMap<String, Vec<usize>> =
        report.reviews.iter().map(|r| (r.id.clone(), r.predicted.clone())).collect();
    let gold: HashMap<String, Vec<usize>> = reviews.iter().map(|r| (r.id.clone(), r.aspect_labels.clone())).collect();
    let mut buf = Vec::new();
    write_report(&report, &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out, &buf)?;
    print_json(&json!({
        "method": u.method,
        "seed": report.header.seed,
        "split": split.name(),
        "top_frac": u.top_frac,
        "selected": selected,
        "selected_error_rate": triage_error_rate(&selected, &predictions, &gold)?,
        "overall_error_rate": triage_error_rate(&ids, &predictions, &gold)?,
        "out": out,
    }));
    Ok(())
}

fn attn_cmd(config: &RunConfig, common: Common, aspect: Option<String>, limit: usize) -> Res {
    let split = split_choice(&common.split, Split::Test)?;
    let out = output_path(common.out.clone(), config, "attention");
    let Loaded { ckpt, corpus } = load_for_inference(config, &common)?;
    let wanted = aspect_filter(&ckpt.aspect_names, &aspect)?;
    let mut reviews = nonempty(split.select(&corpus), &split)?;
    reviews.truncate(limit);
    let traces = forward_many(&ckpt.params, &ckpt.lexicon, &reviews)?;
    let max_len = ckpt.params.config().max_len;
    let mut records = Vec::new();
    for (r, t) in reviews.iter().zip(&traces) {
        let tokens = &r.tokens[..r.tokens.len().min(max_len)];
        records.extend(attention_records(&r.id, tokens, t, &wanted, &ckpt.aspect_names, |c| ckpt.scale.rating(c))?);
    }
    let mut buf = Vec::new();
    write_attention(&records, &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out.join("attention.jsonl"), &buf)?;
    write_atomic(&out.join("attention.html"), highlight_page(&records, "Attention weights").as_bytes())?;
    print_json(&json!({ "split": split.name(), "records": records.len(), "out": out }));
    Ok(())
}
