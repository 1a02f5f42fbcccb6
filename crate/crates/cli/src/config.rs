use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedar_core::akr::{KeywordMode, DEFAULT_GAMMA, DEFAULT_TOP_K};
use fedar_core::corpus::{RatingScale, SyntheticSpec};
use fedar_core::lead::{AudienceSpec, Method};
use fedar_core::model::ModelConfig;
use fedar_core::training::TrainConfig;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const OUT_DIR_ENV: &str = "FEDAR_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    /// Train/dev/test proportions for reviews without a split.
    pub split: [f64; 3],
    pub min_freq: usize,
    pub num_aspects: Option<usize>,
    pub aspect_names: Option<Vec<String>>,
    pub scale: Option<RatingScale>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self { split: [0.8, 0.1, 0.1], min_freq: 1, num_aspects: None, aspect_names: None, scale: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordSettings {
    pub mode: KeywordMode,
    pub gamma: f64,
    pub top_k: usize,
}

impl Default for KeywordSettings {
    fn default() -> Self {
        Self { mode: KeywordMode::Aspect, gamma: DEFAULT_GAMMA, top_k: DEFAULT_TOP_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySettings {
    pub method: Method,
    pub top_frac: f64,
    pub mc_samples: usize,
    pub mc_rate: f64,
}

impl Default for UncertaintySettings {
    fn default() -> Self {
        Self { method: Method::Lead, top_frac: 0.05, mc_samples: 50, mc_rate: 0.5 }
    }
}

/// Everything a run can be configured with. File values are overridden by
/// command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub audience: AudienceSpec,
    pub keywords: KeywordSettings,
    pub uncertainty: UncertaintySettings,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: None,
            paths: Paths::default(),
            corpus: CorpusSettings::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            audience: AudienceSpec::default(),
            keywords: KeywordSettings::default(),
            uncertainty: UncertaintySettings::default(),
            synth: planted_keyword_spec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))
    }

    /// The effective seed, also pushed into every seeded section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(DEFAULT_SEED);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.audience.seed = seed;
        seed
    }
}

/// Two aspects, three classes, three planted keywords per cell and thirty
/// noise words.
pub fn planted_keyword_spec() -> SyntheticSpec {
    let aspects = ["look", "taste"];
    SyntheticSpec {
        aspects: aspects.iter().map(|s| s.to_string()).collect(),
        classes: 3,
        keywords: (0..aspects.len())
            .map(|a| (0..3).map(|c| (0..3).map(|i| format!("k{a}c{c}w{i}")).collect()).collect())
            .collect(),
        reviews_per_cell: 417,
        length_range: [12, 24],
        noise_rate: 0.5,
        noise_vocab: (0..30).map(|i| format!("n{i}")).collect(),
        shuffle_segments: false,
    }
}

/// `--out`, then the config file, then `$FEDAR_OUT_DIR/<name>`, then
/// `out/<name>`.
pub fn output_path(flag: Option<PathBuf>, config: &RunConfig, name: &str) -> PathBuf {
    flag.or_else(|| config.paths.out.clone()).unwrap_or_else(|| {
        let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
        dir.join(name)
    })
}
