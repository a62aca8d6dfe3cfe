use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cfa::{CfaOptions, SampleMatrix};
use crate::circumplex::{CircumplexOptions, Expectation};
use crate::error::{Error, Result};
use crate::gateway::{AgentConfig, BackendKind, MockRules, RemoteRoles};
use crate::lexicon::DedupThresholds;
use crate::measurement::MeasureOptions;
use crate::probe::ProbeOptions;
use crate::psychometrics::StructureConfig;
use crate::synth::FleetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSource {
    pub path: PathBuf,
    /// `records`, `perceptions` or `annotations`.
    pub format: String,
}

/// Input locations, relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ingest: Vec<IngestSource>,
    pub corpus: PathBuf,
    pub roster: PathBuf,
    pub safety: PathBuf,
    pub triplets: PathBuf,
    pub candidates: PathBuf,
    pub out: PathBuf,
    /// JSONL log of remote requests and replies.
    pub transcript: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            ingest: Vec::new(),
            corpus: "corpus".into(),
            roster: "data/roster.csv".into(),
            safety: "data/safety.csv".into(),
            triplets: "data/triplets.jsonl".into(),
            candidates: "data/candidates.jsonl".into(),
            out: "out".into(),
            transcript: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Agents {
    pub parser: AgentConfig,
    pub generator: AgentConfig,
    pub evaluator: AgentConfig,
    pub embedder: AgentConfig,
    /// The measured models themselves.
    pub subject: AgentConfig,
}

impl Agents {
    pub fn roles(&self) -> RemoteRoles {
        RemoteRoles {
            parser: self.parser.clone(),
            generator: self.generator.clone(),
            evaluator: self.evaluator.clone(),
            embedder: self.embedder.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconKnobs {
    pub thresholds: DedupThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureKnobs {
    pub min_support: u32,
    pub confidence_weighted: bool,
    /// Measure only the most frequent lexicon values.
    pub max_values: Option<usize>,
}

impl Default for MeasureKnobs {
    fn default() -> Self {
        let d = MeasureOptions::default();
        Self {
            min_support: d.min_support,
            confidence_weighted: d.confidence_weighted,
            max_values: None,
        }
    }
}

impl MeasureKnobs {
    pub fn options(&self) -> MeasureOptions {
        MeasureOptions {
            min_support: self.min_support,
            confidence_weighted: self.confidence_weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfaKnobs {
    pub sample: SampleMatrix,
    pub correlated_factors: bool,
    /// Reference values to map the atomic values onto for a comparison fit.
    pub reference_values: Vec<String>,
    pub optimizer: CfaOptions,
}

impl Default for CfaKnobs {
    fn default() -> Self {
        Self {
            sample: SampleMatrix::Covariance,
            correlated_factors: true,
            reference_values: Vec::new(),
            optimizer: CfaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CircumplexKnobs {
    pub fit: CircumplexOptions,
    pub expectations: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeKnobs {
    pub folds: usize,
    pub train: ProbeOptions,
}

impl Default for ProbeKnobs {
    fn default() -> Self {
        Self {
            folds: 5,
            train: ProbeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentKnobs {
    /// Measured dimensions with smaller magnitude are left out of the reward.
    pub mask_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendKind,
    pub paths: Paths,
    pub agents: Agents,
    /// Profiling prompt id -> system prompt, for remote subjects.
    pub profiles: BTreeMap<String, String>,
    pub mock: MockRules,
    pub fleet: FleetConfig,
    pub lexicon: LexiconKnobs,
    pub measure: MeasureKnobs,
    pub structure: StructureConfig,
    pub cfa: CfaKnobs,
    pub circumplex: CircumplexKnobs,
    pub probe: ProbeKnobs,
    pub alignment: AlignmentKnobs,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendKind::Mock,
            paths: Paths::default(),
            agents: Agents::default(),
            profiles: BTreeMap::new(),
            mock: MockRules::default(),
            fleet: FleetConfig::default(),
            lexicon: LexiconKnobs::default(),
            measure: MeasureKnobs::default(),
            structure: StructureConfig::default(),
            cfa: CfaKnobs::default(),
            circumplex: CircumplexKnobs::default(),
            probe: ProbeKnobs::default(),
            alignment: AlignmentKnobs::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alignment.mask_threshold >= 0.0) {
            return Err(Error::Config("alignment.mask_threshold must be non-negative".into()));
        }
        if !(self.probe.train.l2 >= 0.0) {
            return Err(Error::Config("probe.train.l2 must be non-negative".into()));
        }
        if self.probe.folds < 2 {
            return Err(Error::Config("probe.folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.structure.max_missing) {
            return Err(Error::Config("structure.max_missing must lie in [0, 1]".into()));
        }
        if self.circumplex.fit.order == 0 || self.circumplex.fit.starts == 0 {
            return Err(Error::Config("circumplex order and starts must be positive".into()));
        }
        for s in &self.paths.ingest {
            s.format.parse::<crate::corpus::RowFormat>().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Commented defaults, as printed by `config --print-defaults`.
pub const DEFAULTS_TOML: &str = r#"# Run configuration. Relative paths resolve against this file's directory.

# Master seed; every random step derives its own seed from it.
seed = 0
# "mock" (deterministic rule backend and simulated subjects) or "remote".
backend = "mock"

[paths]
# Files loaded by `ingest`, e.g. [{ path = "data/records.jsonl", format = "records" }].
ingest = []
# Corpus store directory.
corpus = "corpus"
# CSV with model_name,profile_prompt_id: the subjects to measure.
roster = "data/roster.csv"
# CSV with model,score: externally judged safety, higher is safer.
safety = "data/safety.csv"
# JSONL preference triplets {"prompt","winning_response","losing_response"}.
triplets = "data/triplets.jsonl"
# JSONL {"prompt","candidates":[...]} for best-of-n selection.
candidates = "data/candidates.jsonl"
# Every artifact and the manifest go here.
out = "out"
# transcript = "out/transcript.jsonl"   # log of remote requests (unset: off)

# Remote agents. Each takes: backend, endpoint, model_name, max_concurrency,
# max_retries, timeout (seconds), temperature, top_p, retry_backoff_ms.
# The bearer token is read from the GPLA_API_KEY environment variable.
[agents.parser]
model_name = "mock"
max_concurrency = 8
max_retries = 3
timeout = 60.0
retry_backoff_ms = 250

[agents.generator]
model_name = "mock"

[agents.evaluator]
model_name = "mock"

[agents.embedder]
model_name = "mock"

[agents.subject]
model_name = "mock"

# Profiling prompt id -> system prompt given to remote subjects.
[profiles]

[mock]
# Seed of the hashed bag-of-words embedding.
seed = 0
# Sentences containing one of these phrases become perceptions (empty: all).
perception_keywords = []
# Tokens that turn a relevant perception into opposition.
negations = ["not", "never", "no", "against", "oppose", "reject", "avoid", "without"]

# Keyword phrase -> values the generator emits.
[mock.generation]

# Value -> extra cue phrases marking a perception as relevant.
[mock.cues]

# Normalized text -> fixed embedding vector.
[mock.embedding_overrides]

# Simulated subjects used by the mock backend.
[fleet]
seed = 0
n_factors = 4
# Correlation among model latents (empty: independent).
factor_correlation = []
# Statements per answer.
sentences = 7
loading = 0.9
gain = 2.0
noise = 0.4
profile_spread = 0.5
# Planted safety direction, one weight per factor (empty: no safety signal).
safety_weights = []

# Value -> { factor = index, negative = bool }; unlisted values are hashed.
[fleet.planted]

[lexicon.thresholds]
# A candidate is a duplicate when ROUGE-L F1 or embedding cosine with a
# retained value reaches the threshold.
rouge_l = 0.7
cosine = 0.53

[measure]
# Scores backed by fewer relevant perceptions are masked.
min_support = 1
confidence_weighted = false
# max_values = 50   # measure only the most frequent values (unset: all)

[structure]
# k = 5             # fixed factor count (unset: scree elbow, stepped down until reliable)
bootstrap_reps = 2000
# Values with a larger masked fraction are dropped before analysis.
max_missing = 0.2

[structure.prune]
primary_cutoff = 0.4
gap_cutoff = 0.1
min_alpha = 0.7
rotate = true

[cfa]
# "covariance" or "correlation".
sample = "covariance"
correlated_factors = true
# Map atomic values onto these names by embedding similarity for a comparison fit.
reference_values = []

[cfa.optimizer]
restarts = 4
max_iter = 5000
grad_tol = 1e-7
heywood_ratio = 0.0001
min_rows_per_variable = 5

[circumplex]
# [{ a = "F1", b = "F2", relation = "near" }], relation "near" or "diagonal".
expectations = []

[circumplex.fit]
# Cosine terms in the correlation function.
order = 1
starts = 32
max_iter = 3000
grad_tol = 1e-9

[probe]
folds = 5

[probe.train]
l2 = 0.001
max_iter = 20000
grad_tol = 1e-9

[alignment]
mask_threshold = 0.0
"#;
