//! Config-driven pipeline runner: one step per subcommand, atomic artifact
//! writes and a manifest line per completed step.

mod config;
mod demo;
mod steps;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    Agents, AlignmentKnobs, CfaKnobs, CircumplexKnobs, IngestSource, LexiconKnobs, MeasureKnobs,
    Paths, ProbeKnobs, RunConfig, DEFAULTS_TOML,
};
pub use demo::init_demo;
pub use steps::{CircumplexSummary, StructureSummary};

use crate::error::{Error, Result};
use crate::gateway::{BackendKind, Gateway, HttpTransport, RemoteBackend};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Ingest,
    Lexicon,
    Measure,
    Structure,
    Cfa,
    Circumplex,
    Probe,
    Distill,
    Reward,
    Report,
}

impl Step {
    pub const ALL: [Step; 10] = [
        Step::Ingest,
        Step::Lexicon,
        Step::Measure,
        Step::Structure,
        Step::Cfa,
        Step::Circumplex,
        Step::Probe,
        Step::Distill,
        Step::Reward,
        Step::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Ingest => "ingest",
            Step::Lexicon => "lexicon",
            Step::Measure => "measure",
            Step::Structure => "structure",
            Step::Cfa => "cfa",
            Step::Circumplex => "circumplex",
            Step::Probe => "probe",
            Step::Distill => "distill",
            Step::Reward => "reward",
            Step::Report => "report",
        }
    }
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Step::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown step `{s}`")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed for one random operation, derived from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    crate::gateway::mock::fnv1a(seed, label.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub step: String,
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Outputs held in memory until the step succeeds, then written through a
/// temporary file and a rename each.
#[derive(Default)]
struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    fn put(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.retain(|(p, _)| p != &path);
        self.files.push((path, bytes));
    }

    fn commit(&self) -> Result<()> {
        let mut temps = Vec::new();
        let result = (|| -> Result<()> {
            for (path, bytes) in &self.files {
                temps.push(crate::atomic::write_temp(path, bytes)?);
            }
            Ok(())
        })();
        if let Err(e) = result {
            for t in &temps {
                let _ = fs::remove_file(t);
            }
            return Err(e);
        }
        for ((path, _), tmp) in self.files.iter().zip(&temps) {
            fs::rename(tmp, path)?;
        }
        Ok(())
    }
}

/// Outcome of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: Step,
    pub manifest: ManifestEntry,
    pub summary: serde_json::Value,
}

pub struct Pipeline {
    cfg: RunConfig,
    base: PathBuf,
    config_sha256: String,
}

impl Pipeline {
    /// Reads a TOML config; `seed` and `backend` override the file.
    pub fn load(config_path: &Path, seed: Option<u64>, backend: Option<BackendKind>) -> Result<Self> {
        let text = fs::read_to_string(config_path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(b) = backend {
            cfg.backend = b;
        }
        let base = config_path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Self::new(cfg, base)
    }

    pub fn new(cfg: RunConfig, base: PathBuf) -> Result<Self> {
        cfg.validate()?;
        let config_sha256 = sha256_hex(&serde_json::to_vec(&cfg)?);
        Ok(Self {
            cfg,
            base,
            config_sha256,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.cfg.paths.out)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    /// Path as recorded in the manifest: relative to the config directory
    /// when possible, with forward slashes.
    fn display_path(&self, p: &Path) -> String {
        let rel = p.strip_prefix(&self.base).unwrap_or(p);
        rel.components()
            .filter_map(|c| match c {
                Component::CurDir => None,
                other => Some(other.as_os_str().to_string_lossy().into_owned()),
            })
            .collect::<Vec<_>>()
            .join("/")
    }

    fn require(&self, p: &Path) -> Result<PathBuf> {
        let full = self.resolve(p);
        if !full.exists() {
            return Err(Error::Config(format!("input not found: {}", full.display())));
        }
        Ok(full)
    }

    fn gateway(&self) -> Result<Gateway> {
        match self.cfg.backend {
            BackendKind::Mock => Ok(Gateway::mock(self.cfg.mock.clone())),
            BackendKind::Remote => {
                let mut roles = self.cfg.agents.roles();
                for a in [&mut roles.parser, &mut roles.generator, &mut roles.evaluator, &mut roles.embedder] {
                    a.backend = BackendKind::Remote;
                }
                let mut backend = RemoteBackend::new(roles, Arc::new(HttpTransport::from_env()))?;
                if let Some(t) = &self.cfg.paths.transcript {
                    let t = self.resolve(t);
                    if let Some(d) = t.parent() {
                        fs::create_dir_all(d)?;
                    }
                    backend = backend.with_transcript(t)?;
                }
                Ok(Gateway::new(Arc::new(backend)))
            }
        }
    }

    pub fn run(&self, step: Step) -> Result<StepReport> {
        let mut ctx = StepContext::default();
        let summary = match step {
            Step::Ingest => steps::ingest(self, &mut ctx)?,
            Step::Lexicon => steps::lexicon(self, &mut ctx)?,
            Step::Measure => steps::measure(self, &mut ctx)?,
            Step::Structure => steps::structure(self, &mut ctx)?,
            Step::Cfa => steps::cfa(self, &mut ctx)?,
            Step::Circumplex => steps::circumplex(self, &mut ctx)?,
            Step::Probe => steps::probe(self, &mut ctx)?,
            Step::Distill => steps::distill(self, &mut ctx)?,
            Step::Reward => steps::reward(self, &mut ctx)?,
            Step::Report => steps::report(self, &mut ctx)?,
        };
        ctx.staged.commit()?;
        let mut outputs: Vec<FileDigest> = ctx
            .staged
            .files
            .iter()
            .map(|(p, b)| FileDigest {
                path: self.display_path(p),
                sha256: sha256_hex(b),
            })
            .collect();
        for p in &ctx.external_outputs {
            outputs.push(FileDigest {
                path: self.display_path(p),
                sha256: sha256_hex(&fs::read(p)?),
            });
        }
        let manifest = ManifestEntry {
            step: step.name().to_string(),
            config_sha256: self.config_sha256.clone(),
            seed: self.cfg.seed,
            seeds: ctx.seeds,
            inputs: ctx.inputs,
            outputs,
        };
        let mut line = serde_json::to_vec(&manifest)?;
        line.push(b'\n');
        crate::atomic::append_atomic(&self.out_path(MANIFEST_FILE), &line)?;
        Ok(StepReport {
            step,
            manifest,
            summary,
        })
    }

    /// Runs every step in order, stopping at the first failure.
    pub fn run_all(&self) -> Result<Vec<StepReport>> {
        Step::ALL.iter().map(|&s| self.run(s)).collect()
    }
}

#[derive(Default)]
struct StepContext {
    staged: Staged,
    inputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
    /// Files a step writes through another component (the corpus store).
    external_outputs: Vec<PathBuf>,
}

impl StepContext {
    fn read_input(&mut self, pipeline: &Pipeline, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path)?;
        self.inputs.push(FileDigest {
            path: pipeline.display_path(path),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn seed(&mut self, pipeline: &Pipeline, label: &str) -> u64 {
        let s = derive_seed(pipeline.cfg.seed, label);
        self.seeds.insert(label.to_string(), s);
        s
    }

    fn write(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.staged.put(path, bytes);
    }
}
