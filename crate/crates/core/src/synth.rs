//! Seeded synthetic data: planted factor models and a rule-based fleet of
//! mock subjects whose answers follow planted latent value orientations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::mock::fnv1a;
use crate::measurement::{Responder, Subject};

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let joined = parts.join("\u{1f}");
    ChaCha8Rng::seed_from_u64(fnv1a(seed, joined.as_bytes()))
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Simple-structure loadings: value `i` loads on factor `i % n_factors` with
/// a magnitude drawn from `[lo, hi]`; a fraction `negative_share` of values
/// load negatively.
pub fn simple_structure(
    n_values: usize,
    n_factors: usize,
    (lo, hi): (f64, f64),
    negative_share: f64,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = DMatrix::zeros(n_values, n_factors);
    for i in 0..n_values {
        let mag = rng.random_range(lo..=hi);
        let sign = if rng.random::<f64>() < negative_share { -1.0 } else { 1.0 };
        l[(i, i % n_factors)] = sign * mag;
    }
    l
}

/// Rows `x = Λ f + e` with independent standard-normal factors and
/// `e ~ N(0, noise_sd²)`.
pub fn simulate_factor_data(loadings: &DMatrix<f64>, n_rows: usize, noise_sd: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, k) = loadings.shape();
    let mut x = DMatrix::zeros(n_rows, p);
    for r in 0..n_rows {
        let f = DVector::from_fn(k, |_, _| normal(&mut rng));
        let row = loadings * f;
        for c in 0..p {
            x[(r, c)] = row[c] + noise_sd * normal(&mut rng);
        }
    }
    x
}

/// Samples from a zero-mean multivariate normal with covariance `sigma`.
pub fn simulate_mvn(sigma: &DMatrix<f64>, n_rows: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("covariance is not positive definite"))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sigma.nrows();
    let mut x = DMatrix::zeros(n_rows, p);
    for r in 0..n_rows {
        let z = DVector::from_fn(p, |_, _| normal(&mut rng));
        x.row_mut(r).copy_from(&(&l * z).transpose());
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedItem {
    pub factor: usize,
    #[serde(default)]
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub seed: u64,
    pub n_factors: usize,
    /// Explicit value placement; other values get a hashed factor and sign.
    pub planted: BTreeMap<String, PlantedItem>,
    /// Correlation among model latents; identity when empty.
    pub factor_correlation: Vec<Vec<f64>>,
    /// Statements per answer.
    pub sentences: usize,
    pub loading: f64,
    pub gain: f64,
    /// Per-statement noise on the latent scale.
    pub noise: f64,
    /// SD of a profiling prompt's shift from the model's own latents.
    pub profile_spread: f64,
    /// Planted safety direction over factors.
    pub safety_weights: Vec<f64>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_factors: 4,
            planted: BTreeMap::new(),
            factor_correlation: Vec::new(),
            sentences: 7,
            loading: 0.9,
            gain: 2.0,
            noise: 0.4,
            profile_spread: 0.5,
            safety_weights: Vec::new(),
        }
    }
}

/// Mock subjects. Each model has latent factor scores; each profiling
/// prompt shifts them. Asked about a value (named in double quotes in the
/// prompt), a subject answers with statements for or against it, with
/// odds driven by its latent score on the value's factor.
pub struct MockFleet {
    cfg: FleetConfig,
    chol: DMatrix<f64>,
}

impl MockFleet {
    pub fn new(cfg: FleetConfig) -> Result<Self> {
        let k = cfg.n_factors;
        if k == 0 || cfg.sentences == 0 {
            return Err(Error::Config("fleet needs at least one factor and one sentence".into()));
        }
        if cfg.planted.values().any(|p| p.factor >= k) {
            return Err(Error::Config("planted factor index out of range".into()));
        }
        if !cfg.safety_weights.is_empty() && cfg.safety_weights.len() != k {
            return Err(Error::Config("safety_weights must have one entry per factor".into()));
        }
        let chol = if cfg.factor_correlation.is_empty() {
            DMatrix::identity(k, k)
        } else {
            if cfg.factor_correlation.len() != k || cfg.factor_correlation.iter().any(|r| r.len() != k) {
                return Err(Error::Config("factor_correlation must be n_factors x n_factors".into()));
            }
            let m = DMatrix::from_fn(k, k, |i, j| cfg.factor_correlation[i][j]);
            m.cholesky()
                .ok_or_else(|| Error::Config("factor_correlation is not positive definite".into()))?
                .l()
        };
        Ok(Self { cfg, chol })
    }

    pub fn config(&self) -> &FleetConfig {
        &self.cfg
    }

    pub fn item(&self, value: &str) -> PlantedItem {
        if let Some(p) = self.cfg.planted.get(value) {
            return *p;
        }
        let h = fnv1a(self.cfg.seed, value.as_bytes());
        PlantedItem {
            factor: (h % self.cfg.n_factors as u64) as usize,
            negative: (h >> 32) & 1 == 1,
        }
    }

    pub fn model_latent(&self, model: &str) -> Vec<f64> {
        let mut rng = rng_for(self.cfg.seed, &["model", model]);
        let z = DVector::from_fn(self.cfg.n_factors, |_, _| normal(&mut rng));
        (&self.chol * z).iter().copied().collect()
    }

    pub fn latent(&self, subject: &Subject) -> Vec<f64> {
        let mut rng = rng_for(self.cfg.seed, &["profile", &subject.model_name, &subject.profile_prompt_id]);
        self.model_latent(&subject.model_name)
            .into_iter()
            .map(|x| x + self.cfg.profile_spread * normal(&mut rng))
            .collect()
    }

    /// Planted safety of a model; 0 when no safety direction is configured.
    pub fn safety_score(&self, model: &str) -> f64 {
        self.model_latent(model)
            .iter()
            .zip(&self.cfg.safety_weights)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn answer(&self, subject: &Subject, value: &str) -> String {
        let item = self.item(value);
        let sign = if item.negative { -1.0 } else { 1.0 };
        let mean = sign * self.cfg.loading * self.latent(subject)[item.factor];
        let mut rng = rng_for(
            self.cfg.seed,
            &["answer", &subject.model_name, &subject.profile_prompt_id, value],
        );
        let sentences: Vec<String> = (0..self.cfg.sentences)
            .map(|_| {
                let z = self.cfg.gain * (mean + self.cfg.noise * normal(&mut rng));
                let p = 1.0 / (1.0 + (-z).exp());
                if rng.random::<f64>() < p {
                    format!("I value {value}.")
                } else {
                    format!("I do not value {value}.")
                }
            })
            .collect();
        sentences.join(" ")
    }
}

/// The first double-quoted span of `prompt`.
pub fn quoted_value(prompt: &str) -> Option<&str> {
    let start = prompt.find('"')? + 1;
    let len = prompt[start..].find('"')?;
    let v = prompt[start..start + len].trim();
    (!v.is_empty()).then_some(v)
}

impl Responder for MockFleet {
    fn respond(&self, subject: &Subject, prompt: &str) -> Result<String> {
        Ok(match quoted_value(prompt) {
            Some(v) => self.answer(subject, v),
            None => "That depends on the situation.".to_string(),
        })
    }
}
