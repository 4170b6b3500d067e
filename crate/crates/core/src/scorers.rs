//! Single-stage OOD scores computed from detector outputs alone.
//!
//! Every scorer follows the same convention: a higher value means "more unknown".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Detection;
use crate::num::{log_sum_exp, softmax, Real};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("detection has no logits")]
    EmptyLogits,
    #[error("detection needs at least 2 logit samples, found {0}")]
    MissingSamples(usize),
    #[error("temperature must be positive")]
    BadTemperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreMethod {
    DefaultScore,
    MaxLogit,
    Msp,
    Energy,
    OdinTemperature,
    McDropout,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 6] = [
        ScoreMethod::DefaultScore,
        ScoreMethod::MaxLogit,
        ScoreMethod::Msp,
        ScoreMethod::Energy,
        ScoreMethod::OdinTemperature,
        ScoreMethod::McDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::DefaultScore => "default",
            ScoreMethod::MaxLogit => "maxlogit",
            ScoreMethod::Msp => "msp",
            ScoreMethod::Energy => "energy",
            ScoreMethod::OdinTemperature => "odin",
            ScoreMethod::McDropout => "mcdropout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum McAggregation {
    #[default]
    PredictiveEntropy,
    MaxProbVariance,
}

impl McAggregation {
    pub fn name(self) -> &'static str {
        match self {
            McAggregation::PredictiveEntropy => "entropy",
            McAggregation::MaxProbVariance => "variance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [McAggregation::PredictiveEntropy, McAggregation::MaxProbVariance]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub method: ScoreMethod,
    /// Softmax/energy temperature. ODIN uses [`ODIN_DEFAULT_TEMPERATURE`] unless overridden.
    pub temperature: f64,
    pub mc_aggregation: McAggregation,
}

pub const ODIN_DEFAULT_TEMPERATURE: f64 = 1000.0;

impl ScorerConfig {
    pub fn new(method: ScoreMethod) -> Self {
        let temperature = if method == ScoreMethod::OdinTemperature { ODIN_DEFAULT_TEMPERATURE } else { 1.0 };
        Self { method, temperature, mc_aggregation: McAggregation::default() }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(ScoreError::BadTemperature)
        }
    }
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self::new(ScoreMethod::DefaultScore)
    }
}

pub fn score_default<T: Real>(det: &Detection<T>) -> T {
    T::one() - det.score
}

fn non_empty<T>(logits: &[T]) -> Result<&[T], ScoreError> {
    if logits.is_empty() {
        Err(ScoreError::EmptyLogits)
    } else {
        Ok(logits)
    }
}

pub fn max_logit<T: Real>(logits: &[T]) -> Result<T, ScoreError> {
    let l = non_empty(logits)?;
    Ok(-l.iter().copied().fold(T::neg_infinity(), T::max))
}

pub fn msp<T: Real>(logits: &[T], temperature: T) -> Result<T, ScoreError> {
    let l = non_empty(logits)?;
    let scaled: Vec<T> = l.iter().map(|&v| v / temperature).collect();
    // max softmax = exp(max - lse), without materializing the distribution
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(T::one() - (max - log_sum_exp(&scaled)).exp())
}

pub fn energy<T: Real>(logits: &[T], temperature: T) -> Result<T, ScoreError> {
    let l = non_empty(logits)?;
    let scaled: Vec<T> = l.iter().map(|&v| v / temperature).collect();
    Ok(-temperature * log_sum_exp(&scaled))
}

pub fn score_max_logit<T: Real>(det: &Detection<T>) -> Result<T, ScoreError> {
    max_logit(&det.logits)
}

/// `1 − max softmax(logits / T)`; `T > 1` gives ODIN's temperature scaling.
pub fn score_msp<T: Real>(det: &Detection<T>, temperature: T) -> Result<T, ScoreError> {
    msp(&det.logits, temperature)
}

/// Free energy `−T · ln Σ exp(logit / T)`.
pub fn score_energy<T: Real>(det: &Detection<T>, temperature: T) -> Result<T, ScoreError> {
    energy(&det.logits, temperature)
}

/// Aggregates Monte-Carlo logit samples into an uncertainty score.
pub fn mc_dropout<T: Real>(samples: &[Vec<T>], aggregation: McAggregation) -> Result<T, ScoreError> {
    if samples.len() < 2 {
        return Err(ScoreError::MissingSamples(samples.len()));
    }
    let probs: Vec<Vec<T>> = samples
        .iter()
        .map(|s| non_empty(s).map(softmax))
        .collect::<Result<_, _>>()?;
    let n = T::from_usize_lossy(probs.len());
    match aggregation {
        McAggregation::PredictiveEntropy => {
            let c = probs[0].len();
            if c < 2 {
                return Ok(T::zero());
            }
            let mut mean = vec![T::zero(); c];
            for p in &probs {
                for (m, &v) in mean.iter_mut().zip(p) {
                    *m = *m + v;
                }
            }
            let entropy = mean
                .iter()
                .map(|&m| m / n)
                .filter(|&m| m > T::zero())
                .fold(T::zero(), |acc, m| acc - m * m.ln());
            Ok(entropy / T::from_usize_lossy(c).ln())
        }
        McAggregation::MaxProbVariance => {
            let maxes: Vec<T> = probs
                .iter()
                .map(|p| p.iter().copied().fold(T::neg_infinity(), T::max))
                .collect();
            let mean = maxes.iter().copied().sum::<T>() / n;
            let var = maxes.iter().map(|&m| (m - mean) * (m - mean)).sum::<T>() / n;
            Ok(var)
        }
    }
}

pub fn score_mc_dropout<T: Real>(det: &Detection<T>, aggregation: McAggregation) -> Result<T, ScoreError> {
    match &det.logit_samples {
        Some(s) => mc_dropout(s, aggregation),
        None => Err(ScoreError::MissingSamples(0)),
    }
}

/// Dispatches on the configured method.
pub fn score<T: Real>(det: &Detection<T>, config: &ScorerConfig) -> Result<T, ScoreError> {
    config.validate()?;
    let t = T::lit(config.temperature);
    match config.method {
        ScoreMethod::DefaultScore => Ok(score_default(det)),
        ScoreMethod::MaxLogit => score_max_logit(det),
        ScoreMethod::Msp | ScoreMethod::OdinTemperature => score_msp(det, t),
        ScoreMethod::Energy => score_energy(det, t),
        ScoreMethod::McDropout => score_mc_dropout(det, config.mc_aggregation),
    }
}
