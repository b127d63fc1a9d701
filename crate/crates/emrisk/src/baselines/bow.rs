//! Bag-of-words logistic regression: the whole medical history as one
//! count vector over the vocabulary, trained full-batch with L2-penalized
//! maximum likelihood.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::data::PatientRecord;
use crate::diffcore::{sigmoid, softplus};
use crate::embedding::{Namespace, Vocabulary};
use crate::model::{
    collect_parameters, restore_parameters, ArtifactMeta, Envelope, ModelError, FORMAT_VERSION,
};
use crate::optim::AdamState;

/// Occurrence counts of every vocabulary code across the whole history.
/// Diseases and treatments share one vector, indexed by the vocabulary's
/// global order; visit order carries no information here.
pub fn bow_features(
    record: &PatientRecord,
    vocabulary: &Vocabulary,
) -> Result<Vec<f64>, BaselineError> {
    bow_features_prefix(record, vocabulary, record.visits.len())
}

/// Counts over the first `visits` visits only.
pub fn bow_features_prefix(
    record: &PatientRecord,
    vocabulary: &Vocabulary,
    visits: usize,
) -> Result<Vec<f64>, BaselineError> {
    let mut counts = vec![0.0; vocabulary.total()];
    for visit in &record.visits[..visits] {
        let mut tally = |ns: Namespace, codes: &[String]| -> Result<(), BaselineError> {
            for code in codes {
                let index = vocabulary.index_of(ns, code).ok_or_else(|| {
                    BaselineError::UnknownCode { namespace: ns, code: code.clone() }
                })?;
                counts[index] += 1.0;
            }
            Ok(())
        };
        tally(Namespace::Disease, &visit.diseases)?;
        tally(Namespace::Treatment, &visit.treatments)?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BowTrainConfig {
    /// Full-batch gradient steps.
    pub steps: usize,
    pub lr: f64,
    /// L2 penalty strength on the weights (not the bias).
    pub lambda: f64,
}

impl Default for BowTrainConfig {
    fn default() -> Self {
        Self { steps: 1000, lr: 0.05, lambda: 1e-3 }
    }
}

impl BowTrainConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |msg: String| Err(BaselineError::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BowLrModel {
    vocabulary: Vocabulary,
    config: BowTrainConfig,
    weights: Vec<f64>,
    bias: f64,
}

impl BowLrModel {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    /// Pre-logistic score of the full history.
    pub fn score(&self, record: &PatientRecord) -> Result<f64, BaselineError> {
        let x = bow_features(record, &self.vocabulary)?;
        Ok(dot(&self.weights, &x) + self.bias)
    }

    /// Pre-logistic score of the first `visits` visits.
    pub fn score_prefix(&self, record: &PatientRecord, visits: usize) -> Result<f64, BaselineError> {
        let x = bow_features_prefix(record, &self.vocabulary, visits)?;
        Ok(dot(&self.weights, &x) + self.bias)
    }

    pub fn predict_risk(&self, record: &PatientRecord) -> Result<f64, BaselineError> {
        Ok(sigmoid(self.score(record)?))
    }

    /// Mean NLL + (λ/2)‖w‖² over records with labeled final visits.
    pub fn objective(&self, records: &[&PatientRecord]) -> Result<f64, BaselineError> {
        let examples = final_labeled(records);
        if examples.is_empty() {
            return Err(BaselineError::NoLabeledRecords);
        }
        let mut total = 0.0;
        for (record, y) in &examples {
            let s = self.score(record)?;
            total += softplus(s) - if *y { s } else { 0.0 };
        }
        let penalty = 0.5 * self.config.lambda * self.weights.iter().map(|w| w * w).sum::<f64>();
        Ok(total / examples.len() as f64 + penalty)
    }

    pub fn save(&self, writer: impl Write, meta: &ArtifactMeta) -> Result<(), BaselineError> {
        let mut params = crate::diffcore::ParamSet::new();
        params.add(
            "bow.w",
            crate::diffcore::Tensor::vector(self.weights.clone()).map_err(ModelError::from)?,
        );
        params.add(
            "bow.b",
            crate::diffcore::Tensor::vector(vec![self.bias]).map_err(ModelError::from)?,
        );
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            model: "bow_lr".into(),
            seed: meta.seed,
            config_digest: meta.config_digest.clone(),
            config: serde_json::to_value(self.config)
                .map_err(|e| ModelError::FileParse(e.to_string()))?,
            vocabulary: self.vocabulary.clone(),
            parameters: collect_parameters(&params),
        };
        Ok(envelope.write(writer)?)
    }

    pub fn load(reader: impl Read) -> Result<(Self, ArtifactMeta), BaselineError> {
        let envelope = Envelope::read(reader)?;
        Self::from_envelope(envelope)
    }

    pub(crate) fn from_envelope(
        envelope: Envelope,
    ) -> Result<(Self, ArtifactMeta), BaselineError> {
        envelope.expect_kind("bow_lr")?;
        let config: BowTrainConfig = serde_json::from_value(envelope.config.clone())
            .map_err(|e| ModelError::FileParse(format!("config: {e}")))?;
        config.validate()?;
        let mut params = crate::diffcore::ParamSet::new();
        let w = params.add(
            "bow.w",
            crate::diffcore::Tensor::zeros(vec![envelope.vocabulary.total()]),
        );
        let b = params.add("bow.b", crate::diffcore::Tensor::zeros(vec![1]));
        restore_parameters(&mut params, &envelope.parameters)?;
        let model = Self {
            vocabulary: envelope.vocabulary,
            config,
            weights: params.get(w).value.data().to_vec(),
            bias: params.get(b).value.data()[0],
        };
        let meta = ArtifactMeta { seed: envelope.seed, config_digest: envelope.config_digest };
        Ok((model, meta))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Records with a labeled final visit, paired with that label.
fn final_labeled<'a>(records: &[&'a PatientRecord]) -> Vec<(&'a PatientRecord, bool)> {
    records
        .iter()
        .filter_map(|r| r.visits.last().and_then(|v| v.label).map(|y| (*r, y)))
        .collect()
}

/// Train by full-batch gradient descent (Adam steps) from zero
/// initialization on records with labeled final visits.
pub fn train_bow_lr(
    records: &[&PatientRecord],
    vocabulary: &Vocabulary,
    cfg: &BowTrainConfig,
) -> Result<BowLrModel, BaselineError> {
    cfg.validate()?;
    let dim = vocabulary.total();
    fit(records, vocabulary, cfg, vec![0.0; dim], 0.0)
}

/// The full-batch loop, exposed to tests so convexity can be probed from
/// arbitrary starting points.
fn fit(
    records: &[&PatientRecord],
    vocabulary: &Vocabulary,
    cfg: &BowTrainConfig,
    init_weights: Vec<f64>,
    init_bias: f64,
) -> Result<BowLrModel, BaselineError> {
    let examples = final_labeled(records);
    if examples.is_empty() {
        return Err(BaselineError::NoLabeledRecords);
    }
    let features: Vec<Vec<f64>> = examples
        .iter()
        .map(|(r, _)| bow_features(r, vocabulary))
        .collect::<Result<_, _>>()?;
    let labels: Vec<f64> = examples.iter().map(|(_, y)| *y as u8 as f64).collect();

    let dim = vocabulary.total();
    let mut params = crate::diffcore::ParamSet::new();
    let w_id = params.add(
        "bow.w",
        crate::diffcore::Tensor::vector(init_weights).map_err(ModelError::from)?,
    );
    let b_id = params.add(
        "bow.b",
        crate::diffcore::Tensor::vector(vec![init_bias]).map_err(ModelError::from)?,
    );
    let mut adam = AdamState::with_lr(&params, cfg.lr);

    let n = features.len() as f64;
    for _ in 0..cfg.steps {
        // Hand gradient of mean NLL + (λ/2)‖w‖²: residuals are σ(s)−y.
        let w = params.get(w_id).value.data().to_vec();
        let b = params.get(b_id).value.data()[0];
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for (x, &y) in features.iter().zip(&labels) {
            let residual = sigmoid(dot(&w, x) + b) - y;
            for (g, xi) in grad_w.iter_mut().zip(x) {
                *g += residual * xi;
            }
            grad_b += residual;
        }
        for (g, wi) in grad_w.iter_mut().zip(&w) {
            *g = *g / n + cfg.lambda * wi;
        }
        grad_b /= n;

        params.zero_grads();
        params.get_mut(w_id).grad.data_mut().copy_from_slice(&grad_w);
        params.get_mut(b_id).grad.data_mut()[0] = grad_b;
        adam.step(&mut params)?;
    }

    Ok(BowLrModel {
        vocabulary: vocabulary.clone(),
        config: *cfg,
        weights: params.get(w_id).value.data().to_vec(),
        bias: params.get(b_id).value.data()[0],
    })
}
