//! The end-to-end risk model: code embeddings → visit vectors → LSTM →
//! prefix pooling → feedforward classifier, with a numerically stable
//! negative log-likelihood, exact gradients, and versioned JSON
//! serialization shared by the baseline models.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::diffcore::{
    grad_check, sigmoid, DiffError, GradCheckConfig, GradCheckReport, NodeId, ParamId, ParamSet,
    Tape, Tensor,
};
use crate::data::PatientRecord;
use crate::embedding::{
    embed_bag, visit_vector, CodeBag, EmbedError, EmbeddingTable, Interaction, Namespace,
    Vocabulary,
};
use crate::recurrent::{
    apply_regularizer, pool, unroll, zero_state, LstmParams, PoolingConfig, RegularizerConfig,
    RegularizerKind,
};
use crate::rng;

/// Current on-disk model format.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    Embed(#[from] EmbedError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unknown {namespace} code {code:?}: not in the model vocabulary")]
    UnknownCode { namespace: Namespace, code: String },

    #[error("record {patient_id:?} has no visits")]
    EmptyRecord { patient_id: String },

    #[error("loss requires a nonempty batch")]
    EmptyBatch,

    #[error("degenerate batch: no labeled visits to learn from")]
    NoLabeledVisits,

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("backward called without a preceding loss on this model")]
    BackwardWithoutLoss,

    #[error("model file is not readable as JSON: {0}")]
    FileParse(String),

    #[error("model file format_version {found} is unsupported (expected {FORMAT_VERSION})")]
    FileVersion { found: u64 },

    #[error("model file holds a {found:?} model, expected {expected:?}")]
    FileKind { found: String, expected: String },

    #[error("model file parameters are inconsistent: {0}")]
    FileParameters(String),
}

/// The two shipped variants: MDMT is the plain sequence model; MDMTP adds
/// the norm-stabilizer penalty on the state trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mdmt,
    #[default]
    Mdmtp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding dimension m.
    pub embedding_dim: usize,
    /// LSTM state dimension H.
    pub hidden_dim: usize,
    /// Soft-normalization constant of the set function.
    pub epsilon: f64,
    pub interaction: Interaction,
    pub pooling: PoolingConfig,
    /// 0 = linear readout; 1 = one tanh hidden layer of size H.
    pub classifier_depth: u8,
    pub regularizer: RegularizerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Mdmtp)
    }
}

impl ModelConfig {
    /// Defaults for a variant, with the regularizer wired consistently.
    pub fn for_variant(variant: Variant) -> Self {
        let regularizer = match variant {
            Variant::Mdmt => RegularizerConfig { kind: RegularizerKind::None, beta: 0.0 },
            Variant::Mdmtp => {
                RegularizerConfig { kind: RegularizerKind::NormStabilizer, beta: 0.01 }
            }
        };
        Self {
            variant,
            embedding_dim: 32,
            hidden_dim: 32,
            epsilon: 0.001,
            interaction: Interaction::default(),
            pooling: PoolingConfig::default(),
            classifier_depth: 1,
            regularizer,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return bad("embedding_dim and hidden_dim must be positive".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.classifier_depth > 1 {
            return bad(format!("classifier_depth must be 0 or 1, got {}", self.classifier_depth));
        }
        self.pooling.validate().or_else(|e| bad(e))?;
        self.regularizer.validate().or_else(|e| bad(e))?;
        match self.variant {
            Variant::Mdmt => {
                if self.regularizer.kind != RegularizerKind::None {
                    return bad("variant mdmt requires regularizer kind \"none\"".into());
                }
            }
            Variant::Mdmtp => {
                if self.regularizer.kind != RegularizerKind::NormStabilizer {
                    return bad("variant mdmtp requires regularizer kind \"norm_stabilizer\"".into());
                }
                if self.regularizer.beta <= 0.0 {
                    return bad(format!(
                        "variant mdmtp requires beta > 0, got {}",
                        self.regularizer.beta
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Classifier {
    Linear { w: ParamId, b: ParamId },
    OneHidden { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

/// The parameter ids of every block; values live in the ParamSet.
#[derive(Debug, Clone)]
struct Architecture {
    embedding: EmbeddingTable,
    lstm: LstmParams,
    classifier: Classifier,
}

/// Per-visit readmission probabilities for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub per_visit: Vec<f64>,
}

/// Forward outputs kept for tracing: probabilities plus the state sequence.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub prediction: Prediction,
    /// h_t values, one vector of length H per visit.
    pub states: Vec<Vec<f64>>,
}

/// Provenance stamped into every serialized artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub seed: u64,
    pub config_digest: String,
}

/// The shared on-disk envelope for all model kinds.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Envelope {
    pub format_version: u32,
    /// Discriminator: "risk", "bow_lr", or "deepr_mini".
    pub model: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub vocabulary: Vocabulary,
    pub parameters: BTreeMap<String, Vec<f64>>,
}

impl Envelope {
    pub(crate) fn read(mut reader: impl Read) -> Result<Self, ModelError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ModelError::FileParse(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::FileParse("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(ModelError::FileVersion { found: version });
        }
        serde_json::from_value(value).map_err(|e| ModelError::FileParse(e.to_string()))
    }

    pub(crate) fn write(&self, mut writer: impl Write) -> Result<(), ModelError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| ModelError::FileParse(e.to_string()))?;
        writer.write_all(text.as_bytes())?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub(crate) fn expect_kind(&self, expected: &str) -> Result<(), ModelError> {
        if self.model != expected {
            return Err(ModelError::FileKind {
                found: self.model.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }
}

/// Copy named parameter values from an envelope into a freshly initialized
/// ParamSet, demanding an exact name/shape match in both directions.
pub(crate) fn restore_parameters(
    params: &mut ParamSet,
    saved: &BTreeMap<String, Vec<f64>>,
) -> Result<(), ModelError> {
    let ids: Vec<ParamId> = params.ids().collect();
    if ids.len() != saved.len() {
        return Err(ModelError::FileParameters(format!(
            "expected {} parameter arrays, file has {}",
            ids.len(),
            saved.len()
        )));
    }
    for id in ids {
        let p = params.get_mut(id);
        let name = p.name.clone();
        let data = saved
            .get(&name)
            .ok_or_else(|| ModelError::FileParameters(format!("missing parameter {name:?}")))?;
        if data.len() != p.value.len() {
            return Err(ModelError::FileParameters(format!(
                "parameter {name:?} has {} values, expected {}",
                data.len(),
                p.value.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::FileParameters(format!(
                "parameter {name:?} contains non-finite values"
            )));
        }
        p.value.data_mut().copy_from_slice(data);
    }
    Ok(())
}

pub(crate) fn collect_parameters(params: &ParamSet) -> BTreeMap<String, Vec<f64>> {
    params
        .ids()
        .map(|id| {
            let p = params.get(id);
            (p.name.clone(), p.value.data().to_vec())
        })
        .collect()
}

/// The assembled MDMT/MDMTP model.
#[derive(Debug, Clone)]
pub struct RiskModel {
    config: ModelConfig,
    vocabulary: Vocabulary,
    params: ParamSet,
    arch: Architecture,
    pending: Option<(Tape, NodeId)>,
}

impl RiskModel {
    pub fn new(config: ModelConfig, vocabulary: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embedding = EmbeddingTable::init(&mut params, &vocabulary, config.embedding_dim, seed);
        let lstm = LstmParams::init(&mut params, config.embedding_dim, config.hidden_dim, seed);
        let classifier = init_classifier(&mut params, config.hidden_dim, config.classifier_depth, seed);
        Ok(Self {
            config,
            vocabulary,
            params,
            arch: Architecture { embedding, lstm, classifier },
            pending: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Read access to the embedding table (for export and similarity).
    pub fn embedding(&self) -> &EmbeddingTable {
        &self.arch.embedding
    }

    /// Per-visit probabilities and hidden states for one record.
    pub fn forward(&self, record: &PatientRecord) -> Result<ForwardTrace, ModelError> {
        let mut tape = Tape::new();
        let scored = record_scores(
            &mut tape,
            &self.params,
            &self.arch,
            &self.config,
            &self.vocabulary,
            record,
        )?;
        let per_visit = scored
            .scores
            .iter()
            .map(|&s| clamp_probability(sigmoid(tape.value(s).as_scalar().expect("scalar score"))))
            .collect();
        let states = scored
            .states
            .iter()
            .map(|&h| tape.value(h).data().to_vec())
            .collect();
        Ok(ForwardTrace { prediction: Prediction { per_visit }, states })
    }

    /// Final-visit readmission probability.
    pub fn predict_risk(&self, record: &PatientRecord) -> Result<f64, ModelError> {
        let trace = self.forward(record)?;
        Ok(*trace.prediction.per_visit.last().expect("nonempty record"))
    }

    /// Per-visit pre-logistic scores. Ranking metrics and likelihoods work
    /// on these directly: they are monotone in the probabilities but never
    /// saturate.
    pub fn scores(&self, record: &PatientRecord) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let scored = record_scores(
            &mut tape,
            &self.params,
            &self.arch,
            &self.config,
            &self.vocabulary,
            record,
        )?;
        Ok(scored
            .scores
            .iter()
            .map(|&s| tape.value(s).as_scalar().expect("scalar score"))
            .collect())
    }

    /// Mean NLL over labeled visits plus the variant's regularizer, leaving
    /// the computation graph pending for [`RiskModel::backward`].
    pub fn loss(&mut self, batch: &[&PatientRecord]) -> Result<f64, ModelError> {
        let (tape, root) = self.loss_tape(batch)?;
        let value = tape.value(root).as_scalar()?;
        self.pending = Some((tape, root));
        Ok(value)
    }

    /// Accumulate gradients of the most recent loss into the parameter set.
    /// Gradients add to whatever the buffers hold; zero them first for a
    /// fresh gradient.
    pub fn backward(&mut self) -> Result<(), ModelError> {
        let (mut tape, root) = self.pending.take().ok_or(ModelError::BackwardWithoutLoss)?;
        tape.backward(root, &mut self.params)?;
        Ok(())
    }

    /// Build the loss graph without touching model state; used by `loss`
    /// and by gradient checking.
    pub fn loss_tape(&self, batch: &[&PatientRecord]) -> Result<(Tape, NodeId), ModelError> {
        build_loss(&self.params, &self.arch, &self.config, &self.vocabulary, batch)
    }

    /// Verify the full-model gradient against central differences.
    pub fn grad_check(
        &mut self,
        batch: &[&PatientRecord],
        cfg: &GradCheckConfig,
    ) -> Result<GradCheckReport, ModelError> {
        let mut params = std::mem::take(&mut self.params);
        let result = grad_check(&mut params, cfg, |ps| {
            build_loss(ps, &self.arch, &self.config, &self.vocabulary, batch)
                .map_err(model_to_diff)
        });
        self.params = params;
        Ok(result?)
    }

    pub fn save(&self, writer: impl Write, meta: &ArtifactMeta) -> Result<(), ModelError> {
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            model: "risk".into(),
            seed: meta.seed,
            config_digest: meta.config_digest.clone(),
            config: serde_json::to_value(&self.config)
                .map_err(|e| ModelError::FileParse(e.to_string()))?,
            vocabulary: self.vocabulary.clone(),
            parameters: collect_parameters(&self.params),
        };
        envelope.write(writer)
    }

    pub fn load(reader: impl Read) -> Result<(Self, ArtifactMeta), ModelError> {
        let envelope = Envelope::read(reader)?;
        Self::from_envelope(envelope)
    }

    pub(crate) fn from_envelope(envelope: Envelope) -> Result<(Self, ArtifactMeta), ModelError> {
        envelope.expect_kind("risk")?;
        let config: ModelConfig = serde_json::from_value(envelope.config.clone())
            .map_err(|e| ModelError::FileParse(format!("config: {e}")))?;
        let mut model = Self::new(config, envelope.vocabulary.clone(), 0)?;
        restore_parameters(&mut model.params, &envelope.parameters)?;
        let meta = ArtifactMeta { seed: envelope.seed, config_digest: envelope.config_digest };
        Ok((model, meta))
    }
}

fn model_to_diff(e: ModelError) -> DiffError {
    match e {
        ModelError::Diff(d) => d,
        ModelError::Embed(EmbedError::Diff(d)) => d,
        other => DiffError::Protocol(other.to_string()),
    }
}

/// Keep reported probabilities strictly inside (0,1) even when extreme
/// scores round the logistic to an endpoint in f64. Training never reads
/// these values (the loss works on pre-logistic scores), so this only
/// affects reporting.
fn clamp_probability(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn init_classifier(params: &mut ParamSet, hidden: usize, depth: u8, seed: u64) -> Classifier {
    use rand::Rng;
    let mut r = rng::derive_rng(seed, rng::purpose::PARAM_INIT, 2);
    let h = hidden;
    let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
        (0..n).map(|_| r.random_range(-bound..=bound)).collect()
    };
    match depth {
        0 => {
            let bound = (6.0 / (h + 1) as f64).sqrt();
            let w = params.add("classifier.w", Tensor::vector(uniform(h, bound)).expect("finite"));
            let b = params.add("classifier.b", Tensor::zeros(vec![1]));
            Classifier::Linear { w, b }
        }
        _ => {
            let bound1 = (6.0 / (2 * h) as f64).sqrt();
            let data = uniform(h * h, bound1);
            let w1 = params.add("classifier.w1", Tensor::matrix(h, h, data).expect("finite"));
            let b1 = params.add("classifier.b1", Tensor::zeros(vec![h]));
            let bound2 = (6.0 / (h + 1) as f64).sqrt();
            let w2 = params.add("classifier.w2", Tensor::vector(uniform(h, bound2)).expect("finite"));
            let b2 = params.add("classifier.b2", Tensor::zeros(vec![1]));
            Classifier::OneHidden { w1, b1, w2, b2 }
        }
    }
}

fn classifier_score(
    tape: &mut Tape,
    params: &ParamSet,
    classifier: &Classifier,
    pooled: NodeId,
) -> Result<NodeId, DiffError> {
    match classifier {
        Classifier::Linear { w, b } => {
            let wn = tape.param(params, *w)?;
            let bn = tape.param(params, *b)?;
            let s = tape.dot(wn, pooled)?;
            tape.add(s, bn)
        }
        Classifier::OneHidden { w1, b1, w2, b2 } => {
            let w1n = tape.param(params, *w1)?;
            let b1n = tape.param(params, *b1)?;
            let pre = tape.matvec(w1n, pooled)?;
            let pre = tape.add(pre, b1n)?;
            let hidden = tape.apply(crate::diffcore::Activation::Tanh, pre)?;
            let w2n = tape.param(params, *w2)?;
            let b2n = tape.param(params, *b2)?;
            let s = tape.dot(w2n, hidden)?;
            tape.add(s, b2n)
        }
    }
}

struct RecordScores {
    /// Scalar pre-logistic score node per visit.
    scores: Vec<NodeId>,
    /// Hidden state node per visit.
    states: Vec<NodeId>,
}

/// Look up a record's code bags against the vocabulary.
fn record_bags(
    vocabulary: &Vocabulary,
    record: &PatientRecord,
) -> Result<Vec<(CodeBag, CodeBag)>, ModelError> {
    record
        .visits
        .iter()
        .map(|visit| {
            let lookup = |ns: Namespace, codes: &[String]| -> Result<CodeBag, ModelError> {
                let indices = codes
                    .iter()
                    .map(|code| {
                        vocabulary.index_of(ns, code).ok_or_else(|| ModelError::UnknownCode {
                            namespace: ns,
                            code: code.clone(),
                        })
                    })
                    .collect::<Result<Vec<usize>, _>>()?;
                Ok(CodeBag::new(indices))
            };
            Ok((
                lookup(Namespace::Disease, &visit.diseases)?,
                lookup(Namespace::Treatment, &visit.treatments)?,
            ))
        })
        .collect()
}

/// Build one record's visit scores: embed each visit's bags, run the LSTM,
/// pool each prefix h_1..h_t, and score the pooled vector. The prediction
/// at visit t therefore sees only history up to t.
fn record_scores(
    tape: &mut Tape,
    params: &ParamSet,
    arch: &Architecture,
    config: &ModelConfig,
    vocabulary: &Vocabulary,
    record: &PatientRecord,
) -> Result<RecordScores, ModelError> {
    if record.visits.is_empty() {
        return Err(ModelError::EmptyRecord { patient_id: record.patient_id.clone() });
    }
    let bags = record_bags(vocabulary, record)?;
    let mut inputs = Vec::with_capacity(bags.len());
    for (diseases, treatments) in &bags {
        let d = embed_bag(tape, params, &arch.embedding, diseases, config.epsilon)?;
        let p = embed_bag(tape, params, &arch.embedding, treatments, config.epsilon)?;
        inputs.push(visit_vector(tape, d, p, config.interaction)?);
    }
    let initial = zero_state(tape, config.hidden_dim)?;
    let states = unroll(tape, params, &arch.lstm, &inputs, &initial)?;
    let hs: Vec<NodeId> = states.iter().map(|s| s.h).collect();
    let mut scores = Vec::with_capacity(hs.len());
    for t in 0..hs.len() {
        let pooled = pool(tape, &hs[..=t], &config.pooling)?;
        scores.push(classifier_score(tape, params, &arch.classifier, pooled)?);
    }
    Ok(RecordScores { scores, states: hs })
}

fn build_loss(
    params: &ParamSet,
    arch: &Architecture,
    config: &ModelConfig,
    vocabulary: &Vocabulary,
    batch: &[&PatientRecord],
) -> Result<(Tape, NodeId), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let mut nll_terms = Vec::new();
    let mut reg_terms = Vec::new();
    for record in batch {
        let scored = record_scores(&mut tape, params, arch, config, vocabulary, record)?;
        for (visit, &score) in record.visits.iter().zip(&scored.scores) {
            if let Some(label) = visit.label {
                nll_terms.push(tape.bce_from_score(score, label as u8 as f64)?);
            }
        }
        if config.regularizer.kind != RegularizerKind::None {
            reg_terms.push(apply_regularizer(&mut tape, &scored.states, &config.regularizer)?);
        }
    }
    if nll_terms.is_empty() {
        return Err(ModelError::NoLabeledVisits);
    }
    let nll_sum = tape.sum(&nll_terms)?;
    let mut root = tape.scale(nll_sum, 1.0 / nll_terms.len() as f64)?;
    if !reg_terms.is_empty() {
        let reg_sum = tape.sum(&reg_terms)?;
        let reg_mean = tape.scale(reg_sum, 1.0 / batch.len() as f64)?;
        root = tape.add(root, reg_mean)?;
    }
    Ok((tape, root))
}

/// One case of the exhaustive gradient-check suite.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    /// "variant/pooling/interaction", in config-file spelling.
    pub label: String,
    pub report: GradCheckReport,
}

/// Gradient-check a small model across every pooling kind, both variants,
/// and both bounded interaction nonlinearities, on a fixed batch of three
/// short synthetic records. The workhorse behind the `gradcheck` command.
pub fn gradcheck_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<SuiteCase>, ModelError> {
    use crate::recurrent::{PoolKind, PoolingConfig};

    let vocabulary = Vocabulary::new(
        (0..12).map(|i| format!("D{i:03}")),
        (0..20).map(|i| format!("T{i:03}")),
    );
    let records = suite_records(&vocabulary, seed);
    let batch: Vec<&PatientRecord> = records.iter().collect();

    let mut cases = Vec::new();
    for variant in [Variant::Mdmt, Variant::Mdmtp] {
        for pooling in [PoolKind::Mean, PoolKind::Last, PoolKind::Expsmooth] {
            for interaction in [Interaction::SquareShift, Interaction::Tanh] {
                let config = ModelConfig {
                    embedding_dim: 8,
                    hidden_dim: 8,
                    interaction,
                    pooling: PoolingConfig { kind: pooling, alpha: 0.5 },
                    ..ModelConfig::for_variant(variant)
                };
                let mut model = RiskModel::new(config, vocabulary.clone(), seed)?;
                let report = model.grad_check(&batch, cfg)?;
                cases.push(SuiteCase {
                    label: format!(
                        "{}/{}/{}",
                        config_name(&variant),
                        config_name(&pooling),
                        config_name(&interaction)
                    ),
                    report,
                });
            }
        }
    }
    Ok(cases)
}

/// The config-file spelling of a unit enum value (e.g. "square_shift").
fn config_name<T: serde::Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "unknown".to_string(),
    }
}

/// Three short records over the suite vocabulary, deterministic in `seed`.
fn suite_records(vocabulary: &Vocabulary, seed: u64) -> Vec<PatientRecord> {
    use rand::Rng;
    let mut r = rng::derive_rng(seed, rng::purpose::GRADCHECK, 0);
    let diseases = vocabulary.codes(Namespace::Disease);
    let treatments = vocabulary.codes(Namespace::Treatment);
    (0..3)
        .map(|p| {
            let visits = (0..r.random_range(2..=4usize))
                .map(|t| {
                    let nd = r.random_range(1..=3usize);
                    let nt = r.random_range(0..=2usize);
                    crate::data::Visit {
                        time: 30 * t as i64,
                        diseases: (0..nd)
                            .map(|_| diseases[r.random_range(0..diseases.len())].clone())
                            .collect(),
                        treatments: (0..nt)
                            .map(|_| treatments[r.random_range(0..treatments.len())].clone())
                            .collect(),
                        unplanned: false,
                        label: Some(r.random_bool(0.5)),
                    }
                })
                .collect();
            PatientRecord { patient_id: format!("g{p}"), visits }
        })
        .collect()
}
