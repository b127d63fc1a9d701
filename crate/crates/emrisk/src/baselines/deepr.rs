//! A miniature convolutional sequence classifier: visits are flattened to
//! one token sequence (intra-visit order randomized), embedded, convolved
//! with rectified filters, max-pooled over time, and read out by a
//! logistic unit.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::data::PatientRecord;
use crate::diffcore::{
    grad_check, sigmoid, Activation, DiffError, GradCheckConfig, GradCheckReport, NodeId, ParamId,
    ParamSet, Tape, Tensor,
};
use crate::embedding::{Namespace, Vocabulary};
use crate::model::{
    collect_parameters, restore_parameters, ArtifactMeta, Envelope, ModelError, FORMAT_VERSION,
};
use crate::optim::{clip_gradients, AdamState, TrainConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeeprConfig {
    pub embedding_dim: usize,
    /// Number of convolution filters.
    pub filters: usize,
    /// Filter width in tokens.
    pub width: usize,
    /// Seed fixing the intra-visit token order at evaluation time.
    pub sequence_seed: u64,
}

impl Default for DeeprConfig {
    fn default() -> Self {
        Self { embedding_dim: 32, filters: 16, width: 3, sequence_seed: 0 }
    }
}

impl DeeprConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.embedding_dim == 0 || self.filters == 0 || self.width == 0 {
            return Err(BaselineError::InvalidConfig(
                "embedding_dim, filters, and width must all be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DeeprArch {
    /// One row per vocabulary entry plus a trailing pad row.
    rows: Vec<ParamId>,
    filters: ParamId,
    filter_bias: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct DeeprMiniModel {
    config: DeeprConfig,
    vocabulary: Vocabulary,
    params: ParamSet,
    arch: DeeprArch,
}

/// Flatten a record into vocabulary indices: visits in temporal order,
/// tokens within each visit shuffled by a stream derived from
/// `(seed, patient_id, visit index)`.
pub fn deepr_sequence(
    record: &PatientRecord,
    vocabulary: &Vocabulary,
    seed: u64,
) -> Result<Vec<usize>, BaselineError> {
    deepr_sequence_prefix(record, vocabulary, seed, record.visits.len())
}

/// The sequence of the first `visits` visits only. Token draws depend only
/// on `(seed, patient_id, visit index)`, so a prefix sequence is a literal
/// prefix of the full sequence.
pub fn deepr_sequence_prefix(
    record: &PatientRecord,
    vocabulary: &Vocabulary,
    seed: u64,
    visits: usize,
) -> Result<Vec<usize>, BaselineError> {
    let patient_seed =
        rng::derive_seed(seed, rng::purpose::DEEPR_SEQUENCE, rng::hash_str(&record.patient_id));
    let mut tokens = Vec::new();
    for (t, visit) in record.visits[..visits].iter().enumerate() {
        let mut visit_tokens = Vec::with_capacity(visit.diseases.len() + visit.treatments.len());
        let mut push = |ns: Namespace, codes: &[String]| -> Result<(), BaselineError> {
            for code in codes {
                let index = vocabulary.index_of(ns, code).ok_or_else(|| {
                    BaselineError::UnknownCode { namespace: ns, code: code.clone() }
                })?;
                visit_tokens.push(index);
            }
            Ok(())
        };
        push(Namespace::Disease, &visit.diseases)?;
        push(Namespace::Treatment, &visit.treatments)?;
        let mut r = rng::derive_rng(patient_seed, rng::purpose::DEEPR_SEQUENCE, t as u64);
        visit_tokens.shuffle(&mut r);
        tokens.extend(visit_tokens);
    }
    Ok(tokens)
}

impl DeeprMiniModel {
    pub fn new(
        config: DeeprConfig,
        vocabulary: Vocabulary,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        use rand::Rng;
        config.validate()?;
        let mut params = ParamSet::new();
        let m = config.embedding_dim;
        let mut r = rng::derive_rng(seed, rng::purpose::PARAM_INIT, 3);

        let mut rows = Vec::with_capacity(vocabulary.total() + 1);
        for i in 0..=vocabulary.total() {
            let name = if i == vocabulary.total() {
                "deepr.embedding.pad".to_string()
            } else {
                format!("deepr.embedding.row{i}")
            };
            let data: Vec<f64> = (0..m).map(|_| r.random_range(-0.1..=0.1)).collect();
            rows.push(params.add(name, Tensor::vector(data).map_err(ModelError::from)?));
        }

        let window = config.width * m;
        let bound = (6.0 / (window + config.filters) as f64).sqrt();
        let data: Vec<f64> = (0..config.filters * window)
            .map(|_| r.random_range(-bound..=bound))
            .collect();
        let filters = params.add(
            "deepr.filters",
            Tensor::matrix(config.filters, window, data).map_err(ModelError::from)?,
        );
        let filter_bias = params.add("deepr.filter_bias", Tensor::zeros(vec![config.filters]));
        let bound = (6.0 / (config.filters + 1) as f64).sqrt();
        let data: Vec<f64> =
            (0..config.filters).map(|_| r.random_range(-bound..=bound)).collect();
        let out_w =
            params.add("deepr.out.w", Tensor::vector(data).map_err(ModelError::from)?);
        let out_b = params.add("deepr.out.b", Tensor::zeros(vec![1]));

        Ok(Self {
            config,
            vocabulary,
            params,
            arch: DeeprArch { rows, filters, filter_bias, out_w, out_b },
        })
    }

    pub fn config(&self) -> &DeeprConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Index of the reserved pad token (one past the vocabulary).
    pub fn pad_index(&self) -> usize {
        self.vocabulary.total()
    }

    /// Pre-logistic score of an explicit token sequence.
    pub fn score_tokens(&self, tokens: &[usize]) -> Result<f64, BaselineError> {
        let mut tape = Tape::new();
        let node = build_score(&mut tape, &self.params, &self.arch, &self.config, tokens)?;
        Ok(tape.value(node).as_scalar().map_err(ModelError::from)?)
    }

    /// Pre-logistic score of the full history, sequenced with the fixed
    /// evaluation seed.
    pub fn score(&self, record: &PatientRecord) -> Result<f64, BaselineError> {
        let tokens = deepr_sequence(record, &self.vocabulary, self.config.sequence_seed)?;
        self.score_tokens(&tokens)
    }

    /// Score of the first `visits` visits.
    pub fn score_prefix(&self, record: &PatientRecord, visits: usize) -> Result<f64, BaselineError> {
        let tokens =
            deepr_sequence_prefix(record, &self.vocabulary, self.config.sequence_seed, visits)?;
        self.score_tokens(&tokens)
    }

    pub fn predict_risk(&self, record: &PatientRecord) -> Result<f64, BaselineError> {
        Ok(sigmoid(self.score(record)?))
    }

    /// Verify gradients of a small training loss against central
    /// differences.
    pub fn grad_check(
        &mut self,
        sequences: &[(Vec<usize>, bool)],
        cfg: &GradCheckConfig,
    ) -> Result<GradCheckReport, BaselineError> {
        let mut params = std::mem::take(&mut self.params);
        let result = grad_check(&mut params, cfg, |ps| {
            build_loss(ps, &self.arch, &self.config, sequences).map_err(|e| match e {
                BaselineError::Diff(d) => d,
                other => DiffError::Protocol(other.to_string()),
            })
        });
        self.params = params;
        Ok(result.map_err(ModelError::from)?)
    }

    pub fn save(&self, writer: impl Write, meta: &ArtifactMeta) -> Result<(), BaselineError> {
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            model: "deepr_mini".into(),
            seed: meta.seed,
            config_digest: meta.config_digest.clone(),
            config: serde_json::to_value(self.config)
                .map_err(|e| ModelError::FileParse(e.to_string()))?,
            vocabulary: self.vocabulary.clone(),
            parameters: collect_parameters(&self.params),
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
        envelope.expect_kind("deepr_mini")?;
        let config: DeeprConfig = serde_json::from_value(envelope.config.clone())
            .map_err(|e| ModelError::FileParse(format!("config: {e}")))?;
        let mut model = Self::new(config, envelope.vocabulary.clone(), 0)?;
        restore_parameters(&mut model.params, &envelope.parameters)?;
        let meta = ArtifactMeta { seed: envelope.seed, config_digest: envelope.config_digest };
        Ok((model, meta))
    }
}

/// Embed, convolve at every valid position, rectify, max-pool over time,
/// and read out a scalar score. Sequences shorter than the filter width
/// are right-padded with the reserved pad token.
fn build_score(
    tape: &mut Tape,
    params: &ParamSet,
    arch: &DeeprArch,
    config: &DeeprConfig,
    tokens: &[usize],
) -> Result<NodeId, BaselineError> {
    for &t in tokens {
        if t >= arch.rows.len() {
            return Err(BaselineError::InvalidConfig(format!(
                "token index {t} exceeds the embedding table ({} rows)",
                arch.rows.len()
            )));
        }
    }
    let pad = arch.rows.len() - 1;
    let mut padded = tokens.to_vec();
    while padded.len() < config.width {
        padded.push(pad);
    }

    let embedded: Vec<NodeId> = padded
        .iter()
        .map(|&t| tape.param(params, arch.rows[t]))
        .collect::<Result<_, _>>()
        .map_err(ModelError::from)?;
    let filters = tape.param(params, arch.filters).map_err(ModelError::from)?;
    let filter_bias = tape.param(params, arch.filter_bias).map_err(ModelError::from)?;

    let mut positions = Vec::with_capacity(padded.len() - config.width + 1);
    for p in 0..=padded.len() - config.width {
        let window = tape.concat(&embedded[p..p + config.width]).map_err(ModelError::from)?;
        let pre = tape.matvec(filters, window).map_err(ModelError::from)?;
        let pre = tape.add(pre, filter_bias).map_err(ModelError::from)?;
        positions.push(tape.apply(Activation::Rectifier, pre).map_err(ModelError::from)?);
    }
    let pooled = tape.max(&positions).map_err(ModelError::from)?;
    let out_w = tape.param(params, arch.out_w).map_err(ModelError::from)?;
    let out_b = tape.param(params, arch.out_b).map_err(ModelError::from)?;
    let s = tape.dot(out_w, pooled).map_err(ModelError::from)?;
    Ok(tape.add(s, out_b).map_err(ModelError::from)?)
}

/// Mean BCE over `(tokens, label)` pairs.
fn build_loss(
    params: &ParamSet,
    arch: &DeeprArch,
    config: &DeeprConfig,
    sequences: &[(Vec<usize>, bool)],
) -> Result<(Tape, NodeId), BaselineError> {
    if sequences.is_empty() {
        return Err(BaselineError::NoLabeledRecords);
    }
    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(sequences.len());
    for (tokens, label) in sequences {
        let s = build_score(&mut tape, params, arch, config, tokens)?;
        terms.push(tape.bce_from_score(s, *label as u8 as f64).map_err(ModelError::from)?);
    }
    let total = tape.sum(&terms).map_err(ModelError::from)?;
    let mean = tape.scale(total, 1.0 / terms.len() as f64).map_err(ModelError::from)?;
    Ok((tape, mean))
}

/// Minibatch training on final-visit labels. Intra-visit token order is
/// re-drawn every epoch from `(cfg.seed, epoch)`; evaluation order stays
/// fixed at the model's `sequence_seed`. Returns per-epoch mean losses.
pub fn train_deepr(
    model: &mut DeeprMiniModel,
    records: &[&PatientRecord],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, BaselineError> {
    cfg.validate()?;
    let labeled: Vec<(&PatientRecord, bool)> = records
        .iter()
        .filter_map(|r| r.visits.last().and_then(|v| v.label).map(|y| (*r, y)))
        .collect();
    if labeled.is_empty() {
        return Err(BaselineError::NoLabeledRecords);
    }

    let mut adam = AdamState::with_lr(&model.params, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let epoch_seed = rng::derive_seed(cfg.seed, rng::purpose::DEEPR_SEQUENCE, epoch as u64);
        let sequences: Vec<(Vec<usize>, bool)> = labeled
            .iter()
            .map(|(r, y)| Ok((deepr_sequence(r, &model.vocabulary, epoch_seed)?, *y)))
            .collect::<Result<_, BaselineError>>()?;

        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut shuffle_rng = rng::derive_rng(cfg.seed, rng::purpose::EPOCH_SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(Vec<usize>, bool)> =
                chunk.iter().map(|&i| sequences[i].clone()).collect();
            let (mut tape, root) = build_loss(&model.params, &model.arch, &model.config, &batch)?;
            loss_sum += tape.value(root).as_scalar().map_err(ModelError::from)?;
            model.params.zero_grads();
            tape.backward(root, &mut model.params).map_err(ModelError::from)?;
            clip_gradients(&mut model.params, cfg.clip);
            adam.step(&mut model.params)?;
            batches += 1;
        }
        history.push(loss_sum / batches as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Visit;

    fn visit(diseases: &[&str], treatments: &[&str], t: i64, label: Option<bool>) -> Visit {
        Visit {
            time: t,
            diseases: diseases.iter().map(|s| s.to_string()).collect(),
            treatments: treatments.iter().map(|s| s.to_string()).collect(),
            unplanned: false,
            label,
        }
    }

    fn record(id: &str, visits: Vec<Visit>) -> PatientRecord {
        PatientRecord { patient_id: id.into(), visits }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(["E11", "F32", "I10"], ["P1", "P2"])
    }

    fn two_visit_record() -> PatientRecord {
        record(
            "p1",
            vec![
                visit(&["E11", "F32"], &["P1"], 0, Some(false)),
                visit(&["I10"], &["P1", "P2"], 30, Some(true)),
            ],
        )
    }

    #[test]
    fn sequence_concatenates_visits_in_order() {
        let v = vocab();
        let r = two_visit_record();
        let tokens = deepr_sequence(&r, &v, 7).unwrap();
        assert_eq!(tokens.len(), 6);

        // First visit's tokens (as a set) occupy the first positions.
        let first: Vec<usize> = vec![
            v.index_of(Namespace::Disease, "E11").unwrap(),
            v.index_of(Namespace::Disease, "F32").unwrap(),
            v.index_of(Namespace::Treatment, "P1").unwrap(),
        ];
        let mut head = tokens[..3].to_vec();
        head.sort_unstable();
        let mut expected = first;
        expected.sort_unstable();
        assert_eq!(head, expected);

        // A prefix sequence is a literal prefix of the full sequence.
        let prefix = deepr_sequence_prefix(&r, &v, 7, 1).unwrap();
        assert_eq!(prefix, tokens[..3]);
    }

    #[test]
    fn different_seeds_permute_within_visits_only() {
        let v = vocab();
        let r = two_visit_record();
        let a = deepr_sequence(&r, &v, 1).unwrap();
        let b = deepr_sequence(&r, &v, 2).unwrap();
        let sorted = |s: &[usize]| {
            let mut s = s.to_vec();
            s.sort_unstable();
            s
        };
        assert_eq!(sorted(&a[..3]), sorted(&b[..3]));
        assert_eq!(sorted(&a[3..]), sorted(&b[3..]));
    }

    #[test]
    fn unknown_code_is_reported() {
        let v = vocab();
        let r = record("x", vec![visit(&["??"], &[], 0, None)]);
        assert!(matches!(
            deepr_sequence(&r, &v, 0).unwrap_err(),
            BaselineError::UnknownCode { .. }
        ));
    }

    #[test]
    fn zero_output_layer_predicts_half() {
        let mut model = DeeprMiniModel::new(DeeprConfig::default(), vocab(), 3).unwrap();
        for id in model.params.ids().collect::<Vec<_>>() {
            let p = model.params.get_mut(id);
            if p.name.starts_with("deepr.out.") {
                p.value.data_mut().fill(0.0);
            }
        }
        assert_eq!(model.predict_risk(&two_visit_record()).unwrap(), 0.5);
    }

    #[test]
    fn hand_convolution_example() {
        // One width-1 scalar filter of weight 1: pooled feature is the
        // rectified max embedding. Tokens a=2, b=-1 → score 2.
        let v = Vocabulary::new(["a", "b"], Vec::<String>::new());
        let config = DeeprConfig { embedding_dim: 1, filters: 1, width: 1, sequence_seed: 0 };
        let mut model = DeeprMiniModel::new(config, v, 0).unwrap();
        let values: &[(&str, &[f64])] = &[
            ("deepr.embedding.row0", &[2.0]),
            ("deepr.embedding.row1", &[-1.0]),
            ("deepr.embedding.pad", &[0.0]),
            ("deepr.filters", &[1.0]),
            ("deepr.filter_bias", &[0.0]),
            ("deepr.out.w", &[1.0]),
            ("deepr.out.b", &[0.0]),
        ];
        for id in model.params.ids().collect::<Vec<_>>() {
            let p = model.params.get_mut(id);
            let (_, data) = values.iter().find(|(n, _)| *n == p.name).unwrap();
            p.value.data_mut().copy_from_slice(data);
        }
        assert_eq!(model.score_tokens(&[0, 1]).unwrap(), 2.0);
        // Rectification floors the all-negative case at zero.
        assert_eq!(model.score_tokens(&[1]).unwrap(), 0.0);
    }

    #[test]
    fn max_pool_is_translation_invariant() {
        let config = DeeprConfig { embedding_dim: 4, filters: 3, width: 3, sequence_seed: 0 };
        let model = DeeprMiniModel::new(config, vocab(), 9).unwrap();
        let pad = model.pad_index();
        let motif = [1usize, 3];
        let left: Vec<usize> =
            [vec![pad; 3], motif.to_vec(), vec![pad; 3]].concat();
        let right: Vec<usize> =
            [vec![pad; 4], motif.to_vec(), vec![pad; 2]].concat();
        let a = model.score_tokens(&left).unwrap();
        let b = model.score_tokens(&right).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn short_sequences_are_padded_to_the_filter_width() {
        let config = DeeprConfig { embedding_dim: 2, filters: 2, width: 3, sequence_seed: 0 };
        let model = DeeprMiniModel::new(config, vocab(), 4).unwrap();
        // A single token (shorter than the width) still scores.
        assert!(model.score_tokens(&[0]).unwrap().is_finite());
        assert!(model.score_tokens(&[]).unwrap().is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = DeeprConfig { embedding_dim: 4, filters: 3, width: 3, sequence_seed: 0 };
        let mut model = DeeprMiniModel::new(config, vocab(), 11).unwrap();
        let pad = model.pad_index();
        let sequences = vec![
            (vec![0, 2, 3, 1, 4], true),
            (vec![1, 1, 0], false),
            (vec![4, pad], true),
        ];
        let report = model
            .grad_check(&sequences, &GradCheckConfig { step: 1e-5, tolerance: 1e-4 })
            .unwrap();
        assert!(report.passed(), "worst {:?}", report.worst);
        assert!(report.checked > 0);
    }

    #[test]
    fn training_descends_and_is_reproducible() {
        let v = vocab();
        // Positives always contain F32; negatives never do.
        let records: Vec<PatientRecord> = (0..12)
            .map(|i| {
                let positive = i % 2 == 0;
                let d: Vec<&str> = if positive { vec!["E11", "F32"] } else { vec!["E11"] };
                record(
                    &format!("p{i}"),
                    vec![
                        visit(&d, &["P1"], 0, Some(false)),
                        visit(&d, &["P2"], 20, Some(positive)),
                    ],
                )
            })
            .collect();
        let refs: Vec<&PatientRecord> = records.iter().collect();
        let config = DeeprConfig { embedding_dim: 8, filters: 4, width: 3, sequence_seed: 33 };
        let cfg = TrainConfig { epochs: 40, batch: 6, seed: 33, lr: 0.05, patience: 0, ..Default::default() };

        let mut model = DeeprMiniModel::new(config, v.clone(), 5).unwrap();
        let history = train_deepr(&mut model, &refs, &cfg).unwrap();
        assert_eq!(history.len(), 40);
        assert!(history.last().unwrap() < history.first().unwrap());

        let mut model2 = DeeprMiniModel::new(config, v, 5).unwrap();
        let history2 = train_deepr(&mut model2, &refs, &cfg).unwrap();
        let bits = |h: &[f64]| h.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&history), bits(&history2));
        assert_eq!(
            model.score(&records[0]).unwrap().to_bits(),
            model2.score(&records[0]).unwrap().to_bits()
        );
    }

    #[test]
    fn save_load_round_trip() {
        let config = DeeprConfig { embedding_dim: 4, filters: 2, width: 2, sequence_seed: 17 };
        let model = DeeprMiniModel::new(config, vocab(), 8).unwrap();
        let mut buf = Vec::new();
        let meta = ArtifactMeta { seed: 8, config_digest: "zz".into() };
        model.save(&mut buf, &meta).unwrap();
        let (loaded, meta2) = DeeprMiniModel::load(buf.as_slice()).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(loaded.config(), model.config());
        let r = two_visit_record();
        assert_eq!(
            model.score(&r).unwrap().to_bits(),
            loaded.score(&r).unwrap().to_bits()
        );
    }
}
