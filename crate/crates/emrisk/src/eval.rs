//! Ranking metrics, cross-validation orchestration, and per-visit state
//! trajectory extraction.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    train_bow_lr, train_deepr, BaselineError, BowLrModel, BowTrainConfig, DeeprConfig,
    DeeprMiniModel,
};
use crate::data::{kfold_split, Cohort, DataError, PatientRecord};
use crate::diffcore::softplus;
use crate::model::{ArtifactMeta, Envelope, ModelConfig, ModelError, RiskModel};
use crate::optim::{train, EpochStats, TrainConfig, TrainError};
use crate::rng;

/// One scored, labeled prediction, kept traceable to its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    /// Pre-logistic score; any monotone transform ranks identically.
    pub score: f64,
    pub label: bool,
    pub patient_id: String,
    /// 1-based visit index within the patient's history.
    pub visit: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum AucError {
    #[error(
        "AUC is undefined on single-class data: {positives} positives, {negatives} negatives"
    )]
    SingleClass { positives: usize, negatives: usize },

    #[error("score for patient {patient_id:?} visit {visit} is not finite")]
    NonFiniteScore { patient_id: String, visit: usize },
}

/// Area under the ROC curve in its Mann-Whitney form: the probability that
/// a uniformly random positive outscores a uniformly random negative, with
/// ties credited 0.5. Computed by sorting and midranking in O(n log n).
pub fn auc(examples: &[ScoredExample]) -> Result<f64, AucError> {
    let mut positives = 0usize;
    let mut negatives = 0usize;
    for e in examples {
        if !e.score.is_finite() {
            return Err(AucError::NonFiniteScore {
                patient_id: e.patient_id.clone(),
                visit: e.visit,
            });
        }
        if e.label {
            positives += 1;
        } else {
            negatives += 1;
        }
    }
    if positives == 0 || negatives == 0 {
        return Err(AucError::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| {
        examples[a]
            .score
            .partial_cmp(&examples[b].score)
            .expect("scores checked finite")
    });

    // Sum of 1-based midranks over the positives.
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && examples[order[j + 1]].score == examples[order[i]].score {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if examples[idx].label {
                positive_rank_sum += midrank;
            }
        }
        i = j + 1;
    }

    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Mean negative log-likelihood of labeled examples from their scores,
/// computed via softplus so extreme scores stay finite.
pub fn mean_nll(examples: &[ScoredExample]) -> Option<f64> {
    if examples.is_empty() {
        return None;
    }
    let total: f64 = examples
        .iter()
        .map(|e| softplus(e.score) - if e.label { e.score } else { 0.0 })
        .sum();
    Some(total / examples.len() as f64)
}

/// Score every labeled visit of every record ("pooled" examples).
pub fn pooled_examples(
    model: &RiskModel,
    records: &[&PatientRecord],
) -> Result<Vec<ScoredExample>, ModelError> {
    let mut out = Vec::new();
    for record in records {
        let scores = model.scores(record)?;
        for (t, (visit, score)) in record.visits.iter().zip(scores).enumerate() {
            if let Some(label) = visit.label {
                out.push(ScoredExample {
                    score,
                    label,
                    patient_id: record.patient_id.clone(),
                    visit: t + 1,
                });
            }
        }
    }
    Ok(out)
}

/// Score only each record's final visit, skipping unlabeled finals.
pub fn final_visit_examples(
    model: &RiskModel,
    records: &[&PatientRecord],
) -> Result<Vec<ScoredExample>, ModelError> {
    let mut out = Vec::new();
    for record in records {
        let visit = record.visits.last().expect("records have visits");
        if let Some(label) = visit.label {
            let scores = model.scores(record)?;
            out.push(ScoredExample {
                score: *scores.last().expect("one score per visit"),
                label,
                patient_id: record.patient_id.clone(),
                visit: record.visits.len(),
            });
        }
    }
    Ok(out)
}

/// One per-visit row of a state trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based visit index.
    pub visit: usize,
    pub time: i64,
    pub state: Vec<f64>,
    pub h_norm: f64,
    pub risk: f64,
}

/// Per-visit hidden states, their norms, and risks for one record — the
/// raw material for illness-trajectory plots.
pub fn trace_states(model: &RiskModel, record: &PatientRecord) -> Result<Vec<TraceRow>, ModelError> {
    let trace = model.forward(record)?;
    Ok(record
        .visits
        .iter()
        .zip(trace.states)
        .zip(trace.prediction.per_visit)
        .enumerate()
        .map(|(t, ((visit, state), risk))| {
            let h_norm = state.iter().map(|x| x * x).sum::<f64>().sqrt();
            TraceRow { visit: t + 1, time: visit.time, state, h_norm, risk }
        })
        .collect())
}

/// Write trace rows as CSV: a provenance comment, then a fixed header
/// `visit,time,h_0..h_{H-1},h_norm,risk`, one row per visit.
pub fn write_trace_csv(
    mut out: impl Write,
    rows: &[TraceRow],
    meta: &ArtifactMeta,
) -> std::io::Result<()> {
    writeln!(out, "# seed={} config_digest={}", meta.seed, meta.config_digest)?;
    let hidden = rows.first().map_or(0, |r| r.state.len());
    let mut header = String::from("visit,time");
    for i in 0..hidden {
        header.push_str(&format!(",h_{i}"));
    }
    header.push_str(",h_norm,risk");
    writeln!(out, "{header}")?;
    for row in rows {
        let mut line = format!("{},{}", row.visit, row.time);
        for x in &row.state {
            line.push_str(&format!(",{x}"));
        }
        line.push_str(&format!(",{},{}", row.h_norm, row.risk));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Auc(#[from] AucError),

    #[error("fold {fold} cannot be evaluated: {source}")]
    Fold { fold: usize, source: AucError },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

/// What to train and evaluate in each fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Risk { config: ModelConfig, train: TrainConfig },
    BowLr { config: BowTrainConfig },
    DeeprMini { config: DeeprConfig, train: TrainConfig },
}

impl ModelSpec {
    /// The name reported in metrics: the risk variant, or the baseline kind.
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Risk { config, .. } => match config.variant {
                crate::model::Variant::Mdmt => "mdmt",
                crate::model::Variant::Mdmtp => "mdmtp",
            },
            ModelSpec::BowLr { .. } => "bow_lr",
            ModelSpec::DeeprMini { .. } => "deepr_mini",
        }
    }
}

/// Any trained, scoreable model, for uniform loading and evaluation.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Risk(RiskModel),
    BowLr(BowLrModel),
    DeeprMini(DeeprMiniModel),
}

/// Evaluation of one record set by one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    /// Headline AUC: pooled over labeled visits for sequence models,
    /// final-visit for whole-history baselines.
    pub auc: f64,
    /// Final-visit-only AUC (equals `auc` for the baselines).
    pub auc_final: f64,
    /// Mean NLL over the headline examples.
    pub nll: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl AnyModel {
    /// Envelope discriminator of the contained model.
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Risk(_) => "risk",
            AnyModel::BowLr(_) => "bow_lr",
            AnyModel::DeeprMini(_) => "deepr_mini",
        }
    }

    /// Reporting name: the risk variant, or the baseline kind.
    pub fn name(&self) -> &'static str {
        match self {
            AnyModel::Risk(m) => match m.config().variant {
                crate::model::Variant::Mdmt => "mdmt",
                crate::model::Variant::Mdmtp => "mdmtp",
            },
            AnyModel::BowLr(_) => "bow_lr",
            AnyModel::DeeprMini(_) => "deepr_mini",
        }
    }

    /// Load any model file, dispatching on its embedded kind.
    pub fn load(reader: impl Read) -> Result<(Self, ArtifactMeta), EvalError> {
        let envelope = Envelope::read(reader)?;
        match envelope.model.as_str() {
            "risk" => {
                let (m, meta) = RiskModel::from_envelope(envelope)?;
                Ok((AnyModel::Risk(m), meta))
            }
            "bow_lr" => {
                let (m, meta) = BowLrModel::from_envelope(envelope)?;
                Ok((AnyModel::BowLr(m), meta))
            }
            "deepr_mini" => {
                let (m, meta) = DeeprMiniModel::from_envelope(envelope)?;
                Ok((AnyModel::DeeprMini(m), meta))
            }
            other => Err(EvalError::Model(ModelError::FileKind {
                found: other.to_string(),
                expected: "risk, bow_lr, or deepr_mini".to_string(),
            })),
        }
    }

    pub fn save(&self, writer: impl Write, meta: &ArtifactMeta) -> Result<(), EvalError> {
        match self {
            AnyModel::Risk(m) => m.save(writer, meta)?,
            AnyModel::BowLr(m) => m.save(writer, meta)?,
            AnyModel::DeeprMini(m) => m.save(writer, meta)?,
        }
        Ok(())
    }

    /// Final-visit readmission probability.
    pub fn predict_risk(&self, record: &PatientRecord) -> Result<f64, EvalError> {
        Ok(match self {
            AnyModel::Risk(m) => m.predict_risk(record)?,
            AnyModel::BowLr(m) => m.predict_risk(record)?,
            AnyModel::DeeprMini(m) => m.predict_risk(record)?,
        })
    }

    /// Score final visits of records whose final visit is labeled.
    fn baseline_final_examples(
        &self,
        records: &[&PatientRecord],
    ) -> Result<Vec<ScoredExample>, EvalError> {
        let mut out = Vec::new();
        for record in records {
            if let Some(label) = record.visits.last().and_then(|v| v.label) {
                let score = match self {
                    AnyModel::Risk(_) => unreachable!("risk models use pooled_examples"),
                    AnyModel::BowLr(m) => m.score(record)?,
                    AnyModel::DeeprMini(m) => m.score(record)?,
                };
                out.push(ScoredExample {
                    score,
                    label,
                    patient_id: record.patient_id.clone(),
                    visit: record.visits.len(),
                });
            }
        }
        Ok(out)
    }

    /// AUC (headline + final-visit), NLL, and class counts on a record set.
    pub fn evaluate(&self, records: &[&PatientRecord]) -> Result<EvaluationSummary, EvalError> {
        let (headline, finals) = match self {
            AnyModel::Risk(m) => {
                (pooled_examples(m, records)?, final_visit_examples(m, records)?)
            }
            _ => {
                let finals = self.baseline_final_examples(records)?;
                (finals.clone(), finals)
            }
        };
        let positives = headline.iter().filter(|e| e.label).count();
        let negatives = headline.len() - positives;
        Ok(EvaluationSummary {
            auc: auc(&headline)?,
            auc_final: auc(&finals)?,
            nll: mean_nll(&headline).expect("auc already required nonempty examples"),
            positives,
            negatives,
        })
    }
}

/// Metrics of one model on one dataset (the `eval` command's artifact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    /// Seed and digest inherited from the model artifact being scored.
    pub seed: u64,
    pub config_digest: String,
    pub auc: f64,
    pub auc_final: f64,
    pub nll: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl EvalReport {
    pub fn new(model: &AnyModel, meta: &ArtifactMeta, summary: &EvaluationSummary) -> Self {
        Self {
            model: model.name().to_string(),
            seed: meta.seed,
            config_digest: meta.config_digest.clone(),
            auc: summary.auc,
            auc_final: summary.auc_final,
            nll: summary.nll,
            positives: summary.positives,
            negatives: summary.negatives,
        }
    }
}

/// Serialize any report as pretty JSON with a trailing newline.
pub fn write_json_report<T: Serialize>(mut out: impl Write, report: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")
}

/// One fold's held-out metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auc: f64,
    pub auc_final: f64,
    pub nll: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Cross-validation results: per-fold metrics plus aggregates, stamped
/// with the seed and config digest that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub model: String,
    pub seed: u64,
    pub config_digest: String,
    pub fold_count: usize,
    pub auc_mean: f64,
    /// Sample standard deviation (n−1); 0 for a single fold.
    pub auc_std: f64,
    pub auc_final_mean: f64,
    pub auc_final_std: f64,
    pub folds: Vec<FoldMetrics>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Split training records into (train, validation) with a seeded 10%
/// stratified carve by final-label class. Each class with members yields
/// at least one validation record when labeled, so validation AUC stays
/// defined whenever the pool has both classes.
fn carve_validation<'a>(
    records: &[&'a PatientRecord],
    seed: u64,
    fold: u64,
) -> (Vec<&'a PatientRecord>, Vec<&'a PatientRecord>) {
    use rand::seq::SliceRandom;
    let mut classes: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        let class = match r.visits.last().and_then(|v| v.label) {
            Some(true) => 0,
            Some(false) => 1,
            None => 2,
        };
        classes[class].push(i);
    }
    let mut r = rng::derive_rng(seed, rng::purpose::VALIDATION_CARVE, fold);
    let mut val_indices = HashSet::new();
    for (class, indices) in classes.iter_mut().enumerate() {
        indices.sort_by(|&a, &b| records[a].patient_id.cmp(&records[b].patient_id));
        indices.shuffle(&mut r);
        let take = if class < 2 && !indices.is_empty() {
            (indices.len() / 10).max(1)
        } else {
            indices.len() / 10
        };
        val_indices.extend(indices.iter().take(take).copied());
    }
    let mut train_set = Vec::with_capacity(records.len() - val_indices.len());
    let mut val_set = Vec::with_capacity(val_indices.len());
    for (i, r) in records.iter().enumerate() {
        if val_indices.contains(&i) {
            val_set.push(*r);
        } else {
            train_set.push(*r);
        }
    }
    (train_set, val_set)
}

/// The unit index used when fitting on a whole cohort rather than a fold.
const FULL_FIT: u64 = u64::MAX;

/// Train one model on a whole cohort (the standalone `train` pipeline).
/// Seeds are derived exactly as for a fold, with a reserved unit index.
/// Also returns the per-epoch history (empty for the full-batch
/// bag-of-words fit, which has steps rather than epochs).
pub fn fit_full(
    cohort: &Cohort,
    spec: &ModelSpec,
    seed: u64,
) -> Result<(AnyModel, Vec<EpochStats>), EvalError> {
    let pool: Vec<&PatientRecord> = cohort.records.iter().collect();
    fit_unit(spec, cohort, &pool, seed, FULL_FIT)
}

/// Training history as CSV rows `epoch,train_loss,val_auc` (the last cell
/// empty when no validation slice was carved), preceded by a provenance
/// comment naming the seed and config digest.
pub fn write_history_csv(
    mut out: impl Write,
    history: &[EpochStats],
    meta: &ArtifactMeta,
) -> std::io::Result<()> {
    writeln!(out, "# seed={} config_digest={}", meta.seed, meta.config_digest)?;
    writeln!(out, "epoch,train_loss,val_auc")?;
    for row in history {
        let val = row.val_auc.map_or(String::new(), |a| format!("{a:.17e}"));
        writeln!(out, "{},{:.17e},{}", row.epoch, row.train_loss, val)?;
    }
    Ok(())
}

/// Train one model on the given pool, deterministically in
/// `(spec, seed, unit)` regardless of scheduling.
fn fit_unit(
    spec: &ModelSpec,
    cohort: &Cohort,
    pool: &[&PatientRecord],
    seed: u64,
    unit: u64,
) -> Result<(AnyModel, Vec<EpochStats>), EvalError> {
    let fold_seed = rng::derive_seed(seed, rng::purpose::FOLD_TRAIN, unit);
    match spec {
        ModelSpec::Risk { config, train: train_cfg } => {
            let mut model = RiskModel::new(config.clone(), cohort.vocabulary.clone(), fold_seed)?;
            let cfg = TrainConfig { seed: fold_seed, ..*train_cfg };
            let history = if cfg.patience > 0 {
                let (train_set, val_set) = carve_validation(pool, seed, unit);
                train(&mut model, &train_set, Some(&val_set), &cfg)?
            } else {
                train(&mut model, pool, None, &cfg)?
            };
            Ok((AnyModel::Risk(model), history))
        }
        ModelSpec::BowLr { config } => {
            let model = train_bow_lr(pool, &cohort.vocabulary, config)?;
            Ok((AnyModel::BowLr(model), Vec::new()))
        }
        ModelSpec::DeeprMini { config, train: train_cfg } => {
            let config = DeeprConfig { sequence_seed: fold_seed, ..*config };
            let mut model = DeeprMiniModel::new(config, cohort.vocabulary.clone(), fold_seed)?;
            let cfg = TrainConfig { seed: fold_seed, ..*train_cfg };
            let losses = train_deepr(&mut model, pool, &cfg)?;
            let history = losses
                .into_iter()
                .enumerate()
                .map(|(i, train_loss)| EpochStats { epoch: i + 1, train_loss, val_auc: None })
                .collect();
            Ok((AnyModel::DeeprMini(model), history))
        }
    }
}

fn run_fold(
    cohort: &Cohort,
    folds: &[Vec<usize>],
    fold: usize,
    spec: &ModelSpec,
    seed: u64,
) -> Result<FoldMetrics, EvalError> {
    let in_test: HashSet<usize> = folds[fold].iter().copied().collect();
    let test: Vec<&PatientRecord> = folds[fold].iter().map(|&i| &cohort.records[i]).collect();
    let pool: Vec<&PatientRecord> = (0..cohort.records.len())
        .filter(|i| !in_test.contains(i))
        .map(|i| &cohort.records[i])
        .collect();

    let test_ids: HashSet<&str> = test.iter().map(|r| r.patient_id.as_str()).collect();
    assert!(
        pool.iter().all(|r| !test_ids.contains(r.patient_id.as_str())),
        "fold {fold}: training and test folds share patients"
    );

    let (model, _history) = fit_unit(spec, cohort, &pool, seed, fold as u64)?;
    let summary = model.evaluate(&test).map_err(|e| match e {
        EvalError::Auc(source) => EvalError::Fold { fold, source },
        other => other,
    })?;
    Ok(FoldMetrics {
        fold,
        auc: summary.auc,
        auc_final: summary.auc_final,
        nll: summary.nll,
        positives: summary.positives,
        negatives: summary.negatives,
    })
}

/// Stratified k-fold cross-validation: train on k−1 folds, score the
/// held-out fold, aggregate. Fold results depend only on
/// `(cohort, spec, k, seed)`, so any `jobs` level yields byte-identical
/// reports.
pub fn cross_validate(
    cohort: &Cohort,
    spec: &ModelSpec,
    k: usize,
    seed: u64,
    jobs: usize,
    config_digest: &str,
) -> Result<MetricsReport, EvalError> {
    let folds = kfold_split(cohort, k, seed)?;

    let results: Vec<Result<FoldMetrics, EvalError>> = if jobs <= 1 {
        (0..k).map(|f| run_fold(cohort, &folds, f, spec, seed)).collect()
    } else {
        let slots: Vec<Mutex<Option<Result<FoldMetrics, EvalError>>>> =
            (0..k).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(k) {
                scope.spawn(|| loop {
                    let f = next.fetch_add(1, Ordering::Relaxed);
                    if f >= k {
                        break;
                    }
                    let result = run_fold(cohort, &folds, f, spec, seed);
                    *slots[f].lock().expect("fold slot") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("fold slot").expect("fold ran"))
            .collect()
    };

    let mut fold_metrics = Vec::with_capacity(k);
    for result in results {
        fold_metrics.push(result?);
    }

    let aucs: Vec<f64> = fold_metrics.iter().map(|f| f.auc).collect();
    let finals: Vec<f64> = fold_metrics.iter().map(|f| f.auc_final).collect();
    let (auc_mean, auc_std) = mean_and_std(&aucs);
    let (auc_final_mean, auc_final_std) = mean_and_std(&finals);
    Ok(MetricsReport {
        model: spec.name().to_string(),
        seed,
        config_digest: config_digest.to_string(),
        fold_count: k,
        auc_mean,
        auc_std,
        auc_final_mean,
        auc_final_std,
        folds: fold_metrics,
    })
}

/// Serialize a metrics report as pretty JSON with a trailing newline;
/// byte-identical for equal reports.
pub fn write_metrics_json(mut out: impl Write, report: &MetricsReport) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")
}
