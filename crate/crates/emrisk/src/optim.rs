//! Adam optimization and the model training loop: seeded epoch shuffling,
//! minibatching, gradient clipping, and early stopping on validation AUC.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::PatientRecord;
use crate::diffcore::ParamSet;
use crate::eval::{auc, pooled_examples, AucError};
use crate::model::{ModelError, RiskModel};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("validation scoring failed: {0}")]
    Validation(#[from] AucError),

    #[error("optimizer state does not match the parameter set: {0}")]
    StateMismatch(String),
}

/// Adam state: one first/second moment buffer per parameter plus the step
/// counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh optimizer state shaped for `params`, at the default learning
    /// rate of 0.01.
    pub fn new(params: &ParamSet) -> Self {
        Self::with_lr(params, 0.01)
    }

    pub fn with_lr(params: &ParamSet, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> =
            params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: shapes.clone(), v: shapes }
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// One Adam update with bias correction, consuming the gradients
    /// currently held in `params`:
    /// m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²;  θ ← θ − lr·m̂/(√v̂ + eps).
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), TrainError> {
        if self.m.len() != params.len() {
            return Err(TrainError::StateMismatch(format!(
                "state has {} parameter buffers, set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let n = params.get(id).value.len();
            if self.m[i].len() != n {
                return Err(TrainError::StateMismatch(format!(
                    "parameter {:?} has {} entries, state buffer has {}",
                    params.get(id).name,
                    n,
                    self.m[i].len()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let m_corr = 1.0 - self.beta1.powi(t);
        let v_corr = 1.0 - self.beta2.powi(t);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let grads = p.grad.data().to_vec();
            let values = p.value.data_mut();
            for (j, g) in grads.into_iter().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / m_corr;
                let v_hat = *v / v_corr;
                values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Clip the global L2 gradient norm to `threshold`; infinity disables.
pub fn clip_gradients(params: &mut ParamSet, threshold: f64) {
    if !threshold.is_finite() {
        return;
    }
    let norm = params.grad_norm();
    if norm > threshold {
        params.scale_grads(threshold / norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size in patient records.
    pub batch: usize,
    pub seed: u64,
    /// Early-stopping patience in epochs without a new best validation
    /// AUC; 0 disables early stopping.
    pub patience: usize,
    pub lr: f64,
    /// Global L2 gradient-norm clip; infinity disables.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch: 16, seed: 0, patience: 5, lr: 0.01, clip: 5.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad(format!("clip must be positive (infinity disables), got {}", self.clip));
        }
        Ok(())
    }
}

/// One epoch of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// Pooled AUC on the validation set, when one was supplied.
    pub val_auc: Option<f64>,
}

/// Train the model in place. Each epoch shuffles the records with a stream
/// derived from `(cfg.seed, epoch)`, then runs loss/backward/clip/Adam per
/// minibatch. With a validation set and `patience > 0`, training stops
/// after `patience` epochs without a new best validation AUC and the
/// best-epoch parameters are restored (also at normal completion).
pub fn train(
    model: &mut RiskModel,
    records: &[&PatientRecord],
    validation: Option<&[&PatientRecord]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut adam = AdamState::with_lr(model.params(), cfg.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut shuffle_rng = rng::derive_rng(cfg.seed, rng::purpose::EPOCH_SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&PatientRecord> = chunk.iter().map(|&i| records[i]).collect();
            model.params_mut().zero_grads();
            loss_sum += model.loss(&batch)?;
            model.backward()?;
            clip_gradients(model.params_mut(), cfg.clip);
            adam.step(model.params_mut())?;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let val_auc = match validation {
            Some(val) => Some(auc(&pooled_examples(model, val)?)?),
            None => None,
        };
        history.push(EpochStats { epoch, train_loss, val_auc });

        if cfg.patience > 0 {
            if let Some(current) = val_auc {
                if best.as_ref().is_none_or(|(b, _)| current > *b) {
                    best = Some((current, snapshot(model.params())));
                    epochs_since_best = 0;
                } else {
                    epochs_since_best += 1;
                    if epochs_since_best >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }

    if let Some((_, values)) = best {
        restore(model.params_mut(), &values);
    }
    Ok(history)
}

fn snapshot(params: &ParamSet) -> Vec<Vec<f64>> {
    params.iter().map(|(_, p)| p.value.data().to_vec()).collect()
}

fn restore(params: &mut ParamSet, values: &[Vec<f64>]) {
    for (id, saved) in params.ids().collect::<Vec<_>>().into_iter().zip(values) {
        params.get_mut(id).value.data_mut().copy_from_slice(saved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::diffcore::Tensor;
    use crate::model::{ModelConfig, Variant};
    use proptest::prelude::*;

    fn scalar_params(values: &[f64]) -> ParamSet {
        let mut ps = ParamSet::new();
        for (i, &x) in values.iter().enumerate() {
            ps.add(format!("p{i}"), Tensor::vector(vec![x]).unwrap());
        }
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = scalar_params(&[1.5, -2.0]);
        let mut adam = AdamState::new(&ps);
        for _ in 0..3 {
            adam.step(&mut ps).unwrap();
        }
        let values: Vec<f64> = ps.iter().map(|(_, p)| p.value.data()[0]).collect();
        assert_eq!(values, vec![1.5, -2.0]);
        assert_eq!(adam.t(), 3);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        let mut ps = scalar_params(&[0.0]);
        let id = ps.ids().next().unwrap();
        ps.get_mut(id).grad.data_mut()[0] = 3.7;
        let mut adam = AdamState::new(&ps);
        adam.step(&mut ps).unwrap();
        let delta = ps.get(id).value.data()[0];
        assert!((delta + 0.01).abs() < 1e-6, "step was {delta}");

        // Negative gradient moves the other way.
        let mut ps2 = scalar_params(&[0.0]);
        let id2 = ps2.ids().next().unwrap();
        ps2.get_mut(id2).grad.data_mut()[0] = -0.004;
        let mut adam2 = AdamState::new(&ps2);
        adam2.step(&mut ps2).unwrap();
        assert!((ps2.get(id2).value.data()[0] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut ps = scalar_params(&[4.0]);
        let id = ps.ids().next().unwrap();
        ps.get_mut(id).grad.data_mut()[0] = 123.0;
        let mut adam = AdamState::with_lr(&ps, 0.0);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.get(id).value.data()[0], 4.0);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let ps_small = scalar_params(&[1.0]);
        let mut ps_big = scalar_params(&[1.0, 2.0]);
        let mut adam = AdamState::new(&ps_small);
        assert!(matches!(adam.step(&mut ps_big), Err(TrainError::StateMismatch(_))));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut ps = scalar_params(&[0.0, 0.0]);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).grad.data_mut()[0] = 30.0;
        }
        clip_gradients(&mut ps, 5.0);
        assert!((ps.grad_norm() - 5.0).abs() < 1e-12);
        // Below the threshold nothing changes.
        clip_gradients(&mut ps, 50.0);
        assert!((ps.grad_norm() - 5.0).abs() < 1e-12);
        // Infinite threshold disables.
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).grad.data_mut()[0] = 1e9;
        }
        clip_gradients(&mut ps, f64::INFINITY);
        assert!(ps.grad_norm() > 1e9);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip: f64::INFINITY, ..Default::default() }.validate().is_ok());
    }

    fn tiny_cohort(patients: usize, seed: u64) -> crate::data::Cohort {
        gen_synthetic(&SynthConfig {
            patients,
            disease_vocab: 12,
            treatment_vocab: 8,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny_model(cohort: &crate::data::Cohort, seed: u64) -> RiskModel {
        let config = ModelConfig {
            embedding_dim: 8,
            hidden_dim: 8,
            ..ModelConfig::for_variant(Variant::Mdmt)
        };
        RiskModel::new(config, cohort.vocabulary.clone(), seed).unwrap()
    }

    #[test]
    fn loss_descends_on_a_small_cohort() {
        let cohort = tiny_cohort(20, 5);
        let refs: Vec<&PatientRecord> = cohort.records.iter().collect();
        let mut model = tiny_model(&cohort, 1);
        let cfg = TrainConfig { epochs: 50, batch: 8, seed: 3, patience: 0, ..Default::default() };
        let history = train(&mut model, &refs, None, &cfg).unwrap();
        assert_eq!(history.len(), 50);
        assert!(history.iter().all(|h| h.val_auc.is_none()));
        let first = history.first().unwrap().train_loss;
        let last = history.last().unwrap().train_loss;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cohort = tiny_cohort(12, 9);
        let refs: Vec<&PatientRecord> = cohort.records.iter().collect();
        let cfg = TrainConfig { epochs: 5, batch: 4, seed: 77, patience: 0, ..Default::default() };
        let run = || {
            let mut model = tiny_model(&cohort, 2);
            let history = train(&mut model, &refs, None, &cfg).unwrap();
            let params: Vec<u64> = model
                .params()
                .iter()
                .flat_map(|(_, p)| p.value.data().iter().map(|x| x.to_bits()))
                .collect();
            let losses: Vec<u64> = history.iter().map(|h| h.train_loss.to_bits()).collect();
            (params, losses)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let cohort = tiny_cohort(24, 21);
        let (val, tr) = cohort.records.split_at(8);
        let tr_refs: Vec<&PatientRecord> = tr.iter().collect();
        let val_refs: Vec<&PatientRecord> = val.iter().collect();
        let mut model = tiny_model(&cohort, 4);
        let cfg = TrainConfig { epochs: 40, batch: 8, seed: 13, patience: 3, ..Default::default() };
        let history = train(&mut model, &tr_refs, Some(&val_refs), &cfg).unwrap();
        assert!(history.len() <= 40);
        let best = history
            .iter()
            .filter_map(|h| h.val_auc)
            .fold(f64::NEG_INFINITY, f64::max);
        // The restored parameters must reproduce the best recorded AUC.
        let final_auc = auc(&pooled_examples(&model, &val_refs).unwrap()).unwrap();
        assert!(
            (final_auc - best).abs() < 1e-12,
            "restored AUC {final_auc} differs from best {best}"
        );
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cohort = tiny_cohort(4, 2);
        let mut model = tiny_model(&cohort, 1);
        assert!(matches!(
            train(&mut model, &[], None, &TrainConfig::default()),
            Err(TrainError::EmptyTrainingSet)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Per-coordinate Adam updates stay within 2·lr across the first
        /// hundred steps, and second moments stay nonnegative.
        #[test]
        fn step_magnitude_is_bounded(
            seed in 0u64..1000,
            lr in 1e-4f64..0.1,
        ) {
            use rand::Rng;
            let mut r = crate::rng::derive_rng(seed, 99, 0);
            let mut ps = scalar_params(&[0.0, 1.0, -1.0]);
            let ids: Vec<_> = ps.ids().collect();
            let mut adam = AdamState::with_lr(&ps, lr);
            for _ in 1..=100 {
                let before: Vec<f64> =
                    ps.iter().map(|(_, p)| p.value.data()[0]).collect();
                for &id in &ids {
                    ps.get_mut(id).grad.data_mut()[0] = r.random_range(-10.0..10.0);
                }
                adam.step(&mut ps).unwrap();
                for (i, (_, p)) in ps.iter().enumerate() {
                    let delta = (p.value.data()[0] - before[i]).abs();
                    prop_assert!(delta <= 2.0 * lr + 1e-15, "step {delta} exceeds {}", 2.0 * lr);
                }
                prop_assert!(adam.v.iter().flatten().all(|&v| v >= 0.0));
            }
        }
    }
}
