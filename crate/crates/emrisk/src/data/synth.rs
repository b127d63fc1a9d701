//! Deterministic synthetic EMR cohorts.
//!
//! Each patient carries a latent illness severity that drives which
//! diseases appear at each visit and the readmission outcome. Treatments
//! partially resolve diseases: a fully-treated visit pulls severity down,
//! an untreated one pushes it up. That plants two learnable signals —
//! severity accumulation over time and the per-visit disease-treatment
//! interaction — while leaving labels noisy draws, so no model can reach
//! perfect discrimination.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Cohort, DataError, PatientRecord, Provenance, Visit};
use crate::diffcore::sigmoid;
use crate::rng;

/// Severity trajectories simulated (per config) to calibrate the label
/// intercept against the target prevalence.
const CALIBRATION_PATIENTS: u64 = 2000;

/// Slope of the label link y ~ Bernoulli(logistic(SLOPE·s + b)). Sets how
/// much of the outcome is explained by severity versus irreducible noise,
/// leaving models measurable headroom without making the task separable.
const LABEL_SLOPE: f64 = 16.0;

/// How much of the deviation from baseline severity carries over between
/// visits. Acuity fades: a visit five admissions ago moves today's risk far
/// less than the last one, so the outcome depends on *when* care lapsed,
/// not just how often — per-visit order information that no further
/// record-level tally can reconstruct.
const SEVERITY_RETENTION: f64 = 0.55;

/// Resting severity that deviations decay toward.
const SEVERITY_BASELINE: f64 = 0.5;

/// Knobs of the generative process. The structural caps (visit, disease,
/// and distractor counts) are fixed constants of the process, not config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub patients: usize,
    /// Disease universe size; the first 20% are "severity-linked" and get
    /// sampled more often as a patient deteriorates.
    pub disease_vocab: usize,
    pub treatment_vocab: usize,
    /// Poisson mean for visits beyond the mandatory two.
    pub visit_rate: f64,
    /// Probability that a recorded disease receives its designated
    /// effective treatment during the same visit.
    pub q_eff: f64,
    /// Severity added per fully-untreated visit.
    pub severity_gain: f64,
    /// Severity removed per fully-treated visit.
    pub treatment_relief: f64,
    /// Standard deviation of the per-visit severity noise.
    pub severity_noise: f64,
    /// Target empirical rate of positive labels.
    pub prevalence: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            patients: 100,
            disease_vocab: 50,
            treatment_vocab: 120,
            visit_rate: 4.0,
            q_eff: 0.6,
            severity_gain: 0.15,
            treatment_relief: 0.10,
            severity_noise: 0.05,
            prevalence: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Vocabulary sizes matching the cohorts the model family was designed
    /// around (a few hundred diseases, around a thousand treatments).
    pub fn paper_scale(self) -> Self {
        Self { disease_vocab: 240, treatment_vocab: 1100, ..self }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.patients == 0 {
            return bad("patients must be positive".into());
        }
        if self.disease_vocab == 0 || self.treatment_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if !(self.visit_rate.is_finite() && self.visit_rate > 0.0) {
            return bad(format!("visit_rate must be positive, got {}", self.visit_rate));
        }
        if !(0.0..=1.0).contains(&self.q_eff) {
            return bad(format!("q_eff must lie in [0,1], got {}", self.q_eff));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence must lie in (0,1), got {}", self.prevalence));
        }
        for (name, v) in [
            ("severity_gain", self.severity_gain),
            ("treatment_relief", self.treatment_relief),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.severity_noise.is_finite() && self.severity_noise >= 0.0) {
            return bad(format!("severity_noise must be nonnegative, got {}", self.severity_noise));
        }
        Ok(())
    }

    fn disease_code(&self, index: usize) -> String {
        format!("D{index:0width$}", width = code_width(self.disease_vocab))
    }

    fn treatment_code(&self, index: usize) -> String {
        format!("T{index:0width$}", width = code_width(self.treatment_vocab))
    }

    /// The designated effective treatment for a disease.
    fn effective_treatment(&self, disease: usize) -> usize {
        disease % self.treatment_vocab
    }
}

/// Fixed digit width keeps lexicographic and numeric code order identical.
fn code_width(vocab: usize) -> usize {
    let digits = vocab.saturating_sub(1).max(1).ilog10() as usize + 1;
    digits.max(3)
}

/// One visit before labels are attached.
struct VisitDraft {
    time: i64,
    diseases: Vec<usize>,
    treatments: Vec<usize>,
}

struct Trajectory {
    visits: Vec<VisitDraft>,
    /// Post-visit severity s_{t+1}, one per visit; labels derive from it.
    next_severity: Vec<f64>,
}

fn poisson_capped(rng: &mut ChaCha8Rng, mean: f64, cap: u64) -> u64 {
    let draw = Poisson::new(mean).expect("validated mean").sample(rng) as u64;
    draw.min(cap)
}

/// Weighted sampling without replacement over the disease universe:
/// severity-linked diseases (the first 20% of the vocabulary) carry weight
/// 1+5s, the rest weight 1.
fn sample_diseases(rng: &mut ChaCha8Rng, cfg: &SynthConfig, severity: f64, count: usize) -> Vec<usize> {
    let linked = cfg.disease_vocab / 5;
    let weight = |d: usize| if d < linked { 1.0 + 5.0 * severity } else { 1.0 };
    let mut pool: Vec<usize> = (0..cfg.disease_vocab).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(cfg.disease_vocab) {
        let total: f64 = pool.iter().map(|&d| weight(d)).sum();
        let mut target = rng.random_range(0.0..total);
        let mut chosen = pool.len() - 1;
        for (pos, &d) in pool.iter().enumerate() {
            target -= weight(d);
            if target < 0.0 {
                chosen = pos;
                break;
            }
        }
        out.push(pool.remove(chosen));
    }
    out
}

/// Run the severity process for one patient. Label draws happen afterwards
/// (from the same stream), so calibration can replay trajectories without
/// consuming label randomness.
fn simulate_trajectory(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Trajectory {
    let noise = Normal::new(0.0, cfg.severity_noise).expect("validated sd");
    // A narrow initial band: outcomes are dominated by how severity
    // *evolves* over the record, not by where a patient started.
    let mut severity = rng.random_range(0.35..0.65);
    let visit_count = 2 + poisson_capped(rng, cfg.visit_rate, 10) as usize;
    let mut time = rng.random_range(0..=365i64);

    let mut visits = Vec::with_capacity(visit_count);
    let mut next_severity = Vec::with_capacity(visit_count);
    for t in 0..visit_count {
        if t > 0 {
            time += rng.random_range(20..=200i64);
        }
        // Bag size is only weakly tied to severity: severity mostly decides
        // *which* codes appear (the weighted draw below), so record-level
        // code tallies alone can't recover the illness trajectory.
        let disease_count = 1 + poisson_capped(rng, 1.5 + 0.5 * severity, 7) as usize;
        let diseases = sample_diseases(rng, cfg, severity, disease_count);

        let mut treatments = Vec::new();
        for &d in &diseases {
            if rng.random_bool(cfg.q_eff) {
                treatments.push(cfg.effective_treatment(d));
            }
        }
        let distractors = poisson_capped(rng, 0.3, 2);
        for _ in 0..distractors {
            treatments.push(rng.random_range(0..cfg.treatment_vocab));
        }

        let treated = diseases
            .iter()
            .filter(|&&d| treatments.contains(&cfg.effective_treatment(d)))
            .count() as f64
            / diseases.len() as f64;
        let drift = cfg.severity_gain * (1.0 - treated) - cfg.treatment_relief * treated;
        severity = (SEVERITY_BASELINE
            + SEVERITY_RETENTION * (severity - SEVERITY_BASELINE)
            + drift
            + noise.sample(rng))
        .clamp(0.0, 1.0);

        visits.push(VisitDraft { time, diseases, treatments });
        next_severity.push(severity);
    }
    Trajectory { visits, next_severity }
}

/// Find the label intercept b so that the expected positive rate of
/// y ~ Bernoulli(logistic(LABEL_SLOPE·s + b)) over simulated severities matches the
/// target prevalence. The expectation is monotone in b, so bisection on a
/// wide bracket converges to machine precision.
fn calibrate_intercept(cfg: &SynthConfig) -> f64 {
    let mut severities = Vec::new();
    for j in 0..CALIBRATION_PATIENTS {
        let mut r = rng::derive_rng(cfg.seed, rng::purpose::SYNTH_CALIBRATE, j);
        severities.extend(simulate_trajectory(&mut r, cfg).next_severity);
    }
    let rate = |b: f64| {
        severities.iter().map(|&s| sigmoid(LABEL_SLOPE * s + b)).sum::<f64>() / severities.len() as f64
    };
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < cfg.prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate a fully labeled cohort. Deterministic in the config (including
/// its seed): the same config produces byte-identical serialized output.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Cohort, DataError> {
    cfg.validate()?;
    let intercept = calibrate_intercept(cfg);
    let id_width = cfg.patients.saturating_sub(1).max(1).ilog10() as usize + 1;

    let records: Vec<PatientRecord> = (0..cfg.patients)
        .map(|i| {
            let mut r = rng::derive_rng(cfg.seed, rng::purpose::SYNTH, i as u64);
            let traj = simulate_trajectory(&mut r, cfg);
            let labels: Vec<bool> = traj
                .next_severity
                .iter()
                .map(|&s| r.random_bool(sigmoid(LABEL_SLOPE * s + intercept)))
                .collect();
            let visits = traj
                .visits
                .iter()
                .enumerate()
                .map(|(t, draft)| Visit {
                    time: draft.time,
                    diseases: draft.diseases.iter().map(|&d| cfg.disease_code(d)).collect(),
                    treatments: draft
                        .treatments
                        .iter()
                        .map(|&p| cfg.treatment_code(p))
                        .collect(),
                    // An admission is unplanned exactly when the previous
                    // discharge was followed by a readmission event.
                    unplanned: t > 0 && labels[t - 1],
                    label: Some(labels[t]),
                })
                .collect();
            PatientRecord {
                patient_id: format!("synth-{i:0id_width$}"),
                visits,
            }
        })
        .collect();

    Ok(Cohort::from_records(
        records,
        Provenance::Synthetic { config: cfg.clone() },
    ))
}
