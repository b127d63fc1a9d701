//! The two reference baselines, driven directly through the library API:
//! a bag-of-words logistic regression over a patient's whole history, and
//! a small text-CNN that reads the history as one token sequence. Both
//! predict the final-visit outcome only.

use emrisk::baselines::{train_bow_lr, train_deepr, BowTrainConfig, DeeprConfig, DeeprMiniModel};
use emrisk::data::synth::{gen_synthetic, SynthConfig};
use emrisk::data::{build_vocab, PatientRecord};
use emrisk::embedding::Namespace;
use emrisk::eval::{auc, ScoredExample};
use emrisk::optim::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = gen_synthetic(&SynthConfig { patients: 500, seed: 9, ..SynthConfig::default() })?;
    let split = cohort.len() * 4 / 5;
    let train_set: Vec<&PatientRecord> = cohort.records[..split].iter().collect();
    let test_set: Vec<&PatientRecord> = cohort.records[split..].iter().collect();
    let vocabulary = build_vocab(&cohort.records);

    // --- Bag-of-words logistic regression (convex, full-batch) ---------
    let bow = train_bow_lr(&train_set, &vocabulary, &BowTrainConfig::default())?;
    println!("bow-lr     test AUC: {:.4}", final_auc(&test_set, |r| bow.score(r).unwrap())?);

    // The weights are directly interpretable: one per code, positive means
    // the code raises predicted readmission risk.
    let mut ranked: Vec<(usize, f64)> =
        bow.weights().iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    println!("\nmost influential codes:");
    for (index, weight) in ranked.iter().take(8) {
        let (ns, code) = bow.vocabulary().entry(*index).expect("index from weights");
        let kind = match ns {
            Namespace::Disease => "disease",
            Namespace::Treatment => "treatment",
        };
        println!("  {weight:>8.4}  {kind:<10} {code}");
    }

    // --- Deepr-style CNN ------------------------------------------------
    let mut deepr = DeeprMiniModel::new(DeeprConfig::default(), vocabulary, 9)?;
    let losses = train_deepr(
        &mut deepr,
        &train_set,
        &TrainConfig { epochs: 8, batch: 16, seed: 9, patience: 0, lr: 0.01, clip: 5.0 },
    )?;
    println!("\ndeepr-mini epoch losses: {:?}", losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("deepr-mini test AUC: {:.4}", final_auc(&test_set, |r| deepr.score(r).unwrap())?);
    Ok(())
}

/// Final-visit AUC of an arbitrary scoring function.
fn final_auc(
    records: &[&PatientRecord],
    score: impl Fn(&PatientRecord) -> f64,
) -> Result<f64, Box<dyn std::error::Error>> {
    let mut examples = Vec::new();
    for record in records {
        if let Some(label) = record.visits.last().and_then(|v| v.label) {
            examples.push(ScoredExample {
                score: score(record),
                label,
                patient_id: record.patient_id.clone(),
                visit: record.visits.len(),
            });
        }
    }
    Ok(auc(&examples)?)
}
