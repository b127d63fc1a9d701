//! Following one patient through the trained model: the per-visit hidden
//! state, its norm (an "illness severity" proxy that rises with untreated
//! disease burden), and the per-visit readmission risk.

use emrisk::data::synth::{gen_synthetic, SynthConfig};
use emrisk::data::{build_vocab, PatientRecord};
use emrisk::eval::trace_states;
use emrisk::model::{ModelConfig, RiskModel, Variant};
use emrisk::optim::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = gen_synthetic(&SynthConfig { patients: 300, seed: 5, ..SynthConfig::default() })?;
    let records: Vec<&PatientRecord> = cohort.records.iter().collect();

    let mut config = ModelConfig::for_variant(Variant::Mdmtp);
    config.embedding_dim = 16;
    config.hidden_dim = 16;
    let mut model = RiskModel::new(config, build_vocab(&cohort.records), 5)?;
    train(
        &mut model,
        &records,
        None,
        &TrainConfig { epochs: 8, batch: 16, seed: 5, patience: 0, lr: 0.01, clip: 5.0 },
    )?;

    // Pick the longest record so the trajectory has room to move.
    let patient = cohort
        .records
        .iter()
        .max_by_key(|r| r.visits.len())
        .expect("cohort is nonempty");

    println!("patient {} ({} visits)\n", patient.patient_id, patient.visits.len());
    println!("{:>5} {:>6} {:>8} {:>8}  visit content", "visit", "day", "|h|", "risk");
    for (row, visit) in trace_states(&model, patient)?.iter().zip(&patient.visits) {
        println!(
            "{:>5} {:>6} {:>8.4} {:>8.4}  {} diseases, {} treatments{}",
            row.visit,
            row.time,
            row.h_norm,
            row.risk,
            visit.diseases.len(),
            visit.treatments.len(),
            match visit.label {
                Some(true) => ", then READMITTED",
                Some(false) => "",
                None => ", outcome unobserved",
            }
        );
    }
    Ok(())
}
