//! Generating a synthetic longitudinal cohort and inspecting its shape.
//!
//! Each patient carries a latent severity that drifts upward when diseases go
//! untreated and downward when they are treated, with mean reversion so that
//! recent visits matter more than old ones. Severity drives which codes are
//! recorded and the probability of an unplanned readmission after each visit.

use std::collections::BTreeMap;

use emrisk::data::synth::{gen_synthetic, SynthConfig};
use emrisk::data::{build_vocab, serialize_cohort};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig { patients: 500, seed: 42, ..SynthConfig::default() };
    let cohort = gen_synthetic(&cfg)?;

    let visits: usize = cohort.records.iter().map(|r| r.visits.len()).sum();
    let (positives, labeled) = cohort.final_label_stats();
    println!("patients            : {}", cohort.len());
    println!("visits              : {visits} ({:.2} per patient)", visits as f64 / cohort.len() as f64);
    println!(
        "final-visit labels  : {labeled} labeled, {positives} positive ({:.1}% prevalence)",
        100.0 * positives as f64 / labeled as f64
    );

    let vocab = build_vocab(&cohort.records);
    println!(
        "codes in use        : {} diseases, {} treatments",
        vocab.disease_count(),
        vocab.treatment_count()
    );

    // Distribution of record lengths, since the sequence model consumes
    // whole trajectories.
    let mut lengths = BTreeMap::new();
    for record in &cohort.records {
        *lengths.entry(record.visits.len()).or_insert(0usize) += 1;
    }
    println!("\nvisits-per-patient histogram:");
    for (len, count) in &lengths {
        println!("  {len:>2} visits: {count:>3} {}", "#".repeat(count / 4 + 1));
    }

    // One record in the JSONL wire format used by the CLI and file loaders.
    println!("\nfirst record as JSONL:");
    let mut line = Vec::new();
    let one = emrisk::data::Cohort::from_records(
        vec![cohort.records[0].clone()],
        cohort.provenance.clone(),
    );
    serialize_cohort(&one, &mut line)?;
    print!("{}", String::from_utf8(line)?);
    Ok(())
}
