//! Finite-difference validation of the reverse-mode gradients.
//!
//! For every combination of model variant, pooling kind, and interaction
//! transform, this builds a tiny model on a few synthetic records, computes
//! the analytic gradient of the training loss with the tape, and compares
//! every coordinate against a central finite difference.

use emrisk::diffcore::GradCheckConfig;
use emrisk::model::gradcheck_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = GradCheckConfig { step: 1e-5, tolerance: 1e-4 };
    let cases = gradcheck_suite(7, &config)?;

    let mut failures = 0usize;
    for case in &cases {
        let status = if case.report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {label:<34} coordinates={n:>5}  max_rel_error={err:.3e}",
            label = case.label,
            n = case.report.checked,
            err = case.report.max_rel_error,
        );
        if !case.report.passed() {
            failures += 1;
            if let Some(worst) = &case.report.worst {
                println!("      worst: {worst:?}");
            }
        }
    }

    println!("\n{} of {} configurations passed", cases.len() - failures, cases.len());
    if failures > 0 {
        return Err("analytic and numeric gradients disagree".into());
    }
    Ok(())
}
