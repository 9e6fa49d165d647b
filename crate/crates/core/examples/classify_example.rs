//! Analytic verdicts across the heavy-tail family and an empirical check at
//! one value on each side.

use bpire::branching::StartMode;
use bpire::classify::{empirical_classify, evaluate_criteria, summarize_branching, CriteriaParams, DecisionBand};
use bpire::env::EnvironmentSpec;

fn main() -> bpire::Result<()> {
    for lambda in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
        let v = evaluate_criteria(&EnvironmentSpec::heavy_tail_example(lambda), &CriteriaParams::default());
        let failed: Vec<&str> = v.conditions.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
        println!("lambda {lambda}: {} (failed: {failed:?})", v.verdict.as_str());
    }

    let horizons = [100, 1000];
    for lambda in [1.0, 3.0] {
        let spec = EnvironmentSpec::heavy_tail_example(lambda);
        let paths = summarize_branching(&spec, StartMode::OneAncestor, &horizons, 200, 5)?;
        let r = empirical_classify(&paths, &horizons, DecisionBand::default(), 0.01)?;
        let last = r.rows.last().unwrap();
        println!(
            "lambda {lambda}: hit zero {:.3}, exceed e^sqrt(n) {:.3}, empirical verdict {:?}",
            last.fraction, last.exceed_fraction, r.verdict
        );
    }
    Ok(())
}
