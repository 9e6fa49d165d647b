//! A right excursion of the cookie walk next to its up-crossing branching
//! process, computed three ways.

use bpire::env::{EnvironmentSpec, MLaw, PLaw};
use bpire::rng::{Lane, StreamKey};
use bpire::walk::{classify_right_recurrence, couple_excursion};

fn main() -> bpire::Result<()> {
    let spec = EnvironmentSpec::new(
        PLaw::TwoPoint { a: 1.0 / 3.0, weight: 0.5 },
        MLaw::Finite { support: vec![0, 1, 2], weights: vec![0.5, 0.3, 0.2] },
    );
    for r in 0..5 {
        let c = couple_excursion(&spec, 10_000, &StreamKey::new(1, r, Lane::Environment))?;
        println!(
            "excursion {r}: {} steps, up-crossings {:?}, matches branching: {}",
            c.steps, c.upcrossings, c.exact_match
        );
    }

    let classical = EnvironmentSpec::classical(MLaw::Finite { support: vec![0, 1], weights: vec![0.5, 0.5] });
    let report = classify_right_recurrence(&classical, 500, &[100, 1000, 10_000], 2)?;
    for row in &report.rows {
        println!("returned by {}: {:.3} [{:.3}, {:.3}]", row.horizon, row.fraction, row.ci_lo, row.ci_hi);
    }
    Ok(())
}
