//! Partial sums of the series sum_n a^n sum_{i <= c n^(d-1)} V_{i,n} for a
//! law with and without a finite d-th log-moment.

use bpire::classify::{series_moment_probe, SeriesParams, VLaw};

fn main() -> bpire::Result<()> {
    let base = SeriesParams {
        d: 2,
        a: 0.5,
        c: 1.0,
        v_law: VLaw::Constant { value: 1.0 },
        partial_terms: 60,
        divergence_cap: 1.0,
    };
    let laws = [
        (VLaw::Constant { value: 1.0 }, 60),
        (VLaw::Exponential { rate: 1.0 }, 60),
        (VLaw::LogPareto { index: 3.0 }, 200),
        (VLaw::LogPareto { index: 1.0 }, 10_000),
    ];
    for (v_law, n) in laws {
        let r = series_moment_probe(&SeriesParams { v_law, partial_terms: n, ..base }, 20, 1)?;
        println!(
            "{v_law:?}, N = {n}: finite log-moment {}, median tail increments {:.3e} then {:.3e}, diverging {:.2}",
            r.log_moment_finite, r.median_increment_1, r.median_increment_2, r.diverging_fraction
        );
    }
    Ok(())
}
