//! The random difference equation, its dual, and the frequency of growth
//! events for the two sides of the heavy-tail example.

use bpire::env::EnvironmentSpec;
use bpire::recursion::{dual_w, growth_event_frequency, sample_envs, ArPath, GrowthProcess};
use bpire::rng::{Lane, StreamKey};

fn main() -> bpire::Result<()> {
    let spec = EnvironmentSpec::heavy_tail_example(1.0);
    let envs = sample_envs(&spec, 10, &StreamKey::new(3, 0, Lane::Environment));
    let x = ArPath::from_envs(envs.clone());
    println!("ln X_10 = {:.3}, ln W_10 = {:.3}", x.ln_xs[10], dual_w(&envs, 10)?);

    for lambda in [1.0, 3.0] {
        let spec = EnvironmentSpec::heavy_tail_example(lambda);
        let rows = growth_event_frequency(&spec, &[100, 1000], 400, 9, GrowthProcess::Difference)?;
        for r in rows {
            println!("lambda {lambda}: P[X_{} > e^sqrt(n)] = {:.3} +- {:.3}", r.n, r.fraction, r.std_error);
        }
    }
    Ok(())
}
