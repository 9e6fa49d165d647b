//! Ladder epochs of the log-mean walk, the composed generating functions of
//! each block, and the tail of the first epoch.

use bpire::branching::{BranchingSim, Generation};
use bpire::env::EnvironmentSpec;
use bpire::ladder::{ladder_tail_estimate, LadderDecomposition};
use bpire::rng::{Lane, StreamKey};

fn main() -> bpire::Result<()> {
    let spec = EnvironmentSpec::heavy_tail_example(3.0);
    let key = StreamKey::new(11, 0, Lane::Environment);
    let sim = BranchingSim::new(&spec);
    let gens: Vec<Generation> = (1..=40).map(|n| sim.generation(&key, n)).collect();
    let mut rng = key.with_lane(Lane::Ladder).stream(1);
    let d = LadderDecomposition::build(&gens, gens.len(), spec.exact_threshold, &mut rng)?;
    println!("epochs {:?} (last block incomplete: {})", d.epochs.epochs, d.epochs.incomplete);
    for b in d.blocks.iter().take(5) {
        println!(
            "block {}..{}: log mean {:.3}, pgf(0.5) = {:.4}, immigrants {:?}",
            b.start,
            b.end,
            b.log_mean(),
            b.pgf(0.5)?,
            b.immigrants
        );
    }
    let table = ladder_tail_estimate(&spec, 64, 100_000, 1)?;
    for n in [4, 16, 64] {
        let row = table.at(n).unwrap();
        println!("P[L > {n}] = {:.4} +- {:.4}, sqrt(n) P = {:.3}", row.survival, row.std_error, row.scaled);
    }
    Ok(())
}
