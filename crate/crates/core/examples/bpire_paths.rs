//! Simulates the branching process in random environment and compares the
//! two constructions of its law on a small frozen environment.

use bpire::branching::exact::{lines_law, recursion_laws, ExactGeneration};
use bpire::branching::{simulate, StartMode};
use bpire::env::EnvironmentSpec;
use bpire::rng::{Lane, StreamKey};

fn main() -> bpire::Result<()> {
    let spec = EnvironmentSpec::heavy_tail_example(1.5);
    for r in 0..3 {
        let key = StreamKey::new(7, r, Lane::Environment);
        let path = simulate(&spec, 1000, StartMode::OneAncestor, &key)?;
        let last = path.populations.last().unwrap();
        println!(
            "replica {r}: ln Z_1000 = {:.2}, first zero at {:?}, log-domain used: {}",
            last.ln(),
            path.hit_zero_at,
            path.approximate
        );
        assert_eq!(path.regenerate(500, spec.exact_threshold)?, path.populations[500]);
    }

    let gens = [
        ExactGeneration::new(vec![0.4, 0.6], 1),
        ExactGeneration::new(vec![0.7, 0.3], 0),
        ExactGeneration::new(vec![0.2, 0.8], 1),
    ];
    let by_recursion = recursion_laws(0, &gens).pop().unwrap();
    let by_lines = lines_law(0, &gens);
    println!("P[Z_3 = k] by recursion: {by_recursion:.4?}");
    println!("P[Z_3 = k] by lines:     {by_lines:.4?}");
    Ok(())
}
