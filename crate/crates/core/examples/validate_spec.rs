//! Checks a few environments against the model assumptions.

use bpire::env::{validate_spec, EnvironmentSpec, MLaw, PLaw};

fn main() {
    let specs = [
        ("heavy tail, lambda = 3", EnvironmentSpec::heavy_tail_example(3.0)),
        ("p = 1/2 everywhere", EnvironmentSpec::new(PLaw::constant(0.5), MLaw::Poisson { mean: 1.0 })),
        ("drift to the left", EnvironmentSpec::new(PLaw::constant(0.4), MLaw::Constant { value: 1 })),
        ("logit-uniform p", EnvironmentSpec::new(PLaw::LogitUniform { half_width: 2.0 }, MLaw::Poisson { mean: 0.5 })),
    ];
    for (name, spec) in specs {
        let report = validate_spec(&spec);
        println!("{name}: regime {:?}, valid {}", spec.regime(), report.is_valid());
        for v in &report.violations {
            println!("  {}", v.message);
        }
        if let Some(t) = report.tail_exponent {
            println!("  immigration tail exponent {t}");
        }
    }
}
