//! Drives the batch runner from a config string, as the binary does.

use bpire::config::parse_config;
use bpire::runner::run;

const CONFIG: &str = r#"
kind = "classify"
seed = 1
replicas = 200
horizons = [100, 1000]
workers = 2

[environment.p_law]
family = "two-point"
a = 0.3333333333333333
weight = 0.5

[environment.m_law]
family = "heavy-tail"
lambda = 1.0

[bpire]
mode = "one-ancestor"
"#;

fn main() -> bpire::Result<()> {
    let mut config = parse_config(CONFIG)?;
    config.out_dir = std::env::temp_dir().join("bpire-run-experiment");
    let report = run(&config);
    println!("exit {} -> {}", report.exit_code, report.out_dir.display());
    if let Some(s) = report.summary {
        println!("verdict {}, empirical {}", s["verdict"], s["empirical_verdict"]);
    }
    println!("{}", std::fs::read_to_string(config.out_dir.join("rows.csv"))?);
    Ok(())
}
