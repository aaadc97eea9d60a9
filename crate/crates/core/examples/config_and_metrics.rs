//! Config text in, metrics CSV out: layers a small override over the
//! lone-HQ preset, runs it, and prints the start of the metrics file.

use hetlora::cli::{parse_config, render_config, run_to_file};

const CONFIG: &str = r#"
preset = "lone-hq"
seed = 3
rounds = 4

[federation]
strategy = "replication"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(CONFIG)?;
    println!("effective config:\n{}", render_config(&cfg));

    let dir = std::env::temp_dir().join("hetlora-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("metrics.csv");
    run_to_file(&cfg, &path)?;
    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().filter(|l| !l.starts_with('#')).take(6) {
        println!("{line}");
    }
    println!("... written to {}", path.display());

    match parse_config("[federation]\nr_low = 20\nr_high = 5\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
