//! Regenerates the bundled compression fixture:
//!
//! ```text
//! cargo run -p parcall --example gen_fixtures
//! ```
//!
//! The output is deterministic for a fixed seed; rerunning after a
//! generator change rewrites `fixtures/compression_500.jsonl` and
//! prints the aggregate ratios so drift is visible before committing.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use parcall::harness::synth::compression_fixture_rows;

const SEED: u64 = 42;
const ROWS: usize = 500;

fn main() {
    let rows = compression_fixture_rows(SEED, ROWS);
    let mean_of_ratios: f64 = rows.iter().map(|r| r.cr).sum::<f64>() / rows.len() as f64;
    let ratio_of_means: f64 = rows.iter().map(|r| r.baseline_tokens as f64).sum::<f64>()
        / rows.iter().map(|r| r.bottleneck_tokens as f64).sum::<f64>();

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/compression_500.jsonl");
    let mut file = fs::File::create(&path).expect("fixture path is writable");
    for row in &rows {
        writeln!(file, "{}", serde_json::to_string(row).unwrap()).unwrap();
    }

    println!("wrote {} rows to {}", rows.len(), path.display());
    println!("mean of per-sample ratios : {mean_of_ratios:.4}");
    println!("ratio of means            : {ratio_of_means:.4}");
    assert!(
        (4.3..=5.4).contains(&mean_of_ratios) && (4.3..=5.4).contains(&ratio_of_means),
        "fixture drifted out of the 4.3-5.4 band; adjust the generator before committing"
    );
}
