//! Prints the measured ranges of the frozen structural constants.
//!
//! `cargo run --release -p lagflow-core --example measure_constants [samples]`

use lagflow_core::orlicz::{certify_lemmas, CertifyOptions};

fn main() {
    let samples = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4_000_000);
    let opts = CertifyOptions {
        samples,
        seed: 1,
        ..CertifyOptions::default()
    };
    let r = certify_lemmas(&opts).expect("valid options");
    for c in &r.constants {
        println!(
            "{:24} p={} delta={} measured [{:.5}, {:.5}] frozen [{}, {}] within={}",
            c.name, c.p, c.delta, c.measured_min, c.measured_max, c.frozen_low, c.frozen_high, c.within
        );
    }
    for t in r.tallies.iter().filter(|t| t.violations > 0) {
        println!("violation: {t:?}");
    }
}
