//! Provider, frame-stride, association and query-mode comparisons.
//!
//! cargo run --release --example ablation -- [checkpoint]

use transtrack::cli::{run_ablation, RunConfig};
use transtrack::toynet::load;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = std::env::args().nth(1).map(|p| load(p.as_ref())).transpose()?;
    let result = run_ablation(&RunConfig::default(), net.as_ref())?;
    print!("{}", result.to_table());
    Ok(())
}
