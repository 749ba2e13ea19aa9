//! Detection-only and track-only tracking against the full pipeline, with
//! the scenario itself as a perfect provider.
//!
//! cargo run --example query_modes

use transtrack::cli::{query_ablation, QueryAblation};
use transtrack::tracker::TrackerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = query_ablation(&QueryAblation::long_range_spec(), &QueryAblation::late_births_spec(), 4, TrackerConfig::default(), 0.5)?;
    print!("{}", q.to_table());
    println!("\nobject_only carries ids by query slot, so objects that move across regions switch ids;");
    println!("track_only only extends tracks started on frame 1, so later arrivals are never reported.");
    Ok(())
}
