//! Track rebirth: a tracklet that misses frames keeps its ID for up to K
//! frames, then a returning object gets a new one.
//!
//! cargo run --example rebirth -- [K]

use transtrack::geometry::BBox;
use transtrack::motion::FrozenBoxPropagator;
use transtrack::tracker::{plain_frames, run_sequence, Detection, ScriptedDetector, TrackerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k: u32 = std::env::args().nth(1).map_or(Ok(32), |s| s.parse())?;
    let cfg = TrackerConfig { rebirth_k: k, ..TrackerConfig::default() };
    let b = BBox::new(50.0, 50.0, 30.0, 60.0);
    for gap in [1, k / 2, k, k + 1, k + 8] {
        // seen on frame 1, missing for `gap` frames, seen again
        let n = gap as usize + 2;
        let mut script = ScriptedDetector::default();
        script.frames.insert(1, vec![Detection::new(b, 0.9)]);
        script.frames.insert(n, vec![Detection::new(b, 0.9)]);
        let out = run_sequence(&plain_frames(n), &mut FrozenBoxPropagator, &mut script, cfg)?;
        let id = out.last().and_then(|f| f.tracks.first()).map(|t| t.id);
        println!("gap {gap:3}: returning object gets id {:?} ({})", id, if id == Some(1) { "kept" } else { "new" });
    }
    Ok(())
}
