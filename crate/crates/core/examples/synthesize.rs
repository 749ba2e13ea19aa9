//! Generating a scenario and simulating an adjacent frame from a still.
//!
//! cargo run --example synthesize -- [seed]

use transtrack::synth::{generate, perturb_static, PerturbRanges, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let spec = ScenarioSpec::parse(&format!(
        "# a small busy scene
        num_frames = 12
        num_objects = 3
        center_jitter = 1.5
        miss_prob = 0.1
        occlusions = 2:4-6
        seed = {seed}"
    ))?;
    let s = generate(&spec)?;
    for f in s.gt.iter().take(6) {
        let dets = &s.dets[f.frame - 1];
        let line: Vec<String> = f.entries.iter().map(|e| format!("{}@({:.0},{:.0}){}", e.id, e.bbox.left, e.bbox.top, if e.visibility == 0.0 { "*" } else { "" })).collect();
        println!("frame {:2}: gt {}  | {} dets", f.frame, line.join(" "), dets.entries.len());
    }
    println!("(* = occluded)");

    let grid = &s.features[0];
    println!("\nfeature grid {}x{}x{}; objectness by cell:", grid.height, grid.width, grid.channels);
    for r in 0..grid.height {
        let row: Vec<String> = (0..grid.width).map(|c| format!("{:.2}", grid.at(r, c, 0))).collect();
        println!("  {}", row.join(" "));
    }

    let still = s.static_frame(1);
    let ranges = PerturbRanges { scale: (0.9, 1.1), translate: (-10.0, 10.0) };
    let (moved, t) = perturb_static(&still, &ranges, seed);
    println!("\nsimulated next frame: scale {:.3}, shift ({:.1}, {:.1})", t.scale, t.tx, t.ty);
    for (a, b) in still.objects.iter().zip(&moved.objects) {
        println!("  object {}: ({:.1},{:.1}) -> ({:.1},{:.1})", a.id, a.bbox.left, a.bbox.top, b.bbox.left, b.bbox.top);
    }
    Ok(())
}
