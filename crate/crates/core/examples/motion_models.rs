//! No-motion and Kalman propagation at full and reduced frame rate.
//!
//! cargo run --release --example motion_models

use transtrack::cli::{scenario_set, track_scenario, AblateSettings, Provider};
use transtrack::io::outputs_to_annotations;
use transtrack::metrics::{combine, evaluate, MotReport};
use transtrack::motion::KalmanParams;
use transtrack::tracker::TrackerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = scenario_set(&AblateSettings::crowded(), 10, 0)?;
    println!("{}", MotReport::table_header());
    for stride in [1, 2, 4, 8] {
        let sub = set.iter().map(|s| s.skip(stride)).collect::<Result<Vec<_>, _>>()?;
        for p in [Provider::None, Provider::Kalman(KalmanParams::default())] {
            let mut reports = Vec::new();
            for s in &sub {
                let out = track_scenario(s, &p, TrackerConfig::default())?;
                reports.push(evaluate(&s.visible_gt(), &outputs_to_annotations(&out), 0.5)?);
            }
            println!("{}", combine(&reports).table_row(&format!("{}/x{stride}", p.name())));
        }
    }
    Ok(())
}
