//! Trains the toy network on simulated frame pairs, then tracks held-out
//! pairs with it.
//!
//! cargo run --release --example train_toy -- [epochs] [pairs] [checkpoint]

use std::time::Instant;
use transtrack::toynet::{evaluate_pairs, save, train_toy_with, DatasetSpec, ModelConfig, ModelParams, ToyNetProvider, TrainConfig};
use transtrack::tracker::{PayloadKind, TrackerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(TrainConfig::default().epochs), |s| s.parse())?;
    let pairs = args.get(2).map_or(Ok(DatasetSpec::default().pairs), |s| s.parse())?;

    let data = DatasetSpec { pairs, ..DatasetSpec::default() }.build()?;
    let held = DatasetSpec { pairs: 64, seed: 1, ..DatasetSpec::default() }.build()?;
    let init = ModelParams::init(ModelConfig::default(), 0)?;
    println!("{} parameters, {} pairs", init.num_scalars(), data.len());

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = Instant::now();
    let report = train_toy_with(&init, &data, &cfg, |e, l, _| println!("epoch {e:3}  loss {l:.4}  {:.0?}", start.elapsed()))?;
    println!("loss {:.4} -> {:.4}", report.history[0], report.history.last().unwrap());

    let tcfg = TrackerConfig { payload: PayloadKind::TrackQuery, score_thresh: ToyNetProvider::SCORE_THRESH, ..TrackerConfig::default() };
    let r = evaluate_pairs(&report.params, &held, tcfg, 0.5)?;
    println!("held-out MOTA {:.1}  FP {}  FN {}  IDSW {}  IDF1 {:.1}", r.mota, r.false_positives, r.false_negatives, r.id_switches, r.idf1);

    if let Some(path) = args.get(3) {
        save(&report.params, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
