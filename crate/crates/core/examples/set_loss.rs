//! Matching predictions to ground truth and the resulting training loss.
//!
//! cargo run --example set_loss

use transtrack::geometry::CenterBox;
use transtrack::losses::{optimal_match, pair_cost, set_loss_with_grad, GroundTruth, LossWeights, Prediction};

fn pred(cx: f64, cy: f64, p: f64) -> Prediction {
    Prediction { bbox: CenterBox { cx, cy, w: 0.2, h: 0.3 }, class_probs: vec![p] }
}

fn main() {
    let w = LossWeights::default();
    let preds = [pred(0.7, 0.5, 0.6), pred(0.2, 0.3, 0.8), pred(0.5, 0.9, 0.1)];
    let gts = [
        GroundTruth { bbox: CenterBox { cx: 0.22, cy: 0.31, w: 0.2, h: 0.3 }, class_id: 0 },
        GroundTruth { bbox: CenterBox { cx: 0.68, cy: 0.52, w: 0.18, h: 0.3 }, class_id: 0 },
    ];
    println!("pair costs:");
    for (i, p) in preds.iter().enumerate() {
        let row: Vec<String> = gts.iter().map(|g| format!("{:7.3}", pair_cost(p, g, &w))).collect();
        println!("  pred {i}: {}", row.join(" "));
    }
    let m = optimal_match(&preds, &gts, &w);
    println!("matched (pred, gt) {:?}; background {:?}", m.pairs, m.unmatched_rows);

    let out = set_loss_with_grad(&preds, &gts, &w);
    println!("loss {:.4}", out.loss);
    for (i, (db, dp)) in out.d_boxes.iter().zip(&out.d_probs).enumerate() {
        println!("  d/d pred {i}: box {:+.3?} prob {:+.3?}", db, dp);
    }
}
