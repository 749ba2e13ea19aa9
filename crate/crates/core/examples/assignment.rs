//! Optimal assignment, IoU matching and greedy NMS.
//!
//! cargo run --example assignment

use transtrack::assignment::{match_by_iou, nms_merge, solve_min_cost, CostMatrix};
use transtrack::geometry::BBox;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // greedy row-by-row picking would take 1 then pay 9 for the second row
    let costs = CostMatrix::from_rows(&[vec![1.0, 2.0, 6.0], vec![3.0, 9.0, 5.0]])?;
    let a = solve_min_cost(&costs);
    println!("pairs {:?}, unmatched cols {:?}, cost {}", a.pairs, a.unmatched_cols, a.total_cost(&costs));

    let tracks = [BBox::new(0.0, 0.0, 20.0, 40.0), BBox::new(100.0, 0.0, 20.0, 40.0)];
    let dets = [
        BBox::new(104.0, 2.0, 20.0, 40.0),
        BBox::new(3.0, 1.0, 20.0, 40.0),
        BBox::new(250.0, 80.0, 20.0, 40.0),
    ];
    let m = match_by_iou(&dets, &tracks, 0.3);
    println!("\ndet -> track {:?}; new objects from dets {:?}; lost tracks {:?}", m.pairs, m.unmatched_rows, m.unmatched_cols);

    let scored = [
        (BBox::new(0.0, 0.0, 10.0, 10.0), 0.9),
        (BBox::new(1.0, 0.0, 10.0, 10.0), 0.8),
        (BBox::new(50.0, 50.0, 10.0, 10.0), 0.7),
        (BBox::new(0.0, 1.0, 10.0, 10.0), 0.95),
    ];
    println!("\nnms keeps {:?}", nms_merge(&scored, 0.5));
    Ok(())
}
