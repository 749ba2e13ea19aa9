//! Set-prediction matching cost and training loss.
//!
//! Each prediction carries a normalized center-form box and independent
//! per-class probabilities. A matched pair costs
//! `lambda_cls * focal + lambda_l1 * |box - gt|_1 + lambda_giou * (1 - giou)`.
//! The training loss applies the same terms to optimally matched pairs,
//! treats every unmatched prediction as background and divides by the
//! number of ground-truth objects.

use crate::assignment::{solve_min_cost, Assignment, CostMatrix};
use crate::geometry::{giou_center_with_grad, giou_corners, CenterBox};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bbox: CenterBox,
    pub class_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: CenterBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_cls: 2.0, lambda_l1: 5.0, lambda_giou: 2.0, focal_alpha: 0.25, focal_gamma: 2.0 }
    }
}

impl LossWeights {
    pub fn is_valid(&self) -> bool {
        [self.lambda_cls, self.lambda_l1, self.lambda_giou, self.focal_alpha, self.focal_gamma]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary focal loss of a single probability.
pub fn focal_loss(prob: f64, is_positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = clamp_prob(prob);
    if is_positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_loss`] with respect to the unclamped probability
/// (zero where the clamp is active).
pub fn focal_loss_grad(prob: f64, is_positive: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&prob) {
        return 0.0;
    }
    let p = prob;
    let pow_m1 = |x: f64| if gamma == 0.0 { 0.0 } else { gamma * x.powf(gamma - 1.0) };
    if is_positive {
        // -a (1-p)^g ln p
        alpha * (pow_m1(1.0 - p) * p.ln() - (1.0 - p).powf(gamma) / p)
    } else {
        // -(1-a) p^g ln(1-p)
        -(1.0 - alpha) * (pow_m1(p) * (1.0 - p).ln() - p.powf(gamma) / (1.0 - p))
    }
}

fn l1(a: &CenterBox, b: &CenterBox) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).sum()
}

fn giou_center(a: &CenterBox, b: &CenterBox) -> f64 {
    giou_corners(a.corners(), b.corners())
}

fn prob_of(pred: &Prediction, class_id: usize) -> f64 {
    pred.class_probs.get(class_id).copied().unwrap_or(0.0)
}

/// Matching cost of one prediction against one ground-truth object.
pub fn pair_cost(pred: &Prediction, gt: &GroundTruth, w: &LossWeights) -> f64 {
    let cls = focal_loss(prob_of(pred, gt.class_id), true, w.focal_alpha, w.focal_gamma);
    w.lambda_cls * cls + w.lambda_l1 * l1(&pred.bbox, &gt.bbox) + w.lambda_giou * (1.0 - giou_center(&pred.bbox, &gt.bbox))
}

/// Optimal bipartite matching of predictions (rows) to ground truth (columns).
pub fn optimal_match(preds: &[Prediction], gts: &[GroundTruth], w: &LossWeights) -> Assignment {
    let costs = CostMatrix::from_fn(preds.len(), gts.len(), |i, j| {
        let c = pair_cost(&preds[i], &gts[j], w);
        if c.is_finite() {
            c
        } else {
            f64::MAX / 4.0
        }
    })
    .expect("pair costs are finite");
    solve_min_cost(&costs)
}

/// Loss value and its gradient with respect to each prediction's box and
/// class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub d_boxes: Vec<[f64; 4]>,
    pub d_probs: Vec<Vec<f64>>,
}

/// Training loss for a fixed matching.
pub fn set_loss_for_assignment(
    preds: &[Prediction],
    gts: &[GroundTruth],
    assignment: &Assignment,
    w: &LossWeights,
) -> LossWithGrad {
    let norm = gts.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_boxes = vec![[0.0; 4]; preds.len()];
    let mut d_probs: Vec<Vec<f64>> = preds.iter().map(|p| vec![0.0; p.class_probs.len()]).collect();
    let mut target: Vec<Option<&GroundTruth>> = vec![None; preds.len()];
    for &(i, j) in &assignment.pairs {
        target[i] = Some(&gts[j]);
    }

    for (i, pred) in preds.iter().enumerate() {
        let positive_class = target[i].map(|g| g.class_id);
        for (c, &p) in pred.class_probs.iter().enumerate() {
            let positive = positive_class == Some(c);
            loss += w.lambda_cls * focal_loss(p, positive, w.focal_alpha, w.focal_gamma);
            d_probs[i][c] = w.lambda_cls * focal_loss_grad(p, positive, w.focal_alpha, w.focal_gamma) / norm;
        }
        let Some(gt) = target[i] else { continue };
        let a = pred.bbox.to_array();
        let b = gt.bbox.to_array();
        for k in 0..4 {
            loss += w.lambda_l1 * (a[k] - b[k]).abs();
            let sign = if a[k] > b[k] {
                1.0
            } else if a[k] < b[k] {
                -1.0
            } else {
                0.0
            };
            d_boxes[i][k] += w.lambda_l1 * sign / norm;
        }
        let (g, dg) = giou_center_with_grad(&pred.bbox, &gt.bbox);
        loss += w.lambda_giou * (1.0 - g);
        for k in 0..4 {
            d_boxes[i][k] -= w.lambda_giou * dg[k] / norm;
        }
    }
    LossWithGrad { loss: loss / norm, d_boxes, d_probs }
}

/// Set-prediction training loss under the optimal matching.
pub fn set_loss(preds: &[Prediction], gts: &[GroundTruth], w: &LossWeights) -> f64 {
    let assignment = optimal_match(preds, gts, w);
    set_loss_for_assignment(preds, gts, &assignment, w).loss
}

/// [`set_loss`] together with its gradient (matching held fixed).
pub fn set_loss_with_grad(preds: &[Prediction], gts: &[GroundTruth], w: &LossWeights) -> LossWithGrad {
    let assignment = optimal_match(preds, gts, w);
    set_loss_for_assignment(preds, gts, &assignment, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{giou, iou};
    use crate::rng::SeededRng;

    fn pred(b: [f64; 4], p: f64) -> Prediction {
        Prediction { bbox: CenterBox::from_array(b), class_probs: vec![p] }
    }

    fn gt(b: [f64; 4]) -> GroundTruth {
        GroundTruth { bbox: CenterBox::from_array(b), class_id: 0 }
    }

    #[test]
    fn focal_examples() {
        assert!(focal_loss(1.0, true, 0.25, 2.0) < 1e-15);
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((focal_loss(0.5, true, 0.25, 2.0) - expected).abs() < 1e-15);
        assert!((focal_loss(0.5, true, 0.25, 2.0) - 0.043322).abs() < 1e-6);
        for p in [0.1, 0.3, 0.77] {
            assert!((focal_loss(p, true, 1.0, 0.0) + f64::ln(p)).abs() < 1e-15);
        }
    }

    #[test]
    fn focal_grad_matches_finite_differences() {
        for &positive in &[true, false] {
            for &gamma in &[0.0, 1.0, 2.0] {
                for &p in &[0.05, 0.4, 0.93] {
                    let h = 1e-7;
                    let fd = (focal_loss(p + h, positive, 0.25, gamma) - focal_loss(p - h, positive, 0.25, gamma)) / (2.0 * h);
                    let g = focal_loss_grad(p, positive, 0.25, gamma);
                    assert!((fd - g).abs() < 1e-6 * g.abs().max(1.0), "{positive} {gamma} {p}");
                }
            }
        }
    }

    #[test]
    fn pair_cost_examples() {
        let w = LossWeights::default();
        let b = [0.4, 0.5, 0.2, 0.3];
        assert!(pair_cost(&pred(b, 1.0), &gt(b), &w) < 1e-12);

        let only_l1 = LossWeights { lambda_cls: 0.0, lambda_l1: 1.0, lambda_giou: 0.0, ..w };
        let shifted = [0.5, 0.5, 0.2, 0.3];
        assert!((pair_cost(&pred(shifted, 0.3), &gt(b), &only_l1) - 0.1).abs() < 1e-12);

        // per-term oracle on pixel boxes of a 100x100 image
        let pa = CenterBox::from_array([0.3, 0.35, 0.2, 0.3]);
        let pb = CenterBox::from_array([0.35, 0.3, 0.3, 0.2]);
        let image = crate::geometry::ImageSize::new(100.0, 100.0).unwrap();
        let g = giou(&pa.to_pixels(image), &pb.to_pixels(image));
        let cls = -0.25 * (1.0f64 - 0.6).powi(2) * 0.6f64.ln();
        let l1 = 0.05 + 0.05 + 0.1 + 0.1;
        let expected = 2.0 * cls + 5.0 * l1 + 2.0 * (1.0 - g);
        let got = pair_cost(&Prediction { bbox: pa, class_probs: vec![0.6] }, &GroundTruth { bbox: pb, class_id: 0 }, &w);
        assert!((got - expected).abs() < 1e-12);
        assert!(iou(&pa.to_pixels(image), &pb.to_pixels(image)) > 0.0);
    }

    #[test]
    fn optimal_match_recovers_permutation() {
        let w = LossWeights::default();
        let boxes = [[0.2, 0.2, 0.1, 0.1], [0.7, 0.3, 0.2, 0.1], [0.4, 0.8, 0.1, 0.3]];
        let gts: Vec<_> = boxes.iter().map(|&b| gt(b)).collect();
        let perm = [2usize, 0, 1];
        let preds: Vec<_> = perm.iter().map(|&k| pred(boxes[k], 0.9)).collect();
        let a = optimal_match(&preds, &gts, &w);
        for (i, &k) in perm.iter().enumerate() {
            assert_eq!(a.col_for_row(i), Some(k));
        }

        let mut more = preds.clone();
        more.push(pred([0.5, 0.5, 0.1, 0.1], 0.1));
        let a = optimal_match(&more, &gts, &w);
        assert_eq!(a.pairs.len(), 3);
        assert_eq!(a.unmatched_rows, vec![3]);
    }

    #[test]
    fn optimal_match_is_brute_force_optimum() {
        let w = LossWeights::default();
        let mut rng = SeededRng::new(5);
        for _ in 0..50 {
            let mut rb = || [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)];
            let preds: Vec<_> = (0..3).map(|_| pred(rb(), 0.5)).collect();
            let gts: Vec<_> = (0..3).map(|_| gt(rb())).collect();
            let a = optimal_match(&preds, &gts, &w);
            let got: f64 = a.pairs.iter().map(|&(i, j)| pair_cost(&preds[i], &gts[j], &w)).sum();
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let best = perms
                .iter()
                .map(|p| (0..3).map(|i| pair_cost(&preds[i], &gts[p[i]], &w)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn set_loss_examples() {
        let w = LossWeights::default();
        let b = [0.4, 0.5, 0.2, 0.3];
        let perfect = set_loss(&[pred(b, 1.0)], &[gt(b)], &w);
        let floor = 2.0 * focal_loss(1.0, true, 0.25, 2.0);
        assert!((perfect - floor).abs() < 1e-15);

        let preds = [pred(b, 0.2), pred([0.1, 0.1, 0.1, 0.1], 0.7)];
        let empty = set_loss(&preds, &[], &w);
        let expected = 2.0 * (focal_loss(0.2, false, 0.25, 2.0) + focal_loss(0.7, false, 0.25, 2.0));
        assert!((empty - expected).abs() < 1e-15);

        // hand-summed oracle: two preds, two gts, obvious matching
        let p0 = [0.3, 0.3, 0.2, 0.2];
        let p1 = [0.7, 0.7, 0.2, 0.1];
        let g0 = [0.32, 0.3, 0.2, 0.25];
        let g1 = [0.7, 0.68, 0.25, 0.1];
        let preds = [pred(p1, 0.8), pred(p0, 0.6)];
        let gts = [gt(g0), gt(g1)];
        let term = |p: [f64; 4], g: [f64; 4], prob: f64| {
            let l1: f64 = (0..4).map(|k| (p[k] - g[k]).abs()).sum();
            let gi = giou_corners(CenterBox::from_array(p).corners(), CenterBox::from_array(g).corners());
            2.0 * focal_loss(prob, true, 0.25, 2.0) + 5.0 * l1 + 2.0 * (1.0 - gi)
        };
        let expected = (term(p0, g0, 0.6) + term(p1, g1, 0.8)) / 2.0;
        assert!((set_loss(&preds, &gts, &w) - expected).abs() < 1e-12);
    }

    #[test]
    fn set_loss_gradient_matches_finite_differences() {
        let w = LossWeights::default();
        let preds = vec![pred([0.31, 0.33, 0.2, 0.22], 0.6), pred([0.6, 0.7, 0.25, 0.1], 0.3), pred([0.5, 0.5, 0.1, 0.1], 0.2)];
        let gts = vec![gt([0.3, 0.3, 0.2, 0.25]), gt([0.65, 0.68, 0.2, 0.12])];
        let a = optimal_match(&preds, &gts, &w);
        let lg = set_loss_for_assignment(&preds, &gts, &a, &w);
        let h = 1e-7;
        for i in 0..preds.len() {
            for k in 0..4 {
                let mut hi = preds.clone();
                let mut lo = preds.clone();
                let mut v = hi[i].bbox.to_array();
                v[k] += h;
                hi[i].bbox = CenterBox::from_array(v);
                let mut v = lo[i].bbox.to_array();
                v[k] -= h;
                lo[i].bbox = CenterBox::from_array(v);
                let fd = (set_loss_for_assignment(&hi, &gts, &a, &w).loss - set_loss_for_assignment(&lo, &gts, &a, &w).loss) / (2.0 * h);
                assert!((fd - lg.d_boxes[i][k]).abs() < 1e-6, "box {i} coord {k}");
            }
            let mut hi = preds.clone();
            let mut lo = preds.clone();
            hi[i].class_probs[0] += h;
            lo[i].class_probs[0] -= h;
            let fd = (set_loss_for_assignment(&hi, &gts, &a, &w).loss - set_loss_for_assignment(&lo, &gts, &a, &w).loss) / (2.0 * h);
            assert!((fd - lg.d_probs[i][0]).abs() < 1e-5, "prob {i}");
        }
    }

    #[test]
    fn moving_box_toward_gt_decreases_loss() {
        let w = LossWeights::default();
        let gts = [gt([0.5, 0.5, 0.2, 0.2])];
        for k in 0..4 {
            let mut b = [0.5, 0.5, 0.2, 0.2];
            b[k] += 0.08;
            let mut prev = set_loss(&[pred(b, 0.7)], &gts, &w);
            for _ in 0..7 {
                b[k] -= 0.01;
                let next = set_loss(&[pred(b, 0.7)], &gts, &w);
                assert!(next < prev, "coord {k}");
                prev = next;
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pred() -> impl Strategy<Value = Prediction> {
            (0.1..0.9f64, 0.1..0.9f64, 0.02..0.4f64, 0.02..0.4f64, 0.0..1.0f64)
                .prop_map(|(a, b, c, d, p)| pred([a, b, c, d], p))
        }

        proptest! {
            #[test]
            fn loss_nonnegative_and_permutation_invariant(
                preds in proptest::collection::vec(arb_pred(), 0..6),
                gts_raw in proptest::collection::vec((0.1..0.9f64, 0.1..0.9f64, 0.02..0.4f64, 0.02..0.4f64), 0..4),
                rot in 0usize..6,
            ) {
                let w = LossWeights::default();
                let gts: Vec<_> = gts_raw.iter().map(|&(a, b, c, d)| gt([a, b, c, d])).collect();
                let l = set_loss(&preds, &gts, &w);
                prop_assert!(l >= 0.0);
                let mut rotated = preds.clone();
                if !rotated.is_empty() {
                    let r = rot % rotated.len();
                    rotated.rotate_left(r);
                }
                prop_assert!((set_loss(&rotated, &gts, &w) - l).abs() < 1e-9 * l.max(1.0));
            }

            #[test]
            fn matching_invariant_under_weight_scaling(
                preds in proptest::collection::vec(arb_pred(), 1..5),
                gts_raw in proptest::collection::vec((0.1..0.9f64, 0.1..0.9f64, 0.02..0.4f64, 0.02..0.4f64), 1..5),
                scale in 0.1..10.0f64,
            ) {
                let w = LossWeights::default();
                let scaled = LossWeights { lambda_cls: w.lambda_cls * scale, lambda_l1: w.lambda_l1 * scale, lambda_giou: w.lambda_giou * scale, ..w };
                let gts: Vec<_> = gts_raw.iter().map(|&(a, b, c, d)| gt([a, b, c, d])).collect();
                let a = optimal_match(&preds, &gts, &w);
                let b = optimal_match(&preds, &gts, &scaled);
                let cost = |asg: &Assignment| asg.pairs.iter().map(|&(i, j)| pair_cost(&preds[i], &gts[j], &w)).sum::<f64>();
                prop_assert!((cost(&a) - cost(&b)).abs() < 1e-9 * cost(&a).abs().max(1.0));
            }
        }
    }
}
