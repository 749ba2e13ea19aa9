use std::collections::HashSet;

use proptest::prelude::*;
use transtrack::cli::{track_scenario, Provider};
use transtrack::geometry::BBox;
use transtrack::io::{outputs_to_annotations, parse_mot, write_results, FrameAnnotations, MotEntry, MotKind};
use transtrack::motion::KalmanParams;
use transtrack::synth::{generate, skip_sample, ScenarioSpec};
use transtrack::tracker::TrackerConfig;

fn entry(id: i64, l: i32, t: i32, w: u32, h: u32, c: u32) -> MotEntry {
    let bbox = BBox::new(l as f64 / 100.0, t as f64 / 100.0, (w + 1) as f64 / 100.0, (h + 1) as f64 / 100.0);
    MotEntry { id, bbox, conf: c as f64 / 100.0, class_id: 1, visibility: 1.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn results_survive_write_then_parse(
        rows in prop::collection::btree_map((1usize..30, 1i64..20), (-90_000i32..90_000, -90_000i32..90_000, 0u32..40_000, 0u32..40_000, 0u32..=100), 0..60)
    ) {
        let mut seq: Vec<FrameAnnotations> = Vec::new();
        for (&(frame, id), &(l, t, w, h, c)) in &rows {
            if seq.last().map(|f| f.frame) != Some(frame) {
                seq.push(FrameAnnotations { frame, entries: Vec::new() });
            }
            seq.last_mut().unwrap().entries.push(entry(id, l, t, w, h, c));
        }
        let text = write_results(&seq).unwrap();
        prop_assert_eq!(parse_mot(text.as_bytes(), MotKind::Result).unwrap(), seq);
    }

    #[test]
    fn generation_is_a_function_of_the_spec(seed in any::<u64>(), objects in 1usize..6) {
        let spec = ScenarioSpec { num_frames: 12, num_objects: objects, seed, ..ScenarioSpec::default() };
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        prop_assert_eq!(a.gt, b.gt);
        prop_assert_eq!(a.dets, b.dets);
    }

    #[test]
    fn tracker_ids_are_unique_per_frame_and_increase(seed in any::<u64>(), objects in 1usize..8, miss in 0.0f64..0.4) {
        let spec = ScenarioSpec { num_frames: 20, num_objects: objects, miss_prob: miss, seed, ..ScenarioSpec::default() };
        let s = generate(&spec).unwrap();
        let out = track_scenario(&s, &Provider::Kalman(KalmanParams::default()), TrackerConfig { rebirth_k: 3, ..TrackerConfig::default() }).unwrap();
        let mut seen: HashSet<u64> = HashSet::new();
        for f in &out {
            let ids: HashSet<u64> = f.tracks.iter().map(|t| t.id).collect();
            prop_assert_eq!(ids.len(), f.tracks.len());
            // a fresh id is larger than every id issued before it
            let top = seen.iter().copied().max().unwrap_or(0);
            for id in ids.difference(&seen) {
                prop_assert!(*id > top);
            }
            seen.extend(ids);
        }
        let res = outputs_to_annotations(&out);
        prop_assert!(write_results(&res).is_ok());
    }

    #[test]
    fn skip_sampling_keeps_every_stride_th_frame(n in 1usize..40, stride in 1usize..6) {
        let seq: Vec<FrameAnnotations> = (1..=n).map(|frame| FrameAnnotations { frame, entries: vec![entry(1, frame as i32, 0, 10, 10, 50)] }).collect();
        let sub = skip_sample(&seq, stride).unwrap();
        prop_assert_eq!(sub.len(), n.div_ceil(stride));
        for (i, f) in sub.iter().enumerate() {
            prop_assert_eq!(f.frame, i + 1);
            prop_assert_eq!(f.entries[0].bbox.left, (1 + i * stride) as f64 / 100.0);
        }
    }
}
