use super::*;
use crate::data::generate_dataset;
use crate::model::{LinkMode, ModelConfig};

fn bx(v: [f64; 4]) -> Xyxy<f64> {
    Xyxy(v)
}

fn trip(scene: u64, h: [f64; 4], o: [f64; 4], class: usize, action: usize, score: f64) -> ScoredTriplet<f64> {
    ScoredTriplet {
        scene_id: scene,
        human_box: bx(h),
        object_box: bx(o),
        object_class: class,
        action,
        score,
    }
}

fn gt(scene: u64, h: [f64; 4], o: [f64; 4], class: usize, actions: &[bool]) -> GtInstance<f64> {
    GtInstance {
        scene_id: scene,
        human_box: bx(h),
        object_box: bx(o),
        object_class: class,
        actions: actions.to_vec(),
    }
}

const H: [f64; 4] = [0.1, 0.1, 0.4, 0.5];
const O: [f64; 4] = [0.4, 0.2, 0.7, 0.5];

#[test]
fn iou_hand_values() {
    assert_eq!(iou(bx([0.0, 0.0, 2.0, 2.0]), bx([0.0, 0.0, 2.0, 2.0])).unwrap(), 1.0);
    assert!((iou(bx([0.0, 0.0, 2.0, 2.0]), bx([1.0, 1.0, 3.0, 3.0])).unwrap() - 1.0 / 7.0).abs() < 1e-15);
    assert_eq!(iou(bx([0.0, 0.0, 1.0, 1.0]), bx([2.0, 2.0, 3.0, 3.0])).unwrap(), 0.0);
    assert!(matches!(iou(bx([0.0, 0.0, 0.0, 1.0]), bx(H)), Err(Error::Degenerate(_))));
}

#[test]
fn nms_hand_cases() {
    let a = trip(0, H, O, 1, 0, 0.9);
    let b = trip(0, H, O, 1, 0, 0.8);
    assert_eq!(pairwise_nms(&[b.clone(), a.clone()], 0.7).unwrap(), vec![a.clone()]);
    let other_action = trip(0, H, O, 1, 1, 0.8);
    assert_eq!(pairwise_nms(&[a.clone(), other_action.clone()], 0.7).unwrap().len(), 2);
    let other_scene = trip(1, H, O, 1, 0, 0.8);
    assert_eq!(pairwise_nms(&[a.clone(), other_scene], 0.7).unwrap().len(), 2);
    assert!(pairwise_nms(&[a], 0.0).is_err());
}

#[test]
fn nms_chain_keeps_both_ends() {
    // a overlaps b and b overlaps c, but a and c are far apart.
    let shift = |d: f64, v: [f64; 4]| [v[0] + d, v[1], v[2] + d, v[3]];
    let a = trip(0, H, O, 0, 0, 0.9);
    let b = trip(0, shift(0.02, H), shift(0.02, O), 0, 0, 0.8);
    let c = trip(0, shift(0.04, H), shift(0.04, O), 0, 0, 0.7);
    let ts = [c.clone(), a.clone(), b.clone()];
    let thr = 0.85;
    assert!(iou(a.human_box, b.human_box).unwrap() > thr && iou(b.human_box, c.human_box).unwrap() > thr);
    assert!(iou(a.human_box, c.human_box).unwrap() < thr);
    let kept = pairwise_nms(&ts, thr).unwrap();
    assert_eq!(kept, vec![a, c]);
}

#[test]
fn role_map_hand_cases() {
    let g = [gt(0, H, O, 1, &[true, false])];
    let exact = trip(0, H, O, 1, 0, 0.9);
    let r = role_map(std::slice::from_ref(&exact), &g, 2, 0.5).unwrap();
    assert_eq!(r.per_action, vec![Some(1.0), None]);
    assert_eq!(r.mean_ap, Some(1.0));

    let r = role_map::<f64>(&[], &g, 2, 0.5).unwrap();
    assert_eq!(r.per_action, vec![Some(0.0), None]);

    let wrong = trip(0, [0.6, 0.6, 0.9, 0.9], O, 1, 0, 0.95);
    let r = role_map(&[exact.clone(), wrong], &g, 2, 0.5).unwrap();
    assert_eq!(r.per_action[0], Some(0.5));

    let wrong_class = trip(0, H, O, 2, 0, 0.9);
    assert_eq!(role_map(&[wrong_class], &g, 2, 0.5).unwrap().mean_ap, Some(0.0));

    let r = role_map::<f64>(&[exact], &[], 2, 0.5).unwrap();
    assert_eq!(r.mean_ap, None);
    assert_eq!(evaluate_triplets::<f64>(&[], &[], 3, 0.5).unwrap(), EvalReport::empty(3));
}

#[test]
fn detection_hand_cases() {
    let g = [gt(0, H, O, 1, &[true, true]), gt(1, H, O, 0, &[false, true])];
    let perfect = [
        trip(0, H, O, 1, 0, 0.9),
        trip(0, H, O, 1, 1, 0.8),
        trip(1, H, O, 0, 1, 0.7),
    ];
    let (h, o) = detection_metrics(&perfect, &g, 0.5).unwrap();
    for r in [h, o] {
        assert_eq!((r.recall, r.precision, r.map), (Some(1.0), 1.0, Some(1.0)));
    }
    let (h, o) = detection_metrics::<f64>(&[], &g, 0.5).unwrap();
    assert_eq!((h.recall, h.precision, h.map), (Some(0.0), 0.0, Some(0.0)));
    assert_eq!(o.map, Some(0.0));
    let report = evaluate_triplets(&perfect, &g, 2, 0.5).unwrap();
    assert_eq!(report.role.mean_ap, Some(1.0));
    let table = report.table();
    assert!(table.starts_with("metric\tvalue\nrole_ap.0\t1\n"));
    assert!(table.contains("object_map\t1\n"));
}

fn toy() -> (HodnParams<f64>, Vec<SceneSample<f64>>) {
    let cfg = ModelConfig::default();
    let params = HodnParams::init(&cfg, LinkMode::HumanGuide, 3).unwrap();
    (params, generate_dataset(40, 3, &cfg).unwrap())
}

#[test]
fn scores_are_probabilities() {
    let (params, data) = toy();
    let preds = predict(&params, &data[0].grid).unwrap();
    let ts = score_predictions(data[0].scene_id, &preds);
    assert_eq!(ts.len(), params.config.queries * params.config.actions);
    for t in &ts {
        assert!(t.score > 0.0 && t.score < 1.0);
        assert!(t.object_class < params.config.object_classes);
        assert!(t.human_box.0.iter().chain(&t.object_box.0).all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn zero_probability_probe_is_the_identity() {
    let (params, data) = toy();
    let (report, _) = evaluate(&params, &data, 0.7, 0.5).unwrap();
    let probe = masking_probe(&data, &params, &[MaskTarget::Human, MaskTarget::Object], 0.0, 9, 0.7, 0.5).unwrap();
    assert_eq!(probe.masked_cells, 0);
    assert_eq!(probe.map.map(f64::to_bits), report.role.mean_ap.map(f64::to_bits));
}

#[test]
fn full_human_mask_blanks_human_boxes() {
    let (_, data) = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in &data {
        let (m, cells) = mask_scene(s, &[MaskTarget::Human], 1.0, &mut rng).unwrap();
        let (c, h, w) = (s.grid.shape()[0], s.grid.shape()[1], s.grid.shape()[2]);
        let area: f64 = s.triplets.iter().map(|t| t.human_box.0[2] * t.human_box.0[3]).sum();
        assert_eq!(cells, (area * (h * w) as f64).round() as usize);
        let mut zeroed = 0;
        for cell in 0..h * w {
            let (r, col) = (cell / w, cell % w);
            let (cx, cy) = ((col as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64);
            let inside = s.triplets.iter().any(|t| {
                let [x1, y1, x2, y2] = t.human_box.to_xyxy().0;
                x1 < cx && cx < x2 && y1 < cy && cy < y2
            });
            for ch in 0..c {
                let (before, after) = (s.grid.data()[ch * h * w + cell], m.grid.data()[ch * h * w + cell]);
                if inside {
                    assert_eq!(after, 0.0);
                } else {
                    assert_eq!(after, before);
                }
            }
            zeroed += usize::from(inside);
        }
        assert_eq!(zeroed, cells);
    }
    assert!(mask_scene(&data[0], &[MaskTarget::Human], 1.5, &mut rng).is_err());
}

#[test]
fn dump_lines_have_twelve_fields() {
    let ts = [trip(4, H, O, 1, 0, 0.25)];
    let mut buf = Vec::new();
    write_dump(&mut buf, &ts).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let fields: Vec<&str> = text.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 12);
    assert_eq!(fields[0], "4");
    assert_eq!(fields[1].parse::<f64>().unwrap(), 0.1);
    assert_eq!(&fields[9..11], ["1", "0"]);
    assert_eq!(fields[11].parse::<f64>().unwrap(), 0.25);
}
