#[path = "support/metrics_oracle.rs"]
mod oracle;

use aoi_core::bbox::BBox;
use aoi_core::detection::{Detection, ImagePredictions, LabeledBox};
use aoi_core::evalkit::{
    average_precision, evaluate, format_row, map_at_05, match_detections, render_table, split_dataset, ConfusionCounts,
    EvalImage, EvalReport, ReportOptions, SplitSpec,
};
use aoi_core::imgsynth::rng_for;
use aoi_core::manifest::{BoxEntry, ImageEntry, Manifest};
use oracle::{oracle_ap, oracle_map, oracle_match, random_instance};
use proptest::prelude::*;

#[test]
fn library_matches_brute_force_on_random_instances() {
    let mut rng = rng_for(2024);
    for case in 0..1000 {
        let images = random_instance(&mut rng, 2);
        for im in &images {
            let got = match_detections(&im.detections, &im.ground_truth, 0.5);
            let (tp, matched) = oracle_match(&im.detections, &im.ground_truth, 0.5);
            assert_eq!(got.det_tp, tp, "case {case}");
            assert_eq!(got.gt_matched, matched, "case {case}");
        }
        for c in 0..2 {
            match (average_precision(&images, c, 0.5), oracle_ap(&images, c, 0.5)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "case {case} class {c}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b, "case {case}"),
            }
        }
        match (map_at_05(&images, 2), oracle_map(&images, 2, 0.5)) {
            (Ok(m), Some(o)) => assert!((m.map - o).abs() <= 1e-12, "case {case}"),
            (Err(_), None) => {}
            (a, b) => panic!("case {case}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn two_class_map_is_mean() {
    let g = |x, class| LabeledBox { bbox: BBox::new(x, 0.0, 10.0, 10.0), class };
    let d = |x, class, c| Detection::new(BBox::new(x, 0.0, 10.0, 10.0), class, c);
    let images = [EvalImage {
        file: "a".into(),
        // class 0: perfect; class 1: one miss ranked first, then a hit on one of two boxes
        detections: vec![d(0.0, 0, 0.9), d(100.0, 1, 0.8), d(40.0, 1, 0.7)],
        ground_truth: vec![g(0.0, 0), g(40.0, 1), g(70.0, 1)],
    }];
    let m = map_at_05(&images, 2).unwrap();
    assert_eq!(m.per_class[0], Some(1.0));
    assert!((m.per_class[1].unwrap() - 0.25).abs() < 1e-15);
    assert!((m.map - 0.625).abs() < 1e-15);
    let one = map_at_05(&images[..], 1).unwrap();
    assert_eq!(one.map, 1.0);
}

proptest! {
    #[test]
    fn ap_depends_only_on_confidence_rank(seed in 0u64..5000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = rng_for(seed);
        let images = random_instance(&mut rng, 2);
        let warped: Vec<EvalImage> = images
            .iter()
            .map(|im| EvalImage {
                detections: im.detections.iter().map(|d| Detection { confidence: (d.confidence * scale).exp() + shift, ..*d }).collect(),
                ..im.clone()
            })
            .collect();
        for c in 0..2 {
            prop_assert_eq!(average_precision(&images, c, 0.5), average_precision(&warped, c, 0.5));
        }
    }

    #[test]
    fn rates_are_bounded(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        use aoi_core::evalkit::{f1, precision, recall};
        let c = ConfusionCounts { tp, fp, fn_, tn: None };
        for v in [precision(&c), recall(&c), f1(&c)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if precision(&c) * recall(&c) == 0.0 {
            prop_assert_eq!(f1(&c), 0.0);
        }
    }

    #[test]
    fn split_is_disjoint_cover(n in 3usize..400, seed in 0u64..1000) {
        let m = manifest_of(n);
        let s = split_dataset(&m, &SplitSpec { seed, ..Default::default() }).unwrap();
        prop_assert_eq!(s.train.images.len(), (n * 8) / 10);
        prop_assert_eq!(s.val.images.len(), n / 10);
        let mut all: Vec<String> = s.train.images.iter().chain(&s.val.images).chain(&s.test.images).map(|e| e.file.clone()).collect();
        all.sort();
        let mut want: Vec<String> = m.images.iter().map(|e| e.file.clone()).collect();
        want.sort();
        prop_assert_eq!(all, want);
    }
}

fn manifest_of(n: usize) -> Manifest {
    Manifest {
        images: (0..n)
            .map(|i| ImageEntry { file: format!("img_{i:05}.png"), width: 64, height: 64, boxes: vec![], provenance: None })
            .collect(),
        ..Default::default()
    }
}

#[test]
fn split_of_735_matches_published_sizes() {
    let s = split_dataset(&manifest_of(735), &SplitSpec::default()).unwrap();
    assert_eq!((s.train.images.len(), s.val.images.len(), s.test.images.len()), (588, 73, 74));
    let again = split_dataset(&manifest_of(735), &SplitSpec::default()).unwrap();
    assert_eq!(s, again);
}

#[test]
fn split_rejects_tiny_and_bad_fractions() {
    assert!(split_dataset(&manifest_of(2), &SplitSpec::default()).is_err());
    let bad = SplitSpec { fractions: [0.5, 0.5, 0.5], seed: 0 };
    assert!(split_dataset(&manifest_of(10), &bad).is_err());
}

fn table_fixture() -> EvalReport {
    EvalReport {
        model: "with augmentation".into(),
        map50: 0.913,
        per_class_ap: vec![Some(0.9), Some(0.926)],
        precision: 0.988,
        recall: 0.857,
        f1: 0.910,
        counts: ConfusionCounts::default(),
        image_level: ConfusionCounts::default(),
        detection_time_ms: Some(146.0),
        dataset: None,
        conf_threshold: 0.25,
        iou_threshold: 0.5,
    }
}

#[test]
fn table_row_format() {
    assert_eq!(format_row(&table_fixture()), "91.3% | 98.8% | 85.7% | 91.0% | 146 ms");
    let no_time = EvalReport { detection_time_ms: None, ..table_fixture() };
    assert!(format_row(&no_time).ends_with("| n/a"));
}

#[test]
fn table_and_json_agree() {
    let rows = vec![table_fixture(), EvalReport { model: "baseline".into(), map50: 0.5, detection_time_ms: None, ..table_fixture() }];
    let table = render_table(&rows);
    let json: Vec<EvalReport> = serde_json::from_str(&serde_json::to_string(&rows).unwrap()).unwrap();
    for (line, r) in table.lines().skip(2).zip(&json) {
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        assert_eq!(cells[0], r.model);
        let pct = |v: f64| format!("{:.1}%", v * 100.0);
        assert_eq!(&cells[1..5], &[pct(r.map50), pct(r.precision), pct(r.recall), pct(r.f1)]);
        assert_eq!(cells[5], r.detection_time_ms.map_or("n/a".into(), |t| format!("{t:.0} ms")));
    }
}

#[test]
fn evaluate_joins_predictions_by_file() {
    let mut m = manifest_of(3);
    m.images[0].boxes.push(BoxEntry { x: 0.0, y: 0.0, w: 10.0, h: 10.0, class: 0 });
    m.images[1].boxes.push(BoxEntry { x: 5.0, y: 5.0, w: 10.0, h: 10.0, class: 1 });
    let preds = vec![ImagePredictions {
        file: m.images[0].file.clone(),
        detections: vec![Detection::new(BBox::new(0.0, 0.0, 10.0, 10.0), 0, 0.9)],
        ms: None,
    }];
    let r = evaluate("m", &m, &preds, &ReportOptions::default()).unwrap();
    assert_eq!(r.counts, ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: None });
    assert_eq!(r.precision, 1.0);
    assert_eq!(r.recall, 0.5);
    assert_eq!(r.map50, 0.5);
    assert_eq!(r.image_level, ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: Some(1) });

    let empty = evaluate("m", &m, &[], &ReportOptions::default()).unwrap();
    assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));

    let stray = vec![ImagePredictions { file: "nope.png".into(), detections: vec![], ms: None }];
    assert!(evaluate("m", &m, &stray, &ReportOptions::default()).is_err());
}
