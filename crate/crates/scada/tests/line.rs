mod support;

use aoi_core::bbox::iou;
use aoi_core::bbox::BBox;
use aoi_scada::{LineMode, ScadaConfig, ScadaError, Simulator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use support::{constant_detector, laplacian_variance, small_config};

fn sim(cfg: ScadaConfig) -> Simulator {
    Simulator::new(cfg).unwrap()
}

#[test]
fn boots_stopped_at_zero() {
    let s = sim(small_config(100.0, 20.0)).state();
    assert_eq!(s.mode, LineMode::Stopped);
    assert_eq!(s.speed, 0.0);
    assert_eq!(s.sheet_position, 0.0);
    assert!(!s.inspection);
}

#[test]
fn stop_is_idempotent() {
    let mut s = sim(small_config(100.0, 20.0));
    let a = s.stop();
    let b = s.stop();
    assert_eq!(a, b);
    assert_eq!(b.mode, LineMode::Stopped);
}

#[test]
fn speed_survives_stop() {
    let mut s = sim(small_config(100.0, 20.0));
    s.start().unwrap();
    s.set_speed(50.0).unwrap();
    let st = s.stop();
    assert_eq!(st.mode, LineMode::Stopped);
    assert_eq!(st.speed, 50.0);
}

#[test]
fn second_start_conflicts() {
    let mut s = sim(small_config(100.0, 20.0));
    s.start().unwrap();
    assert!(matches!(s.start(), Err(ScadaError::Conflict(_))));
    assert_eq!(s.state().mode, LineMode::Running);
}

#[test]
fn invalid_speeds_rejected() {
    let mut s = sim(small_config(100.0, 20.0));
    for v in [-1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(s.set_speed(v), Err(ScadaError::Invalid(_))));
    }
    assert_eq!(s.state().speed, 0.0);
    assert!(matches!(s.set_conf_threshold(0.5), Err(ScadaError::NoDetector)));
}

#[test]
fn zero_speed_captures_nothing() {
    let mut s = sim(small_config(100.0, 20.0));
    s.start().unwrap();
    let out = s.tick(1.0).unwrap();
    assert_eq!(out.rows, 0);
    assert!(out.strip.is_none());
    assert_eq!(s.state().clock_us, 1_000_000);
}

#[test]
fn row_arithmetic() {
    let cfg = ScadaConfig { rows_per_mm: 4.0, mm_per_px: 0.25, ..small_config(100.0, 20.0) };
    let mut s = sim(cfg);
    s.set_speed(10.0).unwrap();
    s.start().unwrap();
    let out = s.tick(1.0).unwrap();
    assert_eq!(out.rows, 40);
    let strip = out.strip.unwrap();
    assert_eq!((strip.height(), strip.width()), (40, 80));
    assert_eq!(s.state().sheet_position, 10.0);
}

#[test]
fn unblurred_rows_are_the_sheet() {
    let mut s = sim(small_config(100.0, 20.0));
    s.set_speed(20.0).unwrap();
    s.start().unwrap();
    let out = s.tick(0.5).unwrap();
    assert_eq!(out.rows, 20);
    assert_eq!(out.strip.unwrap().pixels(), s.sheet().image.crop(0, 0, 20, 40).pixels());
}

#[test]
fn end_of_sheet_stops_and_next_start_loads_a_new_sheet() {
    let mut s = sim(small_config(100.0, 20.0));
    s.set_speed(150.0).unwrap();
    s.start().unwrap();
    let first = s.sheet().image.pixels().to_vec();
    let out = s.tick(1.0).unwrap();
    assert_eq!(out.rows, 200);
    assert!(out.end_of_sheet);
    let st = s.state();
    assert_eq!((st.mode, st.end_of_sheet, st.sheet_position), (LineMode::Stopped, true, 100.0));
    assert_eq!(s.tick(1.0).unwrap().rows, 0);
    let st = s.start().unwrap();
    assert_eq!((st.sheet, st.sheet_position, st.end_of_sheet), (1, 0.0, false));
    assert_ne!(s.sheet().image.pixels(), &first[..]);
}

#[test]
fn blur_lowers_laplacian_variance() {
    let s = sim(small_config(200.0, 100.0));
    assert_eq!(s.blur_rows(50.0), 1);
    assert!(s.blur_rows(300.0) > 1);
    let sharp = s.render_strip(100, 60, 50.0);
    let blurred = s.render_strip(100, 60, 300.0);
    let (a, b) = (laplacian_variance(&sharp), laplacian_variance(&blurred));
    assert!(b < a, "blurred {b} vs sharp {a}");
    assert!(s.blur_rows(600.0) > s.blur_rows(300.0));
    assert!(laplacian_variance(&s.render_strip(100, 60, 600.0)) < b);
}

#[derive(Clone, Debug)]
enum Op {
    Start,
    Stop,
    Speed(f64),
    Tick(f64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => Just(Op::Start),
        2 => Just(Op::Stop),
        3 => (-50.0..400.0f64).prop_map(Op::Speed),
        1 => prop_oneof![Just(f64::NAN), Just(f64::INFINITY), Just(0.0), Just(1e300)].prop_map(Op::Speed),
        8 => (0.0..0.4f64).prop_map(Op::Tick),
    ]
}

/// The transition table written out independently of the simulator.
#[derive(Debug)]
struct Reference {
    running: bool,
    speed: f64,
    rows: usize,
    total: u64,
    sheet: u64,
    end: bool,
    sheet_rows: usize,
    rows_per_mm: f64,
}

impl Reference {
    /// `Err(true)` for a conflict, `Err(false)` for a validation error.
    fn apply(&mut self, op: &Op) -> Result<usize, bool> {
        match *op {
            Op::Start if self.running => Err(true),
            Op::Start => {
                if self.end {
                    self.sheet += 1;
                    self.rows = 0;
                    self.end = false;
                }
                self.running = true;
                Ok(0)
            }
            Op::Stop => {
                self.running = false;
                Ok(0)
            }
            Op::Speed(v) if v < 0.0 || !v.is_finite() => Err(false),
            Op::Speed(v) => {
                self.speed = v;
                Ok(0)
            }
            Op::Tick(_) if !self.running => Ok(0),
            Op::Tick(dt) => {
                let n = ((self.speed * dt * self.rows_per_mm).floor() as usize).min(self.sheet_rows - self.rows);
                self.rows += n;
                self.total += n as u64;
                if n > 0 && self.rows == self.sheet_rows {
                    self.end = true;
                    self.running = false;
                }
                Ok(n)
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn matches_reference_state_machine(ops in prop::collection::vec(op(), 10_000)) {
        let cfg = small_config(100.0, 20.0);
        let mut s = sim(cfg.clone());
        let mut r = Reference {
            running: false, speed: 0.0, rows: 0, total: 0, sheet: 0, end: false,
            sheet_rows: cfg.sheet_rows(), rows_per_mm: cfg.rows_per_mm,
        };
        let mut last_pos = 0.0;
        for (i, op) in ops.iter().enumerate() {
            let was_running = s.state().mode == LineMode::Running;
            let got = match *op {
                Op::Start => s.start().map(|_| 0),
                Op::Stop => Ok({ s.stop(); 0 }),
                Op::Speed(v) => s.set_speed(v).map(|_| 0),
                Op::Tick(dt) => s.tick(dt).map(|o| {
                    assert!(was_running || (o.rows == 0 && o.strip.is_none() && o.events.is_empty()));
                    o.rows
                }),
            };
            let want = r.apply(op);
            match (&got, &want) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b, "step {} {:?}", i, op),
                (Err(ScadaError::Conflict(_)), Err(true)) | (Err(ScadaError::Invalid(_)), Err(false)) => {}
                _ => prop_assert!(false, "step {} {:?}: {:?} vs {:?}", i, op, got, want),
            }
            let st = s.state();
            prop_assert_eq!(st.mode == LineMode::Running, r.running, "step {}", i);
            prop_assert_eq!(st.speed.to_bits(), r.speed.to_bits());
            prop_assert_eq!(st.rows_captured, r.total);
            prop_assert_eq!(st.sheet, r.sheet);
            prop_assert_eq!(st.end_of_sheet, r.end);
            prop_assert_eq!(st.sheet_position, r.rows as f64 / r.rows_per_mm);
            if st.sheet == r.sheet && matches!(op, Op::Tick(_)) {
                prop_assert!(st.sheet_position >= last_pos);
            }
            last_pos = st.sheet_position;
        }
    }
}

#[test]
fn events_are_ordered_in_bounds_and_deduplicated() {
    let cfg = small_config(200.0, 100.0);
    let (len, wid) = (cfg.sheet_length_mm, cfg.sheet_width_mm);
    let mut s = sim(cfg);
    s.attach_detector(constant_detector(64, 6.0)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut events = Vec::new();
    for _ in 0..1500 {
        match rng.gen_range(0..10) {
            0 => {
                let _ = s.start();
            }
            1 => {
                s.stop();
            }
            2 => {
                s.set_speed(rng.gen_range(0.0..120.0)).unwrap();
            }
            _ => {
                let stopped = s.state().mode == LineMode::Stopped;
                let out = s.tick(rng.gen_range(0.0..0.1)).unwrap();
                if stopped {
                    assert_eq!(out.rows, 0);
                    assert!(out.events.is_empty());
                }
                events.extend(out.events);
            }
        }
    }
    assert!(events.len() > 20, "only {} events", events.len());
    assert!(s.state().sheet > 0, "the schedule should finish at least one sheet");
    for w in events.windows(2) {
        assert!(w[1].ts > w[0].ts);
    }
    for e in &events {
        let b = e.sheet_box_mm;
        assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= wid && b.y + b.h <= len, "{e:?}");
        assert!(e.strip < s.state().strips);
    }
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if a.sheet == b.sheet && a.class == b.class {
                let bb = |e: &aoi_scada::DefectEvent| BBox::new(e.sheet_box_mm.x, e.sheet_box_mm.y, e.sheet_box_mm.w, e.sheet_box_mm.h);
                assert!(iou(&bb(a), &bb(b)) <= 0.5, "duplicate {a:?} {b:?}");
            }
        }
    }
    let stats = s.stats().unwrap();
    assert_eq!(stats.counts.values().sum::<u64>(), events.len() as u64);
    assert!(stats.windows > 0);
}

#[test]
fn threshold_gates_events() {
    let cfg = small_config(100.0, 50.0);
    let mut s = sim(cfg);
    s.attach_detector(constant_detector(64, 6.0)).unwrap();
    s.set_conf_threshold(0.9).unwrap();
    assert!(matches!(s.set_conf_threshold(1.5), Err(ScadaError::Invalid(_))));
    s.set_speed(500.0).unwrap();
    s.start().unwrap();
    let out = s.tick(1.0).unwrap();
    assert!(out.end_of_sheet);
    assert!(out.events.is_empty());
    assert!(s.stats().unwrap().windows > 0);
}

#[test]
fn detector_larger_than_sheet_rejected() {
    let mut s = sim(small_config(100.0, 20.0));
    assert!(s.attach_detector(constant_detector(64, 0.0)).is_err());
}
