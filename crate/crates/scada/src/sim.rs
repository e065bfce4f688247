use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use aoi_core::bbox::{iou, BBox};
use aoi_core::detection::Detection;
use aoi_core::imgsynth::ImageBuffer;
use aoi_core::yolite::Detector;

use crate::{Result, ScadaConfig, ScadaError, VirtualSheet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineMode {
    Stopped,
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConveyorState {
    pub mode: LineMode,
    /// mm/s.
    pub speed: f64,
    /// Travel of the current sheet under the camera, mm.
    pub sheet_position: f64,
    pub rows_per_mm: f64,
    /// Index of the sheet on the line; a new one is loaded when starting after the end.
    pub sheet: u64,
    /// Rows captured since boot.
    pub rows_captured: u64,
    pub strips: u64,
    pub end_of_sheet: bool,
    pub inspection: bool,
    pub conf_threshold: f64,
    /// Virtual clock, microseconds.
    pub clock_us: u64,
}

/// Box in sheet millimetres, `x` across the line and `y` along it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectEvent {
    /// Virtual microseconds; strictly increasing across the log.
    pub ts: u64,
    /// Strip whose capture completed the window that produced the event.
    pub strip: u64,
    pub sheet: u64,
    pub class: usize,
    pub label: String,
    pub conf: f64,
    pub sheet_box_mm: SheetBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub counts: BTreeMap<String, u64>,
    pub windows: u64,
    pub mean_ms_per_window: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TickOutput {
    pub rows: usize,
    pub strip: Option<ImageBuffer<f32>>,
    pub events: Vec<DefectEvent>,
    pub end_of_sheet: bool,
}

/// The line as a synchronous state machine on a virtual clock.
pub struct Simulator {
    cfg: ScadaConfig,
    sheet: VirtualSheet,
    /// Reused on every new sheet instead of generating one.
    fixture: bool,
    sheet_index: u64,
    mode: LineMode,
    speed: f64,
    rows_done: usize,
    total_rows: u64,
    clock_us: u64,
    strips: u64,
    end_of_sheet: bool,
    /// Captured rows of the current sheet; windows are cut from here.
    captured: ImageBuffer<f32>,
    detector: Option<Detector<f32>>,
    conf_threshold: f64,
    next_window: usize,
    covered: usize,
    /// Window detections (capture rows / sheet pixels) not yet safe to report.
    pending: Vec<Detection>,
    reported: Vec<Detection>,
    last_ts: Option<u64>,
    windows: u64,
    window_ms: f64,
    counts: Vec<u64>,
}

impl Simulator {
    pub fn new(cfg: ScadaConfig) -> Result<Self> {
        let sheet = VirtualSheet::generate(&cfg, 0)?;
        Ok(Self::build(cfg, sheet, false))
    }

    /// A line that carries the same sheet every time.
    pub fn with_sheet(cfg: ScadaConfig, sheet: VirtualSheet) -> Result<Self> {
        cfg.validate()?;
        let sheet = VirtualSheet::from_image(&cfg, sheet.image, sheet.boxes)?;
        Ok(Self::build(cfg, sheet, true))
    }

    fn build(cfg: ScadaConfig, sheet: VirtualSheet, fixture: bool) -> Self {
        let captured = ImageBuffer::filled(cfg.sheet_rows(), sheet.image.width(), sheet.image.channels(), 0.0);
        Self {
            conf_threshold: cfg.conf_threshold,
            cfg,
            sheet,
            fixture,
            sheet_index: 0,
            mode: LineMode::Stopped,
            speed: 0.0,
            rows_done: 0,
            total_rows: 0,
            clock_us: 0,
            strips: 0,
            end_of_sheet: false,
            captured,
            detector: None,
            next_window: 0,
            covered: 0,
            pending: Vec::new(),
            reported: Vec::new(),
            last_ts: None,
            windows: 0,
            window_ms: 0.0,
            counts: Vec::new(),
        }
    }

    /// Enables inspection. Windows are the detector input size, so the sheet must be at least that large.
    pub fn attach_detector(&mut self, det: Detector<f32>) -> Result<()> {
        let s = det.spec.input_size;
        if self.captured.height() < s || self.captured.width() < s {
            return Err(ScadaError::Config(format!(
                "sheet of {}x{} rows/pixels is smaller than the {s} px detector window",
                self.captured.height(),
                self.captured.width()
            )));
        }
        self.counts = vec![0; det.class_names.len().max(det.spec.num_classes)];
        self.detector = Some(det);
        Ok(())
    }

    pub fn config(&self) -> &ScadaConfig {
        &self.cfg
    }

    pub fn sheet(&self) -> &VirtualSheet {
        &self.sheet
    }

    pub fn state(&self) -> ConveyorState {
        ConveyorState {
            mode: self.mode,
            speed: self.speed,
            sheet_position: self.rows_done as f64 / self.cfg.rows_per_mm,
            rows_per_mm: self.cfg.rows_per_mm,
            sheet: self.sheet_index,
            rows_captured: self.total_rows,
            strips: self.strips,
            end_of_sheet: self.end_of_sheet,
            inspection: self.detector.is_some(),
            conf_threshold: self.conf_threshold,
            clock_us: self.clock_us,
        }
    }

    pub fn stats(&self) -> Option<Stats> {
        let det = self.detector.as_ref()?;
        let name = |c: usize| det.class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
        Some(Stats {
            counts: self.counts.iter().enumerate().map(|(c, &n)| (name(c), n)).collect(),
            windows: self.windows,
            mean_ms_per_window: if self.windows == 0 { 0.0 } else { self.window_ms / self.windows as f64 },
        })
    }

    /// Stopped to Running. After the end of a sheet the next sheet is loaded first.
    pub fn start(&mut self) -> Result<ConveyorState> {
        if self.mode == LineMode::Running {
            return Err(ScadaError::Conflict("line is already running".into()));
        }
        if self.end_of_sheet {
            self.load_next_sheet()?;
        }
        self.mode = LineMode::Running;
        Ok(self.state())
    }

    pub fn stop(&mut self) -> ConveyorState {
        self.mode = LineMode::Stopped;
        self.state()
    }

    pub fn set_speed(&mut self, mm_per_s: f64) -> Result<ConveyorState> {
        if !(mm_per_s >= 0.0 && mm_per_s.is_finite()) {
            return Err(ScadaError::Invalid(format!("speed must be a finite value >= 0, got {mm_per_s}")));
        }
        self.speed = mm_per_s;
        Ok(self.state())
    }

    pub fn set_conf_threshold(&mut self, conf: f64) -> Result<ConveyorState> {
        if self.detector.is_none() {
            return Err(ScadaError::NoDetector);
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(ScadaError::Invalid(format!("confidence threshold must lie in [0, 1], got {conf}")));
        }
        self.conf_threshold = conf;
        Ok(self.state())
    }

    fn load_next_sheet(&mut self) -> Result<()> {
        self.sheet_index += 1;
        if !self.fixture {
            self.sheet = VirtualSheet::generate(&self.cfg, self.sheet_index)?;
        }
        self.rows_done = 0;
        self.end_of_sheet = false;
        self.next_window = 0;
        self.covered = 0;
        self.pending.clear();
        self.reported.clear();
        Ok(())
    }

    /// Advances the clock by `dt` seconds. While running, captures
    /// `floor(speed * dt * rows_per_mm)` rows (fewer at the end of the sheet,
    /// which stops the line) and inspects every window they complete.
    pub fn tick(&mut self, dt: f64) -> Result<TickOutput> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(ScadaError::Invalid(format!("tick length must be finite and >= 0, got {dt}")));
        }
        self.clock_us += (dt * 1e6).round() as u64;
        if self.mode != LineMode::Running {
            return Ok(TickOutput::default());
        }
        let remaining = self.cfg.sheet_rows() - self.rows_done;
        let want = (self.speed * dt * self.cfg.rows_per_mm).floor();
        let rows = if want >= remaining as f64 { remaining } else { want as usize };
        if rows == 0 {
            return Ok(TickOutput::default());
        }

        let strip = self.render_strip(self.rows_done, rows, self.speed);
        let row_len = strip.width() * strip.channels();
        let start = self.rows_done * row_len;
        self.captured.pixels_mut()[start..start + rows * row_len].copy_from_slice(strip.pixels());
        self.rows_done += rows;
        self.total_rows += rows as u64;
        self.strips += 1;

        let events = self.inspect()?;
        let end = self.rows_done == self.cfg.sheet_rows();
        if end {
            self.end_of_sheet = true;
            self.mode = LineMode::Stopped;
        }
        Ok(TickOutput { rows, strip: Some(strip), events, end_of_sheet: end })
    }

    /// Rows of the motion blur kernel at `speed`; 1 means no blur.
    pub fn blur_rows(&self, speed: f64) -> usize {
        if speed > self.cfg.blur_threshold_mm_s && self.cfg.blur_rows_per_mm_s > 0.0 {
            ((speed * self.cfg.blur_rows_per_mm_s).ceil() as usize).max(2)
        } else {
            1
        }
    }

    fn sheet_row(&self, capture_row: isize) -> usize {
        let last_capture = self.cfg.sheet_rows() as isize - 1;
        let r = capture_row.clamp(0, last_capture) as f64;
        let px = ((r + 0.5) / self.cfg.rows_per_mm / self.cfg.mm_per_px).floor() as usize;
        px.min(self.sheet.image.height() - 1)
    }

    /// Capture rows `[row0, row0 + rows)` as seen at `speed`: each row is the
    /// sheet row under the camera, averaged with its neighbours along the
    /// direction of travel when the speed blurs.
    pub fn render_strip(&self, row0: usize, rows: usize, speed: f64) -> ImageBuffer<f32> {
        let k = self.blur_rows(speed) as isize;
        let img = &self.sheet.image;
        let row_len = img.width() * img.channels();
        let mut out = vec![0.0f32; rows * row_len];
        let lo = -(k - 1) / 2;
        for (i, dst) in out.chunks_mut(row_len).enumerate() {
            let r = (row0 + i) as isize;
            for j in lo..lo + k {
                let src = self.sheet_row(r + j) * row_len;
                for (d, s) in dst.iter_mut().zip(&img.pixels()[src..src + row_len]) {
                    *d += s;
                }
            }
            let inv = 1.0 / k as f32;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        ImageBuffer::from_clamped(rows, img.width(), img.channels(), out)
    }

    /// Runs every window completed by the rows captured so far.
    fn inspect(&mut self) -> Result<Vec<DefectEvent>> {
        let Some(s) = self.detector.as_ref().map(|d| d.spec.input_size) else { return Ok(Vec::new()) };
        let total = self.cfg.sheet_rows();
        let stride = ((s as f64 * (1.0 - self.cfg.window_overlap)).round() as usize).max(1);
        let mut events = Vec::new();
        loop {
            if self.next_window + s <= self.rows_done {
                let y0 = self.next_window;
                self.run_window_row(y0)?;
                self.covered = y0 + s;
                self.next_window += stride;
                if self.covered < total {
                    let next_start = if self.next_window + s <= total { self.next_window } else { total - s };
                    self.report(next_start, &mut events);
                }
            } else if self.rows_done == total && self.covered < total {
                self.run_window_row(total - s)?;
                self.covered = total;
            } else {
                break;
            }
        }
        if self.rows_done == total {
            self.report(usize::MAX, &mut events);
        }
        Ok(events)
    }

    fn run_window_row(&mut self, y0: usize) -> Result<()> {
        let det = self.detector.as_ref().expect("inspection requires a detector");
        let s = det.spec.input_size;
        let width = self.captured.width();
        let stride = ((s as f64 * (1.0 - self.cfg.window_overlap)).round() as usize).max(1);
        let mut xs: Vec<usize> = (0..).map(|i| i * stride).take_while(|&x| x + s < width).collect();
        xs.push(width - s);
        let (w, h) = (width as f64, self.cfg.sheet_rows() as f64);
        for x0 in xs {
            let window = self.captured.crop(y0, x0, s, s);
            let t0 = Instant::now();
            let dets = det.detect_input(&window, self.conf_threshold, self.cfg.nms_iou)?;
            self.window_ms += t0.elapsed().as_secs_f64() * 1e3;
            self.windows += 1;
            for d in dets {
                let b = d.bbox().translated(x0 as f64, y0 as f64).clamp_to(w, h);
                if b.w <= 0.0 || b.h <= 0.0 {
                    continue;
                }
                let cand = Detection::new(b, d.class, d.confidence);
                if !self.reported.iter().any(|r| same_defect(r, &cand, self.cfg.nms_iou)) {
                    self.pending.push(cand);
                }
            }
        }
        Ok(())
    }

    /// Sheet-space NMS over the pending detections; survivors that end above
    /// row `limit` can no longer appear in a later window and are reported.
    fn report(&mut self, limit: usize, events: &mut Vec<DefectEvent>) {
        let thr = self.cfg.nms_iou;
        let mut pool = std::mem::take(&mut self.pending);
        pool.sort_by(|a, b| {
            b.confidence.total_cmp(&a.confidence).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)).then(a.class.cmp(&b.class))
        });
        let mut kept: Vec<Detection> = Vec::new();
        for d in &pool {
            if !kept.iter().any(|k| same_defect(k, d, thr)) {
                kept.push(*d);
            }
        }
        let is_final = |d: &Detection| limit == usize::MAX || d.bbox().y_max() <= limit as f64;
        let fresh: Vec<Detection> = kept.into_iter().filter(|d| is_final(d)).collect();
        for d in &fresh {
            events.push(self.event(d));
            self.reported.push(*d);
        }
        self.pending = pool.into_iter().filter(|d| !is_final(d) && !fresh.iter().any(|f| same_defect(f, d, thr))).collect();
    }

    fn event(&mut self, d: &Detection) -> DefectEvent {
        let ts = match self.last_ts {
            Some(t) => self.clock_us.max(t + 1),
            None => self.clock_us,
        };
        self.last_ts = Some(ts);
        if let Some(n) = self.counts.get_mut(d.class) {
            *n += 1;
        }
        let (mpp, rpm) = (self.cfg.mm_per_px, self.cfg.rows_per_mm);
        let bx = BBox::new(d.x * mpp, d.y / rpm, d.w * mpp, d.h / rpm).clamp_to(self.cfg.sheet_width_mm, self.cfg.sheet_length_mm);
        let label = self.detector.as_ref().and_then(|det| det.class_names.get(d.class).cloned()).unwrap_or_default();
        DefectEvent {
            ts,
            strip: self.strips - 1,
            sheet: self.sheet_index,
            class: d.class,
            label,
            conf: d.confidence,
            sheet_box_mm: SheetBox { x: bx.x, y: bx.y, w: bx.w, h: bx.h },
        }
    }
}

fn same_defect(a: &Detection, b: &Detection, thr: f64) -> bool {
    a.class == b.class && iou(&a.bbox(), &b.bbox()) > thr
}
