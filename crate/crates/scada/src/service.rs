//! The simulation loop on its own thread. It is the only writer: HTTP
//! handlers queue commands, which the loop applies between ticks and
//! acknowledges with the resulting state, and read published snapshots.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tokio::sync::oneshot;

use crate::{ConveyorState, DefectEvent, Result, ScadaError, Simulator, Stats};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Start,
    Stop,
    SetSpeed(f64),
    SetThreshold(f64),
}

/// How the loop spaces its ticks in wall time. Each tick always advances the
/// virtual clock by `tick_ms`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pace {
    RealTime,
    /// Ticks back to back while running.
    Unpaced,
}

struct Envelope {
    command: Command,
    reply: oneshot::Sender<Result<ConveyorState>>,
}

struct Published {
    state: ConveyorState,
    strip_png: Option<Arc<Vec<u8>>>,
    stats: Option<Stats>,
}

struct Shared {
    published: RwLock<Published>,
    events: RwLock<Vec<DefectEvent>>,
}

/// Cloneable access to a running line.
#[derive(Clone)]
pub struct LineHandle {
    tx: mpsc::Sender<Envelope>,
    shared: Arc<Shared>,
}

impl LineHandle {
    /// Queues a command and waits for the loop to apply it.
    pub async fn command(&self, command: Command) -> Result<ConveyorState> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Envelope { command, reply }).map_err(|_| ScadaError::Shutdown)?;
        rx.await.map_err(|_| ScadaError::Shutdown)?
    }

    /// Blocking variant of [`command`](Self::command) for callers outside a runtime.
    pub fn command_blocking(&self, command: Command) -> Result<ConveyorState> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Envelope { command, reply }).map_err(|_| ScadaError::Shutdown)?;
        rx.blocking_recv().map_err(|_| ScadaError::Shutdown)?
    }

    pub fn state(&self) -> ConveyorState {
        self.shared.published.read().unwrap().state.clone()
    }

    pub fn latest_strip_png(&self) -> Option<Arc<Vec<u8>>> {
        self.shared.published.read().unwrap().strip_png.clone()
    }

    pub fn stats(&self) -> Option<Stats> {
        self.shared.published.read().unwrap().stats.clone()
    }

    /// Events with `ts > since` (all events when `since` is `None`).
    pub fn events_since(&self, since: Option<u64>) -> Vec<DefectEvent> {
        let log = self.shared.events.read().unwrap();
        let from = since.map_or(0, |t| log.partition_point(|e| e.ts <= t));
        log[from..].to_vec()
    }
}

fn apply(sim: &mut Simulator, command: Command) -> Result<ConveyorState> {
    match command {
        Command::Start => sim.start(),
        Command::Stop => Ok(sim.stop()),
        Command::SetSpeed(v) => sim.set_speed(v),
        Command::SetThreshold(c) => sim.set_conf_threshold(c),
    }
}

/// Starts the loop thread. It exits once every handle is dropped.
pub fn spawn_line(mut sim: Simulator, pace: Pace) -> (LineHandle, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel::<Envelope>();
    let shared = Arc::new(Shared {
        published: RwLock::new(Published { state: sim.state(), strip_png: None, stats: sim.stats() }),
        events: RwLock::new(Vec::new()),
    });
    let handle = LineHandle { tx, shared: shared.clone() };
    let tick = Duration::from_millis(sim.config().tick_ms);
    let dt = tick.as_secs_f64();
    let thread = std::thread::spawn(move || {
        let mut deadline = Instant::now() + tick;
        loop {
            let wait = match pace {
                Pace::RealTime => deadline.saturating_duration_since(Instant::now()),
                Pace::Unpaced if sim.state().mode == crate::LineMode::Running => Duration::ZERO,
                Pace::Unpaced => Duration::from_millis(1),
            };
            match rx.recv_timeout(wait) {
                Ok(env) => {
                    let out = apply(&mut sim, env.command);
                    shared.published.write().unwrap().state = sim.state();
                    let _ = env.reply.send(out);
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
            // A slow tick (inspection) should not cause a burst of catch-up ticks.
            deadline = (deadline + tick).max(Instant::now());
            let out = match sim.tick(dt) {
                Ok(out) => out,
                Err(e) => {
                    eprintln!("line stopped: {e}");
                    sim.stop();
                    shared.published.write().unwrap().state = sim.state();
                    continue;
                }
            };
            if !out.events.is_empty() {
                shared.events.write().unwrap().extend(out.events);
            }
            let png = out.strip.map(|s| Arc::new(s.encode_png()));
            let mut p = shared.published.write().unwrap();
            p.state = sim.state();
            p.stats = sim.stats();
            if png.is_some() {
                p.strip_png = png;
            }
        }
    });
    (handle, thread)
}
