use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant};

use ecgstate::data::Label;
use ecgstate::eval::{latency_stats, LatencyStats, DECISION_THRESHOLD, REFERENCE_LATENCY_MS};
use ecgstate::numerics::Tensor;
use ecgstate::training::Checkpoint;
use ecgstate::{Error, Result};

use crate::config::RunConfig;
use crate::io::{create_dir, echo_config, load_epochs, write_text};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub index: usize,
    pub subject: u32,
    pub state: Label,
    pub probability: f64,
    /// Offsets from the start of the replay.
    pub ingest: Duration,
    pub emit: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub events: Vec<StreamEvent>,
    pub latency: LatencyStats,
    pub events_path: PathBuf,
    pub summary_path: PathBuf,
}

struct Arrival {
    index: usize,
    subject: u32,
    samples: Vec<f64>,
    ingest: Duration,
}

/// Replays the manifest's epochs `T / speed` seconds apart (`speed = 0`:
/// back to back) through a one-slot hand-off to an inference worker.
pub fn cmd_stream(cfg: &RunConfig, speed: f64) -> Result<StreamReport> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::Config(format!("speed must be finite and ≥ 0, got {speed}")));
    }
    let out = cfg.require_out_dir()?;
    create_dir(out)?;
    echo_config(cfg, out)?;
    let state = Checkpoint::load(cfg.require_checkpoint()?)?.restore(cfg.model_config()?)?;
    let model = state.model;
    let items = load_epochs(cfg)?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("no epochs to stream".into()));
    }
    let (seconds, rate) = (cfg.epoch_seconds, cfg.sampling_rate);
    let spacing = if speed > 0.0 {
        Some(Duration::from_secs_f64(seconds as f64 / speed))
    } else {
        None
    };

    let start = Instant::now();
    let (tx, rx) = sync_channel::<Arrival>(1);
    let producer = thread::spawn(move || {
        for (index, (row, epoch)) in items.into_iter().enumerate() {
            if let Some(dt) = spacing {
                // an epoch is complete once its last second has arrived
                let due = dt * (index as u32 + 1);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    thread::sleep(wait);
                }
            }
            let arrival = Arrival {
                index,
                subject: row.subject,
                samples: epoch.samples,
                ingest: start.elapsed(),
            };
            if tx.send(arrival).is_err() {
                break;
            }
        }
    });

    let mut events = Vec::new();
    let mut failure = None;
    for a in rx.iter() {
        let p = Tensor::new(&[1, seconds, rate], a.samples).and_then(|x| model.predict_positive(&x));
        match p {
            Ok(p) => {
                let probability = p[0];
                if !probability.is_finite() {
                    failure = Some(Error::NonFinite(format!("probability of epoch {}", a.index)));
                    break;
                }
                events.push(StreamEvent {
                    index: a.index,
                    subject: a.subject,
                    state: if probability >= DECISION_THRESHOLD {
                        Label::Unconscious
                    } else {
                        Label::Conscious
                    },
                    probability,
                    ingest: a.ingest,
                    emit: start.elapsed(),
                });
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    drop(rx);
    producer
        .join()
        .map_err(|_| Error::InvalidArgument("stream producer panicked".into()))?;
    if let Some(e) = failure {
        return Err(e);
    }

    let pairs: Vec<(Duration, Duration)> = events.iter().map(|e| (e.ingest, e.emit)).collect();
    let latency = latency_stats(&pairs)?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mut log = String::from("index,subject,state,probability,ingest_ms,emit_ms,latency_ms\n");
    for e in &events {
        let _ = writeln!(
            log,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            e.index,
            e.subject,
            e.state.as_str(),
            e.probability,
            ms(e.ingest),
            ms(e.emit),
            ms(e.emit - e.ingest)
        );
    }
    let events_path = out.join("stream_events.csv");
    write_text(&events_path, &log)?;
    let summary = format!(
        "epochs = {}\nspeed = {speed}\nmean_ms = {:.3}\nmedian_ms = {:.3}\nmax_ms = {:.3}\n\
         # whole-system figure measured on tablet hardware, shown for context only\nreference_ms = {REFERENCE_LATENCY_MS}\n",
        latency.count, latency.mean_ms, latency.median_ms, latency.max_ms
    );
    let summary_path = out.join("latency.txt");
    write_text(&summary_path, &summary)?;
    log::info!(
        "{} epochs, latency mean {:.3} ms, median {:.3} ms, max {:.3} ms (reference {REFERENCE_LATENCY_MS} ms)",
        latency.count,
        latency.mean_ms,
        latency.median_ms,
        latency.max_ms
    );
    Ok(StreamReport {
        events,
        latency,
        events_path,
        summary_path,
    })
}
