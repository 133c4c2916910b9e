//! Episode records, aggregate metrics, and their line-delimited export.
//!
//! The aggregates are recomputable: every consumer of the exported
//! per-episode records can rebuild the reported success rate, mean episode
//! reward, and mean success steps exactly, because this module is the single
//! definition of that arithmetic and the records round-trip through JSON
//! without losing bits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::vehicle::EpisodeEvent;

/// Outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Global environment step of the evaluation this episode belongs to.
    pub step: u64,
    /// Episode index within that evaluation.
    pub episode: usize,
    pub outcome: EpisodeEvent,
    pub steps: u32,
    pub reward: f64,
}

/// One point of the evaluation stream. `asse` is absent when the evaluation
/// had no successful episode — absent, not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPoint {
    pub step: u64,
    pub sr: f64,
    pub aer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asse: Option<f64>,
}

/// One pose sample of an evaluation trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub d_o: f64,
    pub reward: f64,
    pub event: EpisodeEvent,
}

/// Success rate, mean episode reward, and mean steps over successes.
/// Summation order is the record order, so recomputation is bit-exact.
pub fn compute_metrics(step: u64, records: &[EpisodeRecord]) -> MetricsPoint {
    assert!(!records.is_empty(), "metrics need at least one episode");
    let n = records.len() as f64;
    let successes: Vec<&EpisodeRecord> =
        records.iter().filter(|r| r.outcome == EpisodeEvent::Goal).collect();
    let sr = successes.len() as f64 / n;
    let aer = records.iter().map(|r| r.reward).sum::<f64>() / n;
    let asse = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().map(|r| r.steps as f64).sum::<f64>() / successes.len() as f64)
    };
    MetricsPoint { step, sr, aer, asse }
}

/// Appends one JSON line per record.
pub fn write_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        let line = serde_json::to_string(item).expect("serializable record");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a line-delimited JSON stream back.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Plain-text trajectory table: header plus one row per sample.
pub fn write_trajectory(w: &mut impl Write, points: &[TrajectoryPoint]) -> std::io::Result<()> {
    writeln!(w, "t x y z yaw d_o reward outcome")?;
    for p in points {
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            p.t,
            p.x,
            p.y,
            p.z,
            p.yaw,
            p.d_o,
            p.reward,
            p.event.as_str()
        )?;
    }
    Ok(())
}
