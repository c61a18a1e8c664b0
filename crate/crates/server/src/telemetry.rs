//! Per-step snapshots fanned out to any number of subscribers.
//!
//! The channel is bounded. A subscriber that falls behind loses the oldest
//! events, and the next event it does receive carries `gap: true` and the
//! number dropped.

use std::sync::Arc;

use kinetune_core::engine::StepEvent;
use kinetune_core::pose::EnergyStats;
use kinetune_core::retrieval::Scored;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub const TELEMETRY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfadeState {
    pub crossfade_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub schema_version: u32,
    pub step: u64,
    pub t_ms: f64,
    pub energy: Option<EnergyStats>,
    pub clip_id: String,
    pub similarity: Option<f64>,
    pub top5: Vec<Scored>,
    pub crossfade: CrossfadeState,
    pub latency_ms: f64,
    pub underrun: bool,
    pub fault: Option<String>,
    /// Events were dropped for this subscriber just before this one.
    #[serde(default)]
    pub gap: bool,
    #[serde(default)]
    pub dropped: u64,
}

impl TelemetryEvent {
    pub fn from_step(ev: &StepEvent, crossfade_samples: usize) -> Self {
        Self {
            schema_version: TELEMETRY_SCHEMA_VERSION,
            step: ev.step,
            t_ms: ev.t_ms,
            energy: ev.energy,
            clip_id: ev.clip_id.clone(),
            similarity: ev.similarity,
            top5: ev.top5.clone(),
            crossfade: CrossfadeState {
                crossfade_ms: ev.crossfade_ms,
                samples: crossfade_samples,
            },
            latency_ms: ev.latency_ms,
            underrun: ev.underrun,
            fault: ev.fault.clone(),
            gap: false,
            dropped: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Telemetry {
    tx: broadcast::Sender<Arc<TelemetryEvent>>,
}

impl Telemetry {
    /// `capacity` is rounded up to a power of two.
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self { tx }
    }

    pub fn publish(&self, event: TelemetryEvent) {
        // no subscribers is fine
        let _ = self.tx.send(Arc::new(event));
    }

    pub fn subscribe(&self) -> Subscriber {
        Subscriber {
            rx: self.tx.subscribe(),
        }
    }
}

pub struct Subscriber {
    rx: broadcast::Receiver<Arc<TelemetryEvent>>,
}

impl Subscriber {
    /// Next event in step order; `None` once the publisher is gone.
    pub async fn next(&mut self) -> Option<TelemetryEvent> {
        let mut dropped = 0;
        loop {
            match self.rx.recv().await {
                Ok(ev) => {
                    let mut ev = (*ev).clone();
                    if dropped > 0 {
                        ev.gap = true;
                        ev.dropped = dropped;
                    }
                    return Some(ev);
                }
                Err(broadcast::error::RecvError::Lagged(n)) => dropped += n,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(step: u64) -> TelemetryEvent {
        TelemetryEvent {
            schema_version: TELEMETRY_SCHEMA_VERSION,
            step,
            t_ms: step as f64 * 3000.0,
            energy: None,
            clip_id: "a".into(),
            similarity: Some(0.5),
            top5: vec![],
            crossfade: CrossfadeState {
                crossfade_ms: 500.0,
                samples: 11025,
            },
            latency_ms: 1.0,
            underrun: false,
            fault: None,
            gap: false,
            dropped: 0,
        }
    }

    #[tokio::test]
    async fn slow_subscriber_sees_a_flagged_gap() {
        let t = Telemetry::new(4);
        let mut sub = t.subscribe();
        for s in 0..10 {
            t.publish(event(s));
        }
        let first = sub.next().await.unwrap();
        assert!(first.gap);
        assert_eq!(first.dropped, 6);
        assert_eq!(first.step, 6);
        let rest: Vec<u64> = [sub.next().await, sub.next().await, sub.next().await]
            .into_iter()
            .map(|e| e.unwrap())
            .inspect(|e| assert!(!e.gap))
            .map(|e| e.step)
            .collect();
        assert_eq!(rest, vec![7, 8, 9]);
    }

    #[test]
    fn schema_is_stable() {
        let v = serde_json::to_value(event(3)).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "clip_id",
                "crossfade",
                "dropped",
                "energy",
                "fault",
                "gap",
                "latency_ms",
                "schema_version",
                "similarity",
                "step",
                "t_ms",
                "top5",
                "underrun"
            ]
        );
        assert_eq!(v["schema_version"], 1);
    }
}
