use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const RESERVOIR_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub fragments_processed: u64,
    pub flagged: u64,
    pub adjudicated: u64,
    pub flagged_fraction: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    /// Fragments scored per second of scoring time.
    pub throughput_per_second: f64,
}

/// Uniform sample of per-fragment scoring latencies (Algorithm R).
struct Reservoir {
    samples: Vec<f64>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl Reservoir {
    fn push(&mut self, value: f64) {
        self.seen += 1;
        if self.samples.len() < RESERVOIR_SIZE {
            self.samples.push(value);
        } else {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < RESERVOIR_SIZE {
                self.samples[j as usize] = value;
            }
        }
    }

    fn quantile(&self, q: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
        s[rank - 1]
    }
}

pub struct Metrics {
    processed: AtomicU64,
    flagged: AtomicU64,
    adjudicated: AtomicU64,
    busy_nanos: AtomicU64,
    reservoir: Mutex<Reservoir>,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            processed: AtomicU64::new(0),
            flagged: AtomicU64::new(0),
            adjudicated: AtomicU64::new(0),
            busy_nanos: AtomicU64::new(0),
            reservoir: Mutex::new(Reservoir {
                samples: Vec::with_capacity(RESERVOIR_SIZE),
                seen: 0,
                rng: ChaCha8Rng::seed_from_u64(0x5eed),
            }),
        }
    }
}

impl Metrics {
    /// Record a batch of `fragments` scored in `elapsed`, `flagged` of which
    /// crossed the cutoff.
    pub fn record_batch(&self, fragments: u64, flagged: u64, elapsed: Duration) {
        if fragments == 0 {
            return;
        }
        self.busy_nanos.fetch_add(elapsed.as_nanos() as u64, Ordering::Relaxed);
        let per_fragment = elapsed.as_secs_f64() * 1e3 / fragments as f64;
        {
            let mut r = self.reservoir.lock().expect("metrics lock");
            for _ in 0..fragments {
                r.push(per_fragment);
            }
        }
        self.flagged.fetch_add(flagged, Ordering::Relaxed);
        self.processed.fetch_add(fragments, Ordering::Release);
    }

    pub fn record_adjudication(&self) {
        self.adjudicated.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let processed = self.processed.load(Ordering::Acquire);
        let flagged = self.flagged.load(Ordering::Relaxed).min(processed);
        let busy = self.busy_nanos.load(Ordering::Relaxed) as f64 / 1e9;
        let (p50, p95) = {
            let r = self.reservoir.lock().expect("metrics lock");
            (r.quantile(0.5), r.quantile(0.95))
        };
        MetricsSnapshot {
            fragments_processed: processed,
            flagged,
            adjudicated: self.adjudicated.load(Ordering::Relaxed),
            flagged_fraction: if processed == 0 { 0.0 } else { flagged as f64 / processed as f64 },
            latency_p50_ms: p50,
            latency_p95_ms: p95,
            throughput_per_second: if busy > 0.0 { processed as f64 / busy } else { 0.0 },
        }
    }
}
