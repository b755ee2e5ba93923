//! Clocks, token usage and per-run cost accounting.

use std::ops::{Add, AddAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Monotone microsecond clock.
pub trait Clock: Send + Sync {
    fn now_us(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now_us(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }
}

/// Every read advances time by a fixed tick, so timings depend only on the
/// sequence of instrumented operations.
#[derive(Debug)]
pub struct LogicalClock {
    tick_us: u64,
    now: AtomicU64,
}

impl LogicalClock {
    pub fn new(tick_us: u64) -> Self {
        LogicalClock { tick_us, now: AtomicU64::new(0) }
    }
}

impl Clock for LogicalClock {
    fn now_us(&self) -> u64 {
        self.now.fetch_add(self.tick_us, Ordering::SeqCst) + self.tick_us
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    #[default]
    System,
    Logical,
}

impl ClockKind {
    pub fn make(self) -> Arc<dyn Clock> {
        match self {
            ClockKind::System => Arc::new(SystemClock::default()),
            ClockKind::Logical => Arc::new(LogicalClock::new(1000)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, o: TokenUsage) -> TokenUsage {
        TokenUsage { input: self.input + o.input, output: self.output + o.output }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, o: TokenUsage) {
        *self = *self + o;
    }
}

/// Dollar prices per million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prices {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Prices {
    pub fn cost(&self, usage: TokenUsage) -> f64 {
        usage.input as f64 * self.input_per_million / 1e6 + usage.output as f64 * self.output_per_million / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Llm,
    VectorSearch,
    Embedding,
}

/// Attributes wall time to buckets through instrumented spans.
pub struct CostMeter {
    clock: Arc<dyn Clock>,
    start: u64,
    llm_us: AtomicU64,
    vector_us: AtomicU64,
    embed_us: AtomicU64,
}

impl CostMeter {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        let start = clock.now_us();
        CostMeter { clock, start, llm_us: AtomicU64::new(0), vector_us: AtomicU64::new(0), embed_us: AtomicU64::new(0) }
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    pub fn time<T>(&self, bucket: Bucket, f: impl FnOnce() -> T) -> T {
        let t0 = self.clock.now_us();
        let out = f();
        let dt = self.clock.now_us().saturating_sub(t0);
        let slot = match bucket {
            Bucket::Llm => &self.llm_us,
            Bucket::VectorSearch => &self.vector_us,
            Bucket::Embedding => &self.embed_us,
        };
        slot.fetch_add(dt, Ordering::SeqCst);
        out
    }

    pub fn report(&self, llm_calls: u64, usage: TokenUsage, prices: &Prices) -> CostReport {
        let total = self.clock.now_us().saturating_sub(self.start);
        CostReport {
            total_ms: us_to_ms(total),
            llm_ms: us_to_ms(self.llm_us.load(Ordering::SeqCst)),
            vector_search_ms: us_to_ms(self.vector_us.load(Ordering::SeqCst)),
            embedding_ms: us_to_ms(self.embed_us.load(Ordering::SeqCst)),
            llm_calls,
            input_tokens: usage.input,
            output_tokens: usage.output,
            estimated_cost: prices.cost(usage),
        }
    }
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Time buckets are parts of `total_ms`; overhead counts toward the total only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_ms: f64,
    pub llm_ms: f64,
    pub vector_search_ms: f64,
    pub embedding_ms: f64,
    pub llm_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_cost: f64,
}

impl AddAssign<&CostReport> for CostReport {
    fn add_assign(&mut self, o: &CostReport) {
        self.total_ms += o.total_ms;
        self.llm_ms += o.llm_ms;
        self.vector_search_ms += o.vector_search_ms;
        self.embedding_ms += o.embedding_ms;
        self.llm_calls += o.llm_calls;
        self.input_tokens += o.input_tokens;
        self.output_tokens += o.output_tokens;
        self.estimated_cost += o.estimated_cost;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_ticks_per_read() {
        let c = LogicalClock::new(5);
        assert_eq!(c.now_us(), 5);
        assert_eq!(c.now_us(), 10);
    }

    #[test]
    fn meter_buckets_are_parts_of_total() {
        let m = CostMeter::new(Arc::new(LogicalClock::new(1000)));
        m.time(Bucket::Llm, || ());
        m.time(Bucket::Embedding, || m.now_us());
        let r = m.report(3, TokenUsage { input: 2_000_000, output: 1_000_000 }, &Prices {
            input_per_million: 1.25,
            output_per_million: 10.0,
        });
        assert_eq!(r.llm_ms, 1.0);
        assert_eq!(r.embedding_ms, 2.0);
        assert!(r.llm_ms + r.embedding_ms + r.vector_search_ms <= r.total_ms);
        assert!((r.estimated_cost - 12.5).abs() < 1e-12);
        assert_eq!(r.llm_calls, 3);
    }
}
