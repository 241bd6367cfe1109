//! Bandwidth and latency shaping for offload connections.

use std::io::{self, Read, Write};
use std::thread;
use std::time::{Duration, Instant};

const CHUNK: usize = 16 * 1024;

/// Rate limit in bytes per second plus a fixed per-message latency.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Throttle {
    rate: Option<f64>,
    latency: Duration,
}

impl Throttle {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn rate(&self) -> Option<f64> {
        self.rate
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn is_unlimited(&self) -> bool {
        self.rate.is_none() && self.latency.is_zero()
    }

    pub fn wrap<S>(self, inner: S) -> ThrottledStream<S> {
        ThrottledStream {
            inner,
            throttle: self,
            write_free: None,
            read_free: None,
        }
    }

    /// Lower bound on the time to move `bytes` as one message.
    pub fn min_transfer_time(&self, bytes: usize) -> Duration {
        let pacing = self
            .rate
            .map_or(Duration::ZERO, |r| Duration::from_secs_f64(bytes as f64 / r));
        pacing + self.latency
    }
}

/// Build a throttle. An infinite rate disables pacing.
///
/// Panics unless `rate > 0`.
pub fn throttle_channel(rate: f64, latency: Duration) -> Throttle {
    assert!(rate > 0.0, "throttle rate must be positive");
    Throttle {
        rate: rate.is_finite().then_some(rate),
        latency,
    }
}

/// Paces writes and reads to the configured rate. Each `flush` adds the
/// latency once, so a framed message costs `size / rate + latency`.
#[derive(Debug)]
pub struct ThrottledStream<S> {
    inner: S,
    throttle: Throttle,
    write_free: Option<Instant>,
    read_free: Option<Instant>,
}

impl<S> ThrottledStream<S> {
    pub fn get_ref(&self) -> &S {
        &self.inner
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

fn pace(free: &mut Option<Instant>, rate: Option<f64>, bytes: usize) {
    let Some(rate) = rate else { return };
    let now = Instant::now();
    let start = free.map_or(now, |f| f.max(now));
    let done = start + Duration::from_secs_f64(bytes as f64 / rate);
    *free = Some(done);
    let now = Instant::now();
    if done > now {
        thread::sleep(done - now);
    }
}

impl<S: Write> Write for ThrottledStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let chunk = if self.throttle.rate.is_some() {
            &buf[..buf.len().min(CHUNK)]
        } else {
            buf
        };
        let n = self.inner.write(chunk)?;
        pace(&mut self.write_free, self.throttle.rate, n);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()?;
        if !self.throttle.latency.is_zero() {
            thread::sleep(self.throttle.latency);
        }
        Ok(())
    }
}

impl<S: Read> Read for ThrottledStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let len = if self.throttle.rate.is_some() {
            buf.len().min(CHUNK)
        } else {
            buf.len()
        };
        let n = self.inner.read(&mut buf[..len])?;
        pace(&mut self.read_free, self.throttle.rate, n);
        Ok(n)
    }
}
