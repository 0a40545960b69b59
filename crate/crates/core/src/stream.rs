//! Producer/consumer buffered stream with a start threshold.
//!
//! A background thread reads the source into a bounded FIFO. The first read
//! on the consumer side waits until the queue holds
//! `ceil(start_fraction * capacity)` items or the producer is done; later
//! reads wait only while the queue is empty and the producer is running.
//! A producer error is delivered after every item queued before it.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::rng::DataRng;

/// Synthetic per-item read latency applied by the producer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayModel {
    Fixed(Duration),
    /// Uniform in `[min, max]`, drawn from a seeded stream.
    Uniform {
        min: Duration,
        max: Duration,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedStreamConfig {
    pub capacity: usize,
    pub start_fraction: f64,
    pub producer_delay: Option<DelayModel>,
}

impl Default for BufferedStreamConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            start_fraction: 0.10,
            producer_delay: None,
        }
    }
}

impl BufferedStreamConfig {
    pub fn new(capacity: usize, start_fraction: f64) -> Self {
        Self {
            capacity,
            start_fraction,
            producer_delay: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::invalid("buffer capacity must be at least 1"));
        }
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::invalid("start fraction must be in (0, 1]"));
        }
        if let Some(DelayModel::Uniform { min, max, .. }) = self.producer_delay {
            if min > max {
                return Err(Error::invalid("delay model needs min <= max"));
            }
        }
        Ok(())
    }

    /// Queue occupancy that releases the first read.
    pub fn start_threshold(&self) -> usize {
        ((self.start_fraction * self.capacity as f64).ceil() as usize).clamp(1, self.capacity)
    }
}

struct State<I> {
    queue: VecDeque<I>,
    done: bool,
    closed: bool,
    error: Option<Error>,
}

struct Shared<I> {
    state: Mutex<State<I>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<I> Shared<I> {
    fn lock(&self) -> MutexGuard<'_, State<I>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Marks the producer finished even if it unwinds.
struct DoneGuard<I>(Arc<Shared<I>>);

impl<I> Drop for DoneGuard<I> {
    fn drop(&mut self) {
        let mut st = self.0.lock();
        if std::thread::panicking() && st.error.is_none() {
            st.error = Some(Error::Producer("producer thread panicked".into()));
        }
        st.done = true;
        drop(st);
        self.0.not_empty.notify_all();
    }
}

fn wait_for(d: Duration) {
    if d.is_zero() {
        return;
    }
    // Sleep granularity is far coarser than typical synthetic delays.
    if d < Duration::from_micros(200) {
        let start = Instant::now();
        while start.elapsed() < d {
            std::hint::spin_loop();
        }
    } else {
        std::thread::sleep(d);
    }
}

struct Delay {
    model: Option<DelayModel>,
    rng: Option<DataRng>,
}

impl Delay {
    fn new(model: Option<DelayModel>) -> Self {
        let rng = match model {
            Some(DelayModel::Uniform { seed, .. }) => Some(DataRng::new(seed)),
            _ => None,
        };
        Self { model, rng }
    }

    fn apply(&mut self) {
        match self.model {
            None => {}
            Some(DelayModel::Fixed(d)) => wait_for(d),
            Some(DelayModel::Uniform { min, max, .. }) => {
                let u = self.rng.as_mut().expect("seeded delay").uniform();
                wait_for(min + (max - min).mul_f64(u));
            }
        }
    }
}

pub struct BufferedStream<I> {
    shared: Arc<Shared<I>>,
    producer: Option<JoinHandle<()>>,
    threshold: usize,
    started: bool,
    first_wait: Option<Duration>,
}

/// Starts the producer thread over `source` and returns the consuming end.
pub fn open_buffered<I, S>(source: S, cfg: &BufferedStreamConfig) -> Result<BufferedStream<I>>
where
    I: Send + 'static,
    S: IntoIterator<Item = Result<I>>,
    S::IntoIter: Send + 'static,
{
    cfg.validate()?;
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            queue: VecDeque::with_capacity(cfg.capacity.min(1 << 16)),
            done: false,
            closed: false,
            error: None,
        }),
        not_empty: Condvar::new(),
        not_full: Condvar::new(),
    });
    let capacity = cfg.capacity;
    let mut delay = Delay::new(cfg.producer_delay);
    let source = source.into_iter();
    let producer_shared = Arc::clone(&shared);
    let producer = std::thread::Builder::new()
        .name("buffered-stream-producer".into())
        .spawn(move || {
            let guard = DoneGuard(producer_shared);
            let shared = &guard.0;
            for item in source {
                delay.apply();
                let mut st = shared.lock();
                match item {
                    Ok(x) => {
                        while st.queue.len() >= capacity && !st.closed {
                            st = shared.not_full.wait(st).unwrap_or_else(|p| p.into_inner());
                        }
                        if st.closed {
                            return;
                        }
                        st.queue.push_back(x);
                        drop(st);
                        shared.not_empty.notify_one();
                    }
                    Err(e) => {
                        st.error = Some(e);
                        return;
                    }
                }
            }
        })?;
    Ok(BufferedStream {
        shared,
        producer: Some(producer),
        threshold: cfg.start_threshold(),
        started: false,
        first_wait: None,
    })
}

impl<I> BufferedStream<I> {
    /// Time the first read spent waiting for the start threshold.
    pub fn first_read_wait(&self) -> Option<Duration> {
        self.first_wait
    }

    pub fn start_threshold(&self) -> usize {
        self.threshold
    }
}

impl<I> Iterator for BufferedStream<I> {
    type Item = Result<I>;

    fn next(&mut self) -> Option<Result<I>> {
        let shared = &self.shared;
        let mut st = shared.lock();
        if !self.started {
            let t0 = Instant::now();
            while st.queue.len() < self.threshold && !st.done {
                st = shared.not_empty.wait(st).unwrap_or_else(|p| p.into_inner());
            }
            self.started = true;
            self.first_wait = Some(t0.elapsed());
        }
        while st.queue.is_empty() && !st.done {
            st = shared.not_empty.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        if let Some(x) = st.queue.pop_front() {
            drop(st);
            shared.not_full.notify_one();
            return Some(Ok(x));
        }
        st.error.take().map(Err)
    }
}

impl<I> Drop for BufferedStream<I> {
    fn drop(&mut self) {
        self.shared.lock().closed = true;
        self.shared.not_full.notify_all();
        if let Some(h) = self.producer.take() {
            let _ = h.join();
        }
    }
}
