use std::collections::VecDeque;
use std::io::{BufWriter, Read, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use parking_lot::{Condvar, Mutex, RwLock};

use super::frame::{frame_encode, Frame, FrameDecoder, FrameError};
use super::transport::{Conn, Listener};
use super::{BusError, Endpoint, Subscription, DEFAULT_QUEUE_CAPACITY, SUBSCRIBE_TOPIC};

#[derive(Debug, Clone)]
pub struct PublisherOptions {
    /// Frames buffered per subscriber before the oldest is dropped.
    pub queue_capacity: usize,
    /// How long a fresh connection may take to send its handshake.
    pub handshake_timeout: Duration,
}

impl Default for PublisherOptions {
    fn default() -> Self {
        PublisherOptions {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            handshake_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PublisherStats {
    /// Bytes written to subscriber connections.
    pub bytes_sent: u64,
    /// Frames written to subscriber connections.
    pub frames_sent: u64,
    /// Frames discarded by full subscriber queues.
    pub frames_dropped: u64,
    pub subscribers: usize,
}

struct QueueState {
    items: VecDeque<Arc<Vec<u8>>>,
    closed: bool,
}

struct SubscriberQueue {
    prefix: Vec<u8>,
    state: Mutex<QueueState>,
    ready: Condvar,
    dropped: AtomicU64,
}

impl SubscriberQueue {
    fn new(prefix: Vec<u8>) -> Arc<Self> {
        Arc::new(SubscriberQueue {
            prefix,
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                closed: false,
            }),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        })
    }

    fn push(&self, item: Arc<Vec<u8>>, capacity: usize) -> bool {
        let mut st = self.state.lock();
        if st.closed {
            return false;
        }
        let mut dropped = false;
        while st.items.len() >= capacity.max(1) {
            st.items.pop_front();
            dropped = true;
        }
        st.items.push_back(item);
        drop(st);
        self.ready.notify_one();
        if dropped {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        dropped
    }

    fn close(&self) {
        self.state.lock().closed = true;
        self.ready.notify_all();
    }
}

struct Shared {
    subs: RwLock<Vec<Arc<SubscriberQueue>>>,
    bytes_sent: AtomicU64,
    frames_sent: AtomicU64,
    frames_dropped: AtomicU64,
    shutdown: AtomicBool,
    options: PublisherOptions,
}

impl Shared {
    fn remove(&self, queue: &Arc<SubscriberQueue>) {
        queue.close();
        self.subs.write().retain(|q| !Arc::ptr_eq(q, queue));
    }
}

/// Publishing side of the bus. Cheap to share behind an `Arc`; `publish`
/// may be called from any number of threads.
pub struct Publisher {
    shared: Arc<Shared>,
    endpoint: Option<Endpoint>,
    acceptor: Option<JoinHandle<()>>,
}

impl Publisher {
    /// Binds `endpoint` and starts accepting subscribers. A TCP endpoint
    /// built with port 0 binds an ephemeral port; see [`Publisher::endpoint`].
    pub fn bind(endpoint: &Endpoint) -> Result<Publisher, BusError> {
        Self::bind_with(endpoint, PublisherOptions::default())
    }

    pub fn bind_with(endpoint: &Endpoint, options: PublisherOptions) -> Result<Publisher, BusError> {
        let listener = Listener::bind(endpoint).map_err(|source| BusError::Bind {
            endpoint: endpoint.to_string(),
            source,
        })?;
        let bound = listener.local_endpoint()?;
        let shared = Arc::new(Shared::new(options));
        let acceptor = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("bus-accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        debug!("publisher bound on {bound}");
        Ok(Publisher {
            shared,
            endpoint: Some(bound),
            acceptor: Some(acceptor),
        })
    }

    /// Publisher without a socket; only [`Publisher::subscribe_local`]
    /// subscribers receive frames.
    pub fn local() -> Publisher {
        Self::local_with(PublisherOptions::default())
    }

    pub fn local_with(options: PublisherOptions) -> Publisher {
        Publisher {
            shared: Arc::new(Shared::new(options)),
            endpoint: None,
            acceptor: None,
        }
    }

    /// The endpoint actually bound, with the real port for ephemeral binds.
    pub fn endpoint(&self) -> Option<&Endpoint> {
        self.endpoint.as_ref()
    }

    /// Queues `frame` for every subscriber whose prefix matches and returns
    /// how many matched. Nothing is encoded when none does.
    pub fn publish(&self, frame: &Frame) -> Result<usize, FrameError> {
        let subs = self.shared.subs.read();
        let mut encoded: Option<Arc<Vec<u8>>> = None;
        let mut matched = 0;
        for q in subs.iter() {
            if !frame.topic.as_bytes().starts_with(&q.prefix) {
                continue;
            }
            let bytes = match &encoded {
                Some(b) => Arc::clone(b),
                None => {
                    let b = Arc::new(frame_encode(frame)?);
                    encoded = Some(Arc::clone(&b));
                    b
                }
            };
            if q.push(bytes, self.shared.options.queue_capacity) {
                self.shared.frames_dropped.fetch_add(1, Ordering::Relaxed);
            }
            matched += 1;
        }
        Ok(matched)
    }

    /// In-process subscription with the same prefix and queue semantics as
    /// a socket subscriber.
    pub fn subscribe_local(&self, sub: &Subscription) -> LocalSubscriber {
        let queue = SubscriberQueue::new(sub.prefix.as_bytes().to_vec());
        self.shared.subs.write().push(Arc::clone(&queue));
        LocalSubscriber {
            queue,
            shared: Arc::downgrade(&self.shared),
        }
    }

    pub fn stats(&self) -> PublisherStats {
        PublisherStats {
            bytes_sent: self.shared.bytes_sent.load(Ordering::Relaxed),
            frames_sent: self.shared.frames_sent.load(Ordering::Relaxed),
            frames_dropped: self.shared.frames_dropped.load(Ordering::Relaxed),
            subscribers: self.shared.subs.read().len(),
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.shared.subs.read().len()
    }

    /// Blocks until at least `n` subscribers are registered or `timeout`
    /// elapses. Returns whether the count was reached.
    pub fn wait_for_subscribers(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.subscriber_count() >= n {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    /// Blocks until every subscriber queue is empty or `timeout` elapses.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let pending: usize = self
                .shared
                .subs
                .read()
                .iter()
                .map(|q| q.state.lock().items.len())
                .sum();
            if pending == 0 {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(2));
        }
    }

    pub fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for q in self.shared.subs.write().drain(..) {
            q.close();
        }
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Shared {
    fn new(options: PublisherOptions) -> Self {
        Shared {
            subs: RwLock::new(Vec::new()),
            bytes_sent: AtomicU64::new(0),
            frames_sent: AtomicU64::new(0),
            frames_dropped: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            options,
        }
    }
}

fn accept_loop(listener: Listener, shared: Arc<Shared>) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.try_accept() {
            Ok(Some(conn)) => {
                let shared = Arc::clone(&shared);
                let spawned = thread::Builder::new()
                    .name("bus-conn".into())
                    .spawn(move || serve_connection(conn, shared));
                if let Err(e) = spawned {
                    warn!("cannot spawn connection thread: {e}");
                }
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

/// Reads the handshake, registers the subscriber, then watches the socket
/// for EOF so a departed subscriber is removed even when idle.
fn serve_connection(mut conn: Conn, shared: Arc<Shared>) {
    let prefix = match read_handshake(&mut conn, shared.options.handshake_timeout) {
        Some(p) => p,
        None => {
            conn.shutdown();
            return;
        }
    };
    if shared.shutdown.load(Ordering::SeqCst) {
        conn.shutdown();
        return;
    }
    let writer_conn = match conn.try_clone() {
        Ok(c) => c,
        Err(e) => {
            warn!("cannot clone subscriber connection: {e}");
            return;
        }
    };
    let queue = SubscriberQueue::new(prefix);
    shared.subs.write().push(Arc::clone(&queue));
    let writer = {
        let shared = Arc::clone(&shared);
        let queue = Arc::clone(&queue);
        thread::Builder::new()
            .name("bus-writer".into())
            .spawn(move || write_loop(writer_conn, queue, shared))
    };
    if writer.is_err() {
        shared.remove(&queue);
        conn.shutdown();
        return;
    }

    let _ = conn.set_read_timeout(None);
    let mut scratch = [0u8; 256];
    loop {
        match conn.read(&mut scratch) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
    }
    shared.remove(&queue);
    conn.shutdown();
}

fn read_handshake(conn: &mut Conn, timeout: Duration) -> Option<Vec<u8>> {
    conn.set_read_timeout(Some(timeout)).ok()?;
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 1024];
    loop {
        let n = conn.read(&mut buf).ok()?;
        if n == 0 {
            return None;
        }
        decoder.push(&buf[..n]);
        let frames = decoder.drain().ok()?;
        if let Some(first) = frames.into_iter().next() {
            if first.topic != SUBSCRIBE_TOPIC {
                warn!("connection sent {:?} instead of a handshake", first.topic);
                return None;
            }
            return Some(first.payload);
        }
    }
}

fn write_loop(conn: Conn, queue: Arc<SubscriberQueue>, shared: Arc<Shared>) {
    let mut out = BufWriter::with_capacity(64 * 1024, conn);
    let mut batch: VecDeque<Arc<Vec<u8>>> = VecDeque::new();
    loop {
        {
            let mut st = queue.state.lock();
            while st.items.is_empty() && !st.closed {
                queue.ready.wait(&mut st);
            }
            if st.closed {
                break;
            }
            std::mem::swap(&mut batch, &mut st.items);
        }
        let mut bytes = 0u64;
        let mut frames = 0u64;
        let mut failed = false;
        for item in batch.drain(..) {
            if out.write_all(&item).is_err() {
                failed = true;
                break;
            }
            bytes += item.len() as u64;
            frames += 1;
        }
        if !failed && out.flush().is_err() {
            failed = true;
        }
        shared.bytes_sent.fetch_add(bytes, Ordering::Relaxed);
        shared.frames_sent.fetch_add(frames, Ordering::Relaxed);
        if failed {
            debug!("subscriber write failed, dropping connection");
            break;
        }
    }
    shared.remove(&queue);
    out.get_ref().shutdown();
}

/// In-process subscriber returned by [`Publisher::subscribe_local`].
pub struct LocalSubscriber {
    queue: Arc<SubscriberQueue>,
    shared: Weak<Shared>,
}

impl LocalSubscriber {
    /// Next frame, waiting up to `timeout`. `None` on timeout or once the
    /// publisher is gone and the queue is drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Frame> {
        let deadline = Instant::now() + timeout;
        let mut st = self.queue.state.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                drop(st);
                return super::frame_decode(&item).ok();
            }
            if st.closed {
                return None;
            }
            if self.queue.ready.wait_until(&mut st, deadline).timed_out() {
                return st
                    .items
                    .pop_front()
                    .and_then(|item| super::frame_decode(&item).ok());
            }
        }
    }

    pub fn try_recv(&self) -> Option<Frame> {
        let item = self.queue.state.lock().items.pop_front()?;
        super::frame_decode(&item).ok()
    }

    /// Frames dropped because this subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for LocalSubscriber {
    fn drop(&mut self) {
        match self.shared.upgrade() {
            Some(shared) => shared.remove(&self.queue),
            None => self.queue.close(),
        }
    }
}
