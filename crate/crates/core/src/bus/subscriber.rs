use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use parking_lot::Mutex;

use super::frame::{frame_encode, Frame, FrameDecoder};
use super::transport::Conn;
use super::{Endpoint, Subscription, SUBSCRIBE_TOPIC};

#[derive(Debug, Clone)]
pub struct SubscriberOptions {
    pub connect_timeout: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Consecutive failed connection attempts before an
    /// [`SubscriberEvent::Error`] is emitted. Retrying continues regardless.
    pub retries_before_error: u32,
    /// Bound on batches buffered between the socket reader and the consumer.
    pub channel_capacity: usize,
}

impl Default for SubscriberOptions {
    fn default() -> Self {
        SubscriberOptions {
            connect_timeout: Duration::from_secs(2),
            initial_backoff: Duration::from_millis(50),
            max_backoff: Duration::from_secs(2),
            retries_before_error: 10,
            channel_capacity: 65_536,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubscriberEvent {
    Connected,
    /// All frames decoded from one socket read.
    Frames {
        frames: Vec<Frame>,
        received_at: Instant,
    },
    Disconnected(String),
    /// Raised after `retries_before_error` failed attempts in a row.
    Error(String),
}

/// Socket subscriber. A background thread connects, sends the prefix
/// handshake and decodes frames; it reconnects with exponential backoff
/// when the connection drops. Frames published while disconnected are lost.
pub struct Subscriber {
    events: Receiver<SubscriberEvent>,
    pending: VecDeque<Frame>,
    stop: Arc<AtomicBool>,
    conn: Arc<Mutex<Option<Conn>>>,
    reader: Option<JoinHandle<()>>,
}

impl Subscriber {
    pub fn connect(endpoint: &Endpoint, sub: &Subscription) -> Subscriber {
        Self::connect_with(endpoint, sub, SubscriberOptions::default())
    }

    pub fn connect_with(
        endpoint: &Endpoint,
        sub: &Subscription,
        options: SubscriberOptions,
    ) -> Subscriber {
        let (tx, rx) = mpsc::sync_channel(options.channel_capacity.max(1));
        let stop = Arc::new(AtomicBool::new(false));
        let conn = Arc::new(Mutex::new(None));
        let reader = {
            let endpoint = endpoint.clone();
            let sub = sub.clone();
            let stop = Arc::clone(&stop);
            let conn = Arc::clone(&conn);
            thread::Builder::new()
                .name("bus-subscriber".into())
                .spawn(move || reader_loop(endpoint, sub, options, tx, stop, conn))
                .expect("spawn subscriber thread")
        };
        Subscriber {
            events: rx,
            pending: VecDeque::new(),
            stop,
            conn,
            reader: Some(reader),
        }
    }

    /// Next raw event, including connection state changes.
    pub fn next_event(&mut self, timeout: Duration) -> Option<SubscriberEvent> {
        self.events.recv_timeout(timeout).ok()
    }

    /// Next frame, skipping connection events. `None` on timeout.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<Frame> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(f) = self.pending.pop_front() {
                return Some(f);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(SubscriberEvent::Frames { frames, .. }) => self.pending.extend(frames),
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    return None
                }
            }
        }
    }

    /// Blocks until a connection is established or `timeout` elapses.
    /// Frames arriving meanwhile are kept for `recv_timeout`.
    pub fn wait_connected(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(SubscriberEvent::Connected) => return true,
                Ok(SubscriberEvent::Frames { frames, .. }) => self.pending.extend(frames),
                Ok(_) => {}
                Err(_) => return false,
            }
        }
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(c) = self.conn.lock().as_ref() {
            c.shutdown();
        }
        // Unblock a reader stuck on a full channel.
        while self.events.try_recv().is_ok() {}
        if let Some(h) = self.reader.take() {
            let deadline = Instant::now() + Duration::from_secs(5);
            while !h.is_finished() && Instant::now() < deadline {
                while self.events.try_recv().is_ok() {}
                thread::sleep(Duration::from_millis(2));
            }
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}

fn reader_loop(
    endpoint: Endpoint,
    sub: Subscription,
    options: SubscriberOptions,
    tx: SyncSender<SubscriberEvent>,
    stop: Arc<AtomicBool>,
    shared_conn: Arc<Mutex<Option<Conn>>>,
) {
    let handshake = frame_encode(&Frame {
        topic: SUBSCRIBE_TOPIC.to_owned(),
        payload: sub.prefix.as_bytes().to_vec(),
    })
    .expect("prefix fits in a frame");
    let mut backoff = options.initial_backoff;
    let mut failures = 0u32;

    while !stop.load(Ordering::SeqCst) {
        let mut conn = match Conn::connect(&endpoint, options.connect_timeout)
            .and_then(|mut c| c.write_all(&handshake).map(|_| c))
        {
            Ok(c) => c,
            Err(e) => {
                failures += 1;
                if failures == options.retries_before_error {
                    warn!("subscriber cannot reach {endpoint}: {e}");
                    let msg = format!("{endpoint} unreachable after {failures} attempts: {e}");
                    if tx.send(SubscriberEvent::Error(msg)).is_err() {
                        return;
                    }
                }
                sleep_unless_stopped(backoff, &stop);
                backoff = (backoff * 2).min(options.max_backoff);
                continue;
            }
        };
        failures = 0;
        backoff = options.initial_backoff;
        if let Ok(clone) = conn.try_clone() {
            *shared_conn.lock() = Some(clone);
        }
        if stop.load(Ordering::SeqCst) {
            conn.shutdown();
            return;
        }
        if tx.send(SubscriberEvent::Connected).is_err() {
            return;
        }
        debug!("subscribed to {endpoint} with prefix {:?}", sub.prefix);

        let reason = read_frames(&mut conn, &sub, &tx);
        *shared_conn.lock() = None;
        conn.shutdown();
        match reason {
            ReadEnd::ConsumerGone => return,
            ReadEnd::Closed(why) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                if tx.send(SubscriberEvent::Disconnected(why)).is_err() {
                    return;
                }
            }
        }
    }
}

enum ReadEnd {
    ConsumerGone,
    Closed(String),
}

fn read_frames(conn: &mut Conn, sub: &Subscription, tx: &SyncSender<SubscriberEvent>) -> ReadEnd {
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 256 * 1024];
    loop {
        let n = match conn.read(&mut buf) {
            Ok(0) => return ReadEnd::Closed("connection closed by publisher".into()),
            Ok(n) => n,
            Err(e) => return ReadEnd::Closed(e.to_string()),
        };
        let received_at = Instant::now();
        decoder.push(&buf[..n]);
        let mut frames = match decoder.drain() {
            Ok(f) => f,
            Err(e) => return ReadEnd::Closed(format!("corrupt stream: {e}")),
        };
        frames.retain(|f| sub.matches(&f.topic));
        if frames.is_empty() {
            continue;
        }
        if tx
            .send(SubscriberEvent::Frames {
                frames,
                received_at,
            })
            .is_err()
        {
            return ReadEnd::ConsumerGone;
        }
    }
}

fn sleep_unless_stopped(d: Duration, stop: &AtomicBool) {
    let deadline = Instant::now() + d;
    while Instant::now() < deadline && !stop.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(10).min(d));
    }
}
