//! Relay between bus segments. A forwarder subscribes to one or more
//! upstream publishers and republishes every frame unchanged on its own
//! downstream endpoint, so consumers behind it see the same topics and
//! payloads. Forwarders chain; prefixes compose as the longer of the two
//! when one extends the other.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{info, warn};

use crate::bus::{
    BusError, Endpoint, Publisher, PublisherOptions, Subscriber, SubscriberEvent,
};
use crate::config::ForwarderConfig;

pub struct Forwarder {
    publisher: Arc<Publisher>,
    forwarded: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Forwarder {
    /// Binds the downstream side and starts relaying. A bind failure is
    /// returned immediately; upstreams that are not reachable yet are
    /// retried in the background.
    pub fn start(cfg: &ForwarderConfig) -> Result<Forwarder, BusError> {
        cfg.validate()
            .map_err(|e| BusError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string())))?;
        let publisher = Arc::new(Publisher::bind_with(
            &cfg.downstream_bind,
            PublisherOptions {
                queue_capacity: cfg.queue_capacity,
                ..Default::default()
            },
        )?);
        let forwarded = Arc::new(AtomicU64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        for up in &cfg.upstreams {
            let mut sub = Subscriber::connect(&up.endpoint, &up.subscription);
            let publisher = Arc::clone(&publisher);
            let forwarded = Arc::clone(&forwarded);
            let stop = Arc::clone(&stop);
            let name = up.endpoint.to_string();
            let handle = thread::Builder::new()
                .name("forwarder".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match sub.next_event(Duration::from_millis(200)) {
                            Some(SubscriberEvent::Frames { frames, .. }) => {
                                for f in &frames {
                                    // Frames arrived already validated, so this cannot fail.
                                    let _ = publisher.publish(f);
                                }
                                forwarded.fetch_add(frames.len() as u64, Ordering::Relaxed);
                            }
                            Some(SubscriberEvent::Connected) => info!("connected to upstream {name}"),
                            Some(SubscriberEvent::Disconnected(why)) => {
                                warn!("upstream {name} lost: {why}")
                            }
                            Some(SubscriberEvent::Error(e)) => warn!("upstream {name}: {e}"),
                            None => {}
                        }
                    }
                })
                .map_err(BusError::Io)?;
            threads.push(handle);
        }
        Ok(Forwarder {
            publisher,
            forwarded,
            stop,
            threads,
        })
    }

    /// Actual downstream endpoint (with the real port for `:0` binds).
    pub fn endpoint(&self) -> Endpoint {
        self.publisher
            .endpoint()
            .cloned()
            .expect("forwarders always bind a socket")
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded.load(Ordering::Relaxed)
    }

    pub fn publisher(&self) -> &Arc<Publisher> {
        &self.publisher
    }
}

impl Drop for Forwarder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Forwarder daemon entry point; runs until the process is killed.
pub fn run_forwarder(cfg: &ForwarderConfig) -> Result<(), BusError> {
    let fwd = Forwarder::start(cfg)?;
    info!(
        "forwarding {} upstreams to {}",
        cfg.upstreams.len(),
        fwd.endpoint()
    );
    loop {
        thread::park();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{Frame, Subscription};
    use crate::config::Upstream;
    use std::time::Instant;

    fn any_port() -> Endpoint {
        Endpoint::tcp("127.0.0.1", 0)
    }

    fn forwarder(up: Endpoint, prefix: &str) -> Forwarder {
        Forwarder::start(&ForwarderConfig {
            upstreams: vec![Upstream {
                endpoint: up,
                subscription: Subscription::new(prefix),
            }],
            downstream_bind: any_port(),
            queue_capacity: 10_000,
        })
        .unwrap()
    }

    fn collect(sub: &mut Subscriber, n: usize) -> Vec<Frame> {
        let deadline = Instant::now() + Duration::from_secs(10);
        let mut out = Vec::new();
        while out.len() < n && Instant::now() < deadline {
            if let Some(f) = sub.recv_timeout(Duration::from_millis(100)) {
                out.push(f);
            }
        }
        out
    }

    fn frame(topic: &str, i: u32) -> Frame {
        Frame::new(topic, format!("payload-{i}").into_bytes()).unwrap()
    }

    /// Publishes until the chain is wired end to end, then the real run.
    fn warm_up(p: &Publisher, sub: &mut Subscriber, topic: &str) {
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            p.publish(&Frame::new(topic, b"warm".to_vec()).unwrap()).unwrap();
            if sub.recv_timeout(Duration::from_millis(50)).is_some() {
                // Drain stragglers.
                while sub.recv_timeout(Duration::from_millis(100)).is_some() {}
                return;
            }
        }
        panic!("chain never connected");
    }

    #[test]
    fn chain_of_three_is_transparent() {
        let src = Publisher::bind(&any_port()).unwrap();
        let f1 = forwarder(src.endpoint().unwrap().clone(), "");
        let f2 = forwarder(f1.endpoint(), "");
        let f3 = forwarder(f2.endpoint(), "");
        let mut sub = Subscriber::connect(&f3.endpoint(), &Subscription::all());
        warm_up(&src, &mut sub, "s/p");

        let sent: Vec<Frame> = (0..500).map(|i| frame("s/p", i)).collect();
        for f in &sent {
            src.publish(f).unwrap();
        }
        assert_eq!(collect(&mut sub, sent.len()), sent);
    }

    #[test]
    fn prefixes_compose() {
        let src = Publisher::bind(&any_port()).unwrap();
        let fwd = forwarder(src.endpoint().unwrap().clone(), "siteA/");
        let mut sub = Subscriber::connect(&fwd.endpoint(), &Subscription::new("siteA/pdu"));
        warm_up(&src, &mut sub, "siteA/pdu0");

        for (i, t) in ["siteB/pdu1", "siteA/ipmi1", "siteA/pdu1", "siteA/pdu2"]
            .iter()
            .enumerate()
        {
            src.publish(&frame(t, i as u32)).unwrap();
        }
        let got = collect(&mut sub, 2);
        let topics: Vec<&str> = got.iter().map(|f| f.topic.as_str()).collect();
        assert_eq!(topics, ["siteA/pdu1", "siteA/pdu2"]);
        assert!(sub.recv_timeout(Duration::from_millis(300)).is_none());
    }

    #[test]
    fn downstream_bind_conflict_is_fatal() {
        let src = Publisher::bind(&any_port()).unwrap();
        let taken = Publisher::bind(&any_port()).unwrap();
        let err = Forwarder::start(&ForwarderConfig {
            upstreams: vec![Upstream {
                endpoint: src.endpoint().unwrap().clone(),
                subscription: Subscription::all(),
            }],
            downstream_bind: taken.endpoint().unwrap().clone(),
            queue_capacity: 10,
        });
        assert!(matches!(err, Err(BusError::Bind { .. })));
    }
}
