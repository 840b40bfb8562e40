//! Broker-less publish/subscribe bus.
//!
//! A [`Publisher`] binds an [`Endpoint`] and pushes length-prefixed
//! [`Frame`]s to every connected subscriber whose prefix matches the frame
//! topic. Filtering happens on the publisher side: a subscriber announces
//! its prefix in a handshake frame (topic `SUB`, payload = prefix) right
//! after connecting, so nothing is written to a connection that did not ask
//! for it, and nothing at all is written when no subscriber matches.
//!
//! Each subscriber connection owns a bounded queue drained by a dedicated
//! writer thread. When the queue is full the oldest frame is dropped and the
//! subscriber's drop counter incremented; other subscribers are unaffected.
//!
//! Publishers and subscribers in the same process can skip sockets entirely
//! with [`Publisher::subscribe_local`], which offers the same contract over
//! an in-memory queue.

mod endpoint;
mod frame;
mod publisher;
mod subscriber;
mod transport;

use thiserror::Error;

pub use endpoint::{Endpoint, EndpointError};
pub use frame::{frame_decode, frame_encode, Frame, FrameDecoder, FrameError, MAX_FRAME_LEN};
pub use publisher::{LocalSubscriber, Publisher, PublisherOptions, PublisherStats};
pub use subscriber::{Subscriber, SubscriberEvent, SubscriberOptions};

/// Topic of the handshake frame a subscriber sends on connect.
pub const SUBSCRIBE_TOPIC: &str = "SUB";

/// Default per-subscriber queue bound.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A topic prefix. The empty prefix matches every topic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Subscription {
    pub prefix: String,
}

impl Subscription {
    pub fn new(prefix: impl Into<String>) -> Self {
        Subscription {
            prefix: prefix.into(),
        }
    }

    pub fn all() -> Self {
        Subscription::default()
    }

    pub fn matches(&self, topic: &str) -> bool {
        match_prefix(self, topic)
    }
}

/// Byte-wise prefix test.
pub fn match_prefix(sub: &Subscription, topic: &str) -> bool {
    topic.as_bytes().starts_with(sub.prefix.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_matching() {
        assert!(match_prefix(&Subscription::new(""), "siteA/p1"));
        assert!(match_prefix(&Subscription::new("siteA/"), "siteA/p1"));
        assert!(!match_prefix(&Subscription::new("siteB/"), "siteA/p1"));
        assert!(!match_prefix(&Subscription::new("siteA/p1x"), "siteA/p1"));
    }
}
