//! Keyed message store shared by the in-process and TCP endpoints.

use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{MessageKey, TransportError, WireMessage};

/// Holds arrived-but-unclaimed messages. Messages with the same key queue in
/// arrival order, which preserves per-(src, dst) FIFO delivery.
pub(crate) struct Mailbox {
    inner: Mutex<Inner>,
    available: Condvar,
}

struct Inner {
    queues: HashMap<MessageKey, VecDeque<WireMessage>>,
    closed: bool,
}

impl Mailbox {
    pub(crate) fn new() -> Self {
        Mailbox {
            inner: Mutex::new(Inner {
                queues: HashMap::new(),
                closed: false,
            }),
            available: Condvar::new(),
        }
    }

    pub(crate) fn push(&self, msg: WireMessage) {
        let mut inner = self.inner.lock().unwrap();
        inner.queues.entry(msg.key()).or_default().push_back(msg);
        self.available.notify_all();
    }

    pub(crate) fn close(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.closed = true;
        self.available.notify_all();
    }

    fn pop(inner: &mut Inner, key: &MessageKey) -> Option<WireMessage> {
        let queue = inner.queues.get_mut(key)?;
        let msg = queue.pop_front();
        if queue.is_empty() {
            inner.queues.remove(key);
        }
        msg
    }

    pub(crate) fn try_take(&self, key: MessageKey) -> Result<Option<WireMessage>, TransportError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(msg) = Self::pop(&mut inner, &key) {
            return Ok(Some(msg));
        }
        if inner.closed {
            return Err(TransportError::Closed);
        }
        Ok(None)
    }

    /// Block until the matching message arrives, the mailbox closes, or the
    /// timeout (if any) elapses.
    pub(crate) fn take(
        &self,
        key: MessageKey,
        timeout: Option<Duration>,
    ) -> Result<WireMessage, TransportError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(msg) = Self::pop(&mut inner, &key) {
                return Ok(msg);
            }
            if inner.closed {
                return Err(TransportError::Closed);
            }
            match deadline {
                None => inner = self.available.wait(inner).unwrap(),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(TransportError::Timeout(timeout.unwrap(), key));
                    }
                    let (guard, _) = self.available.wait_timeout(inner, deadline - now).unwrap();
                    inner = guard;
                }
            }
        }
    }
}
