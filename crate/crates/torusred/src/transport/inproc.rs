//! Deterministic in-process fabric.
//!
//! All endpoints share one set of mailboxes behind an `Arc`. Delivery is
//! immediate (a send enqueues directly into the destination mailbox), reliable,
//! and FIFO per (src, dst). With exact-key receive matching, two runs of the
//! same collective over the same inputs produce bit-identical message
//! sequences and results regardless of thread interleaving.
//!
//! The fabric records per-phase send statistics, can inject a fixed
//! per-message delay (to emulate link latency in benchmarks), and can corrupt
//! a single payload byte as a negative control for verification runs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::mailbox::Mailbox;
use super::{Transport, TransportError, TransportStats, WireMessage};

#[derive(Clone, Debug, Default)]
pub struct FabricOptions {
    /// Sleep this long in every `send`, emulating per-message link latency.
    pub send_delay: Option<Duration>,
    /// Flip one high-order byte in the first non-empty payload sent. Used to
    /// demonstrate that verification catches corrupted traffic.
    pub corrupt_one_payload: bool,
    /// Bound on blocking receives. In-process receives wait forever by
    /// default.
    pub recv_timeout: Option<Duration>,
}

struct Shared {
    n_ranks: u32,
    mailboxes: Vec<Mailbox>,
    options: FabricOptions,
    fault_pending: AtomicBool,
    closed: AtomicBool,
    stats: Mutex<TransportStats>,
}

/// Handle to the fabric as a whole; endpoints keep it alive.
#[derive(Clone)]
pub struct InprocFabric {
    shared: Arc<Shared>,
}

impl InprocFabric {
    pub fn new(n_ranks: u32) -> (Self, Vec<InprocEndpoint>) {
        Self::with_options(n_ranks, FabricOptions::default())
    }

    pub fn with_options(n_ranks: u32, options: FabricOptions) -> (Self, Vec<InprocEndpoint>) {
        assert!(n_ranks >= 1, "fabric needs at least one rank");
        let shared = Arc::new(Shared {
            n_ranks,
            mailboxes: (0..n_ranks).map(|_| Mailbox::new()).collect(),
            fault_pending: AtomicBool::new(options.corrupt_one_payload),
            options,
            closed: AtomicBool::new(false),
            stats: Mutex::new(TransportStats::default()),
        });
        let endpoints = (0..n_ranks)
            .map(|rank| InprocEndpoint {
                rank,
                shared: Arc::clone(&shared),
            })
            .collect();
        (InprocFabric { shared }, endpoints)
    }

    /// Snapshot of everything sent so far.
    pub fn stats(&self) -> TransportStats {
        self.shared.stats.lock().unwrap().clone()
    }

    pub fn reset_stats(&self) {
        *self.shared.stats.lock().unwrap() = TransportStats::default();
    }

    /// Close the fabric: pending and future receives fail, sends are rejected.
    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        for mb in &self.shared.mailboxes {
            mb.close();
        }
    }
}

/// One rank's handle on the in-process fabric.
pub struct InprocEndpoint {
    rank: u32,
    shared: Arc<Shared>,
}

impl Transport for InprocEndpoint {
    fn rank(&self) -> u32 {
        self.rank
    }

    fn n_ranks(&self) -> u32 {
        self.shared.n_ranks
    }

    fn send(&self, dst: u32, mut msg: WireMessage) -> Result<(), TransportError> {
        if dst >= self.shared.n_ranks {
            return Err(TransportError::InvalidDestination {
                dst,
                n_ranks: self.shared.n_ranks,
            });
        }
        if dst == self.rank {
            return Err(TransportError::SelfSend { rank: self.rank });
        }
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        if let Some(delay) = self.shared.options.send_delay {
            std::thread::sleep(delay);
        }
        if !msg.payload.is_empty()
            && self
                .shared
                .fault_pending
                .compare_exchange(true, false, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
        {
            // Flip an exponent bit of the first element (little-endian, so the
            // high-order byte sits at the end of the element).
            let idx = msg.dtype.size_bytes() - 1;
            msg.payload[idx] ^= 0x40;
        }
        self.shared
            .stats
            .lock()
            .unwrap()
            .record(self.rank, msg.phase, msg.step, msg.payload_len());
        self.shared.mailboxes[dst as usize].push(msg);
        Ok(())
    }

    fn recv(
        &self,
        src: u32,
        collective_id: u32,
        phase: u8,
        step: u32,
    ) -> Result<WireMessage, TransportError> {
        let key = super::MessageKey {
            src,
            collective_id,
            phase,
            step,
        };
        self.shared.mailboxes[self.rank as usize].take(key, self.shared.options.recv_timeout)
    }

    fn try_recv(
        &self,
        src: u32,
        collective_id: u32,
        phase: u8,
        step: u32,
    ) -> Result<Option<WireMessage>, TransportError> {
        let key = super::MessageKey {
            src,
            collective_id,
            phase,
            step,
        };
        self.shared.mailboxes[self.rank as usize].try_take(key)
    }
}
