//! TCP transport for real multi-process runs.
//!
//! Every rank binds a listener at its own peer-table address. Connections are
//! established lazily on first send, so only links that actually carry traffic
//! exist (ring schedules touch at most four peers per rank). Each direction of
//! a pair uses the sender's outbound connection; inbound connections are
//! drained by reader threads into the same keyed mailbox the in-process
//! fabric uses, so receive semantics are identical on both transports.
//!
//! An outbound connection opens with an 8-byte hello (`FRAME_MAGIC`, sender
//! rank, both little-endian) so the acceptor can attribute the stream.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::mailbox::Mailbox;
use super::{encode_frame, read_frame, Transport, TransportError, WireMessage, FRAME_MAGIC};

#[derive(Clone, Debug)]
pub struct TcpOptions {
    /// Wall-clock bound on a blocking receive.
    pub recv_timeout: Duration,
    /// How long to keep retrying the initial connection to a peer.
    pub connect_timeout: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        TcpOptions {
            recv_timeout: Duration::from_secs(30),
            connect_timeout: Duration::from_secs(30),
        }
    }
}

/// Parse a peer table: one `rank host:port` per line, `#` starts a comment.
/// Ranks must cover `0..n` exactly once each.
pub fn parse_peer_table(contents: &str) -> Result<Vec<SocketAddr>, TransportError> {
    let mut entries: Vec<(u32, SocketAddr)> = Vec::new();
    for (lineno, raw) in contents.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = |what: &str| {
            TransportError::PeerTable(format!("line {}: {} in {:?}", lineno + 1, what, raw))
        };
        let rank: u32 = parts
            .next()
            .ok_or_else(|| bad("missing rank"))?
            .parse()
            .map_err(|_| bad("bad rank"))?;
        let addr_str = parts.next().ok_or_else(|| bad("missing address"))?;
        if parts.next().is_some() {
            return Err(bad("trailing tokens"));
        }
        let addr = addr_str
            .to_socket_addrs()
            .map_err(|e| bad(&format!("unresolvable address ({e})")))?
            .next()
            .ok_or_else(|| bad("address resolved to nothing"))?;
        entries.push((rank, addr));
    }
    if entries.is_empty() {
        return Err(TransportError::PeerTable("empty peer table".into()));
    }
    let n = entries.len() as u32;
    let mut table = vec![None; entries.len()];
    for (rank, addr) in entries {
        if rank >= n {
            return Err(TransportError::PeerTable(format!(
                "rank {rank} out of range for {n} entries"
            )));
        }
        if table[rank as usize].replace(addr).is_some() {
            return Err(TransportError::PeerTable(format!("duplicate rank {rank}")));
        }
    }
    Ok(table.into_iter().map(Option::unwrap).collect())
}

pub fn load_peer_table(path: &std::path::Path) -> Result<Vec<SocketAddr>, TransportError> {
    parse_peer_table(&std::fs::read_to_string(path)?)
}

struct Shared {
    rank: u32,
    peers: Vec<SocketAddr>,
    options: TcpOptions,
    mailbox: Mailbox,
    outbound: Mutex<HashMap<u32, TcpStream>>,
    inbound: Mutex<Vec<TcpStream>>,
    shutdown: AtomicBool,
}

/// One rank's endpoint over TCP.
pub struct TcpEndpoint {
    shared: Arc<Shared>,
}

impl TcpEndpoint {
    /// Bind this rank's listener and start accepting peers. Returns once the
    /// listener is live; peer connections are made lazily.
    pub fn bind(
        rank: u32,
        peers: Vec<SocketAddr>,
        options: TcpOptions,
    ) -> Result<Self, TransportError> {
        let n = peers.len() as u32;
        if rank >= n {
            return Err(TransportError::PeerTable(format!(
                "own rank {rank} out of range for {n} peers"
            )));
        }
        let listener = TcpListener::bind(peers[rank as usize])?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared {
            rank,
            peers,
            options,
            mailbox: Mailbox::new(),
            outbound: Mutex::new(HashMap::new()),
            inbound: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        std::thread::spawn(move || accept_loop(listener, accept_shared));
        Ok(TcpEndpoint { shared })
    }

    fn connect(&self, dst: u32) -> Result<TcpStream, TransportError> {
        let addr = self.shared.peers[dst as usize];
        let deadline = Instant::now() + self.shared.options.connect_timeout;
        let stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) => {
                    // The peer may simply not be listening yet.
                    if Instant::now() >= deadline {
                        return Err(TransportError::Io(e));
                    }
                    std::thread::sleep(Duration::from_millis(25));
                }
            }
        };
        stream.set_nodelay(true)?;
        let mut hello = [0u8; 8];
        hello[..4].copy_from_slice(&FRAME_MAGIC.to_le_bytes());
        hello[4..].copy_from_slice(&self.shared.rank.to_le_bytes());
        let mut s = stream;
        s.write_all(&hello)?;
        Ok(s)
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let conn_shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    let _ = handle_inbound(stream, conn_shared);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(_) => return,
        }
    }
}

fn handle_inbound(mut stream: TcpStream, shared: Arc<Shared>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut hello = [0u8; 8];
    stream.read_exact(&mut hello)?;
    if u32::from_le_bytes(hello[..4].try_into().unwrap()) != FRAME_MAGIC {
        return Ok(()); // stray connection; drop it
    }
    stream.set_read_timeout(None)?;
    if let Ok(clone) = stream.try_clone() {
        shared.inbound.lock().unwrap().push(clone);
    }
    loop {
        match read_frame(&mut stream) {
            Ok(msg) => shared.mailbox.push(msg),
            Err(_) => return Ok(()), // peer closed or shut down
        }
    }
}

impl Transport for TcpEndpoint {
    fn rank(&self) -> u32 {
        self.shared.rank
    }

    fn n_ranks(&self) -> u32 {
        self.shared.peers.len() as u32
    }

    fn send(&self, dst: u32, msg: WireMessage) -> Result<(), TransportError> {
        let n = self.n_ranks();
        if dst >= n {
            return Err(TransportError::InvalidDestination { dst, n_ranks: n });
        }
        if dst == self.shared.rank {
            return Err(TransportError::SelfSend { rank: dst });
        }
        if self.shared.shutdown.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        let frame = encode_frame(&msg)?;
        let mut outbound = self.shared.outbound.lock().unwrap();
        let stream = match outbound.entry(dst) {
            std::collections::hash_map::Entry::Occupied(entry) => entry.into_mut(),
            std::collections::hash_map::Entry::Vacant(entry) => entry.insert(self.connect(dst)?),
        };
        stream.write_all(&frame)?;
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
        self.shared
            .mailbox
            .take(key, Some(self.shared.options.recv_timeout))
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
        self.shared.mailbox.try_take(key)
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.mailbox.close();
        for (_, stream) in self.shared.outbound.lock().unwrap().drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        for stream in self.shared.inbound.lock().unwrap().drain(..) {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::Dtype;

    /// Reserve n distinct loopback addresses by briefly binding them.
    fn free_addrs(n: usize) -> Vec<SocketAddr> {
        let listeners: Vec<TcpListener> = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
            .collect();
        listeners.iter().map(|l| l.local_addr().unwrap()).collect()
    }

    fn msg(step: u32, src: u32, payload: Vec<u8>) -> WireMessage {
        WireMessage {
            collective_id: 1,
            phase: 1,
            step,
            src,
            dtype: Dtype::F32,
            payload,
        }
    }

    #[test]
    fn peer_table_parsing() {
        let table =
            parse_peer_table("# comment\n1 127.0.0.1:9001\n0 127.0.0.1:9000 # trailing comment\n")
                .unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].port(), 9000);
        assert_eq!(table[1].port(), 9001);

        assert!(parse_peer_table("0 127.0.0.1:9000\n0 127.0.0.1:9001\n").is_err());
        assert!(parse_peer_table("5 127.0.0.1:9000\n").is_err());
        assert!(parse_peer_table("").is_err());
    }

    #[test]
    fn bidirectional_send_recv() {
        let peers = free_addrs(2);
        let a = TcpEndpoint::bind(0, peers.clone(), TcpOptions::default()).unwrap();
        let b = TcpEndpoint::bind(1, peers, TcpOptions::default()).unwrap();

        a.send(1, msg(0, 0, vec![1, 2, 3, 4])).unwrap();
        b.send(0, msg(0, 1, vec![5, 6, 7, 8])).unwrap();
        assert_eq!(b.recv(0, 1, 1, 0).unwrap().payload, vec![1, 2, 3, 4]);
        assert_eq!(a.recv(1, 1, 1, 0).unwrap().payload, vec![5, 6, 7, 8]);
    }

    #[test]
    fn fifo_and_exact_key_matching() {
        let peers = free_addrs(2);
        let a = TcpEndpoint::bind(0, peers.clone(), TcpOptions::default()).unwrap();
        let b = TcpEndpoint::bind(1, peers, TcpOptions::default()).unwrap();

        a.send(1, msg(1, 0, vec![9, 9, 9, 9])).unwrap();
        a.send(1, msg(0, 0, vec![1, 1, 1, 1])).unwrap();
        assert_eq!(b.recv(0, 1, 1, 0).unwrap().payload, vec![1, 1, 1, 1]);
        assert_eq!(b.recv(0, 1, 1, 1).unwrap().payload, vec![9, 9, 9, 9]);
    }

    #[test]
    fn recv_times_out() {
        let peers = free_addrs(2);
        let options = TcpOptions {
            recv_timeout: Duration::from_millis(100),
            ..Default::default()
        };
        let a = TcpEndpoint::bind(0, peers, options).unwrap();
        let start = Instant::now();
        let err = a.recv(1, 1, 1, 0).unwrap_err();
        assert!(matches!(err, TransportError::Timeout(..)), "got {err:?}");
        assert!(start.elapsed() >= Duration::from_millis(100));
    }
}
