//! Collectives over real TCP sockets (all ranks in one process, loopback).

use std::net::{SocketAddr, TcpListener};

use torusred::collectives::{self, Algorithm};
use torusred::element::Dtype;
use torusred::topology::GridTopology;
use torusred::transport::tcp::{TcpEndpoint, TcpOptions};
use torusred::transport::Transport;

fn free_addrs(n: usize) -> Vec<SocketAddr> {
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    listeners.iter().map(|l| l.local_addr().unwrap()).collect()
}

fn run_tcp_collective(algorithm: Algorithm, topo: GridTopology, length: usize) -> Vec<Vec<f32>> {
    let n = topo.n_ranks();
    let peers = free_addrs(n as usize);
    let endpoints: Vec<TcpEndpoint> = (0..n)
        .map(|rank| TcpEndpoint::bind(rank, peers.clone(), TcpOptions::default()).unwrap())
        .collect();
    let mut out: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (ep, slot) in endpoints.into_iter().zip(out.iter_mut()) {
            scope.spawn(move || {
                let rank = ep.rank();
                let mut buf = vec![rank as f32; length];
                let actions = algorithm.schedule(&topo, rank, length);
                collectives::execute_blocking(&ep, &actions, &mut buf, Dtype::F32, 1).unwrap();
                *slot = Some(buf);
            });
        }
    });
    out.into_iter().map(Option::unwrap).collect()
}

#[test]
fn torus_all_reduce_over_tcp() {
    let topo = GridTopology::new(4, 2, 2).unwrap();
    let results = run_tcp_collective(Algorithm::Torus, topo, 16);
    for buf in results {
        assert_eq!(buf, vec![6.0; 16]);
    }
}

#[test]
fn ring_all_reduce_over_tcp() {
    let topo = GridTopology::new(4, 4, 1).unwrap();
    let results = run_tcp_collective(Algorithm::Ring, topo, 7);
    for buf in results {
        assert_eq!(buf, vec![6.0; 7]);
    }
}

#[test]
fn hierarchical_all_reduce_over_tcp() {
    let topo = GridTopology::new(6, 3, 2).unwrap();
    let results = run_tcp_collective(Algorithm::Hierarchical, topo, 9);
    for buf in results {
        assert_eq!(buf, vec![15.0; 9]);
    }
}
