//! Ring, hierarchical, and 2D-torus all-reduce as deterministic per-rank
//! schedules over a transport, with a mixed-precision reduction policy.
//!
//! Collectives compute the elementwise SUM; averaging is the caller's
//! division afterwards. Payloads travel in the policy's wire dtype and
//! accumulation happens in the accumulation dtype, with round-to-nearest-even
//! conversion at the wire boundary. Reduction order is fixed per algorithm,
//! so repeated runs over the in-process fabric are bit-identical.

pub mod executor;
pub mod schedule;

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::{Dtype, DtypeError, Element, TensorBuffer};
use crate::topology::{partition_chunks, ChunkRange, GridTopology};
use crate::transport::inproc::{FabricOptions, InprocFabric};
use crate::transport::{Transport, TransportError, TransportStats};

pub use executor::{execute_blocking, execute_rounds};
pub use schedule::{phases, Action, RecvOp};

#[derive(Debug, Error)]
pub enum CollectiveError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Decode(#[from] DtypeError),
    #[error("buffer length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("wire dtype mismatch: expected {expected}, got {got}")]
    DtypeMismatch { expected: Dtype, got: Dtype },
    #[error("accumulation dtype {accum} is narrower than wire dtype {wire}")]
    InvalidPolicy { wire: Dtype, accum: Dtype },
    #[error("rank {rank} is not a member of the ring")]
    RankNotInRing { rank: u32 },
    #[error("schedule stalled: a required message can never arrive")]
    Stalled,
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
}

/// The collective algorithms implemented here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ring,
    Hierarchical,
    Torus,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ring, Algorithm::Hierarchical, Algorithm::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ring => "ring",
            Algorithm::Hierarchical => "hierarchical",
            Algorithm::Torus => "torus",
        }
    }

    /// Per-rank schedule for this algorithm.
    pub fn schedule(self, topo: &GridTopology, rank: u32, total_len: usize) -> Vec<Action> {
        match self {
            Algorithm::Ring => schedule::ring_schedule(topo.n_ranks(), rank, total_len),
            Algorithm::Hierarchical => schedule::hierarchical_schedule(topo, rank, total_len),
            Algorithm::Torus => schedule::torus_schedule(topo, rank, total_len),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(Algorithm::Ring),
            "hier" | "hierarchical" => Ok(Algorithm::Hierarchical),
            "torus" => Ok(Algorithm::Torus),
            other => Err(format!(
                "unknown algorithm {other:?} (expected ring, hier, or torus)"
            )),
        }
    }
}

/// Wire and accumulation dtypes for one collective invocation. The
/// accumulator is never narrower than the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionPolicy {
    wire: Dtype,
    accum: Dtype,
}

impl ReductionPolicy {
    pub fn new(wire: Dtype, accum: Dtype) -> Result<Self, CollectiveError> {
        if accum.precision_rank() < wire.precision_rank() {
            return Err(CollectiveError::InvalidPolicy { wire, accum });
        }
        Ok(ReductionPolicy { wire, accum })
    }

    /// Same dtype on the wire and in the accumulator.
    pub fn uniform(dtype: Dtype) -> Self {
        ReductionPolicy {
            wire: dtype,
            accum: dtype,
        }
    }

    pub fn f32() -> Self {
        Self::uniform(Dtype::F32)
    }

    pub fn f64() -> Self {
        Self::uniform(Dtype::F64)
    }

    /// Half-precision payloads, single-precision accumulation.
    pub fn mixed_f16_f32() -> Self {
        ReductionPolicy {
            wire: Dtype::F16,
            accum: Dtype::F32,
        }
    }

    pub fn wire(&self) -> Dtype {
        self.wire
    }

    pub fn accum(&self) -> Dtype {
        self.accum
    }
}

fn ring_position(ring: &[u32], rank: u32) -> Result<usize, CollectiveError> {
    ring.iter()
        .position(|&r| r == rank)
        .ok_or(CollectiveError::RankNotInRing { rank })
}

/// Ring reduce-scatter over an explicit rank ring. Returns the chunk this rank
/// owns afterwards (ring position p owns chunk p of the balanced partition);
/// the rest of the buffer holds partial sums and is not meaningful output.
pub fn ring_reduce_scatter<E: Element, T: Transport>(
    ep: &T,
    ring: &[u32],
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<ChunkRange, CollectiveError> {
    let pos = ring_position(ring, ep.rank())?;
    let chunks = partition_chunks(buf.len(), ring.len());
    let mut actions = Vec::new();
    schedule::ring_reduce_scatter_actions(
        &mut actions,
        ring,
        pos,
        &chunks,
        phases::RING_REDUCE_SCATTER,
    );
    execute_blocking(ep, &actions, buf, wire, collective_id)?;
    Ok(chunks[pos])
}

/// Ring all-gather over an explicit rank ring. Each ring member's owned chunk
/// must hold final values; afterwards every member's buffer holds all chunks.
pub fn ring_all_gather<E: Element, T: Transport>(
    ep: &T,
    ring: &[u32],
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    let pos = ring_position(ring, ep.rank())?;
    let chunks = partition_chunks(buf.len(), ring.len());
    let mut actions = Vec::new();
    schedule::ring_all_gather_actions(&mut actions, ring, pos, &chunks, phases::RING_ALL_GATHER);
    execute_blocking(ep, &actions, buf, wire, collective_id)
}

/// Ring all-reduce over an explicit rank ring: reduce-scatter then all-gather,
/// exactly `2(R-1)` sequential send steps per rank.
pub fn ring_all_reduce<E: Element, T: Transport>(
    ep: &T,
    ring: &[u32],
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    let pos = ring_position(ring, ep.rank())?;
    let chunks = partition_chunks(buf.len(), ring.len());
    let mut actions = Vec::new();
    schedule::ring_reduce_scatter_actions(
        &mut actions,
        ring,
        pos,
        &chunks,
        phases::RING_REDUCE_SCATTER,
    );
    schedule::ring_all_gather_actions(&mut actions, ring, pos, &chunks, phases::RING_ALL_GATHER);
    execute_blocking(ep, &actions, buf, wire, collective_id)
}

/// 2D-torus all-reduce for this rank within the grid.
pub fn torus_all_reduce<E: Element, T: Transport>(
    ep: &T,
    topo: &GridTopology,
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    topo.coords_of(ep.rank())?;
    let actions = schedule::torus_schedule(topo, ep.rank(), buf.len());
    execute_blocking(ep, &actions, buf, wire, collective_id)
}

/// Hierarchical (group-leader) all-reduce for this rank within the grid.
pub fn hierarchical_all_reduce<E: Element, T: Transport>(
    ep: &T,
    topo: &GridTopology,
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    topo.coords_of(ep.rank())?;
    let actions = schedule::hierarchical_schedule(topo, ep.rank(), buf.len());
    execute_blocking(ep, &actions, buf, wire, collective_id)
}

/// One elementwise reduce step: `acc[i] += incoming[i]`, with the addition
/// performed in the policy's accumulation dtype and stored back in the
/// buffer's own dtype. Incoming bytes are decoded as the wire dtype.
pub fn elementwise_reduce(
    acc: &mut TensorBuffer,
    incoming: &[u8],
    policy: ReductionPolicy,
) -> Result<(), CollectiveError> {
    let values: Vec<f64> = policy.wire().decode_slice(incoming)?;
    if values.len() != acc.len() {
        return Err(CollectiveError::LengthMismatch {
            expected: acc.len(),
            got: values.len(),
        });
    }
    fn reduce_in<A: Element>(acc: &mut TensorBuffer, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            let sum = A::from_f64_lossy(acc.get_f64(i)) + A::from_f64_lossy(v);
            acc.set_from_f64(i, sum.into_f64());
        }
    }
    match policy.accum() {
        Dtype::F16 => reduce_in::<half::f16>(acc, &values),
        Dtype::F32 => reduce_in::<f32>(acc, &values),
        Dtype::F64 => reduce_in::<f64>(acc, &values),
    }
    Ok(())
}

/// Policy-dispatched all-reduce over a tagged buffer. The input is converted
/// into the accumulation dtype, the collective runs with the policy's wire
/// dtype, and the result is returned in the accumulation dtype.
pub fn all_reduce<T: Transport>(
    algorithm: Algorithm,
    ep: &T,
    topo: &GridTopology,
    buf: &TensorBuffer,
    policy: ReductionPolicy,
    collective_id: u32,
) -> Result<TensorBuffer, CollectiveError> {
    fn run<A: Element, T: Transport>(
        algorithm: Algorithm,
        ep: &T,
        topo: &GridTopology,
        buf: &TensorBuffer,
        wire: Dtype,
        collective_id: u32,
    ) -> Result<TensorBuffer, CollectiveError> {
        let mut data: Vec<A> = buf
            .to_f64_vec()
            .into_iter()
            .map(A::from_f64_lossy)
            .collect();
        let actions = algorithm.schedule(topo, ep.rank(), data.len());
        execute_blocking(ep, &actions, &mut data, wire, collective_id)?;
        Ok(TensorBuffer::from_f64_slice(
            A::DTYPE,
            &data.into_iter().map(Element::into_f64).collect::<Vec<_>>(),
        ))
    }
    topo.coords_of(ep.rank())?;
    match policy.accum() {
        Dtype::F16 => run::<half::f16, T>(algorithm, ep, topo, buf, policy.wire(), collective_id),
        Dtype::F32 => run::<f32, T>(algorithm, ep, topo, buf, policy.wire(), collective_id),
        Dtype::F64 => run::<f64, T>(algorithm, ep, topo, buf, policy.wire(), collective_id),
    }
}

/// Run one collective across all ranks inside the calling thread over a fresh
/// in-process fabric, using the round-based scheduler. Returns the fabric's
/// send statistics.
pub fn run_single_threaded<E: Element>(
    algorithm: Algorithm,
    topo: &GridTopology,
    bufs: &mut [Vec<E>],
    wire: Dtype,
    options: FabricOptions,
) -> Result<TransportStats, CollectiveError> {
    let n = topo.n_ranks();
    assert_eq!(bufs.len(), n as usize, "one buffer per rank");
    let total_len = bufs.first().map(|b| b.len()).unwrap_or(0);
    for b in bufs.iter() {
        if b.len() != total_len {
            return Err(CollectiveError::LengthMismatch {
                expected: total_len,
                got: b.len(),
            });
        }
    }
    let (fabric, endpoints) = InprocFabric::with_options(n, options);
    let schedules: Vec<Vec<Action>> = (0..n)
        .map(|rank| algorithm.schedule(topo, rank, total_len))
        .collect();
    execute_rounds(&endpoints, &schedules, bufs, wire, 0)?;
    Ok(fabric.stats())
}

/// Run one collective with one thread per rank over a fresh in-process
/// fabric. Produces buffers bit-identical to [`run_single_threaded`].
pub fn run_threaded<E: Element>(
    algorithm: Algorithm,
    topo: &GridTopology,
    bufs: &mut [Vec<E>],
    wire: Dtype,
    options: FabricOptions,
) -> Result<TransportStats, CollectiveError> {
    let n = topo.n_ranks();
    assert_eq!(bufs.len(), n as usize, "one buffer per rank");
    let total_len = bufs.first().map(|b| b.len()).unwrap_or(0);
    for b in bufs.iter() {
        if b.len() != total_len {
            return Err(CollectiveError::LengthMismatch {
                expected: total_len,
                got: b.len(),
            });
        }
    }
    let (fabric, endpoints) = InprocFabric::with_options(n, options);
    let mut result = Ok(());
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n as usize);
        for (ep, buf) in endpoints.into_iter().zip(bufs.iter_mut()) {
            let topo = *topo;
            handles.push(scope.spawn(move || {
                let actions = algorithm.schedule(&topo, ep.rank(), buf.len());
                execute_blocking(&ep, &actions, buf, wire, 0)
            }));
        }
        for handle in handles {
            let joined = handle.join().expect("collective worker panicked");
            if joined.is_err() && result.is_ok() {
                result = joined;
            }
        }
    });
    result?;
    Ok(fabric.stats())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_validation() {
        assert!(ReductionPolicy::new(Dtype::F16, Dtype::F32).is_ok());
        assert!(ReductionPolicy::new(Dtype::F32, Dtype::F32).is_ok());
        assert!(matches!(
            ReductionPolicy::new(Dtype::F32, Dtype::F16),
            Err(CollectiveError::InvalidPolicy { .. })
        ));
        assert!(matches!(
            ReductionPolicy::new(Dtype::F64, Dtype::F32),
            Err(CollectiveError::InvalidPolicy { .. })
        ));
    }

    #[test]
    fn algorithm_parsing() {
        assert_eq!("ring".parse::<Algorithm>().unwrap(), Algorithm::Ring);
        assert_eq!(
            "hier".parse::<Algorithm>().unwrap(),
            Algorithm::Hierarchical
        );
        assert_eq!(
            "hierarchical".parse::<Algorithm>().unwrap(),
            Algorithm::Hierarchical
        );
        assert_eq!("torus".parse::<Algorithm>().unwrap(), Algorithm::Torus);
        assert!("mesh".parse::<Algorithm>().is_err());
    }

    #[test]
    fn elementwise_reduce_basic() {
        let mut acc = TensorBuffer::from_f64_slice(Dtype::F32, &[1.0, 2.0]);
        let incoming = Dtype::F32.encode_slice(&[3.0f32, 4.0]);
        elementwise_reduce(&mut acc, &incoming, ReductionPolicy::f32()).unwrap();
        assert_eq!(acc.to_f64_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn elementwise_reduce_identity_on_zero_acc() {
        let mut acc = TensorBuffer::zeros(Dtype::F64, 3);
        let incoming = Dtype::F64.encode_slice(&[0.5f64, -1.5, 2.0]);
        elementwise_reduce(&mut acc, &incoming, ReductionPolicy::f64()).unwrap();
        assert_eq!(acc.to_f64_vec(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn wide_accumulation_keeps_small_addends() {
        // f16 spacing at 1024 is 1.0, so a pure-f16 accumulation loses 0.25.
        let incoming = Dtype::F16.encode_slice(&[0.25f32]);

        let mut acc = TensorBuffer::from_f64_slice(Dtype::F32, &[1024.0]);
        elementwise_reduce(&mut acc, &incoming, ReductionPolicy::mixed_f16_f32()).unwrap();
        assert_eq!(acc.to_f64_vec(), vec![1024.25]);

        let mut acc = TensorBuffer::from_f64_slice(Dtype::F32, &[1024.0]);
        elementwise_reduce(&mut acc, &incoming, ReductionPolicy::uniform(Dtype::F16)).unwrap();
        assert_eq!(acc.to_f64_vec(), vec![1024.0]);
    }

    #[test]
    fn elementwise_reduce_length_mismatch() {
        let mut acc = TensorBuffer::zeros(Dtype::F32, 2);
        let incoming = Dtype::F32.encode_slice(&[1.0f32]);
        assert!(matches!(
            elementwise_reduce(&mut acc, &incoming, ReductionPolicy::f32()),
            Err(CollectiveError::LengthMismatch {
                expected: 2,
                got: 1
            })
        ));
    }
}
