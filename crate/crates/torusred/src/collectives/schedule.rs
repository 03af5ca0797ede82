//! Per-rank message schedules for the collective algorithms.
//!
//! A schedule is the full ordered list of sends and receives one rank performs
//! for one collective invocation. Schedules are pure data: building them does
//! no communication, which keeps the algorithms testable structurally and lets
//! one executor drive any transport.
//!
//! Step indices encode dependency depth within a phase. In ring phases every
//! rank sends one message per step; in the chain phases of the hierarchical
//! algorithm each rank sends at most once and the step index is its position
//! along the chain. Either way, `max step + 1` is the phase's sequential
//! message-round count.

use crate::topology::{partition_chunks, partition_range, ChunkRange, GridTopology};

/// Wire phase codes. Ring and torus share the horizontal codes; the
/// hierarchical algorithm uses its own set.
pub mod phases {
    pub const RING_REDUCE_SCATTER: u8 = 1;
    pub const RING_ALL_GATHER: u8 = 2;

    pub const TORUS_HORIZONTAL_REDUCE_SCATTER: u8 = 1;
    pub const TORUS_VERTICAL_REDUCE_SCATTER: u8 = 2;
    pub const TORUS_VERTICAL_ALL_GATHER: u8 = 3;
    pub const TORUS_HORIZONTAL_ALL_GATHER: u8 = 4;

    pub const HIER_INTRA_REDUCE: u8 = 1;
    pub const HIER_LEADER_REDUCE_SCATTER: u8 = 2;
    pub const HIER_LEADER_ALL_GATHER: u8 = 3;
    pub const HIER_INTRA_BROADCAST: u8 = 4;
}

/// How an incoming payload is applied to the local buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecvOp {
    /// Elementwise add into the range (reduce steps).
    Reduce,
    /// Overwrite the range (gather/broadcast steps; value-preserving).
    Replace,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send {
        dst: u32,
        phase: u8,
        step: u32,
        range: ChunkRange,
    },
    Recv {
        src: u32,
        phase: u8,
        step: u32,
        range: ChunkRange,
        op: RecvOp,
    },
}

/// Reduce-scatter over `ring`: after `R-1` steps the rank at ring position
/// `pos` holds the ring-wide sum of `chunks[pos]`. At step `s` position `p`
/// sends chunk `(p - s - 1) mod R` to `next` and reduces chunk
/// `(p - s - 2) mod R` received from `prev`.
pub fn ring_reduce_scatter_actions(
    actions: &mut Vec<Action>,
    ring: &[u32],
    pos: usize,
    chunks: &[ChunkRange],
    phase: u8,
) {
    let r = ring.len();
    debug_assert_eq!(chunks.len(), r);
    if r <= 1 {
        return;
    }
    let next = ring[(pos + 1) % r];
    let prev = ring[(pos + r - 1) % r];
    for s in 0..r - 1 {
        let send_idx = (pos + r - s - 1) % r;
        let recv_idx = (pos + 2 * r - s - 2) % r;
        actions.push(Action::Send {
            dst: next,
            phase,
            step: s as u32,
            range: chunks[send_idx],
        });
        actions.push(Action::Recv {
            src: prev,
            phase,
            step: s as u32,
            range: chunks[recv_idx],
            op: RecvOp::Reduce,
        });
    }
}

/// All-gather over `ring`: each position starts owning the final value of its
/// own chunk; after `R-1` replace steps every rank holds all chunks. At step
/// `s` position `p` sends chunk `(p - s) mod R` and stores chunk
/// `(p - s - 1) mod R`.
pub fn ring_all_gather_actions(
    actions: &mut Vec<Action>,
    ring: &[u32],
    pos: usize,
    chunks: &[ChunkRange],
    phase: u8,
) {
    let r = ring.len();
    debug_assert_eq!(chunks.len(), r);
    if r <= 1 {
        return;
    }
    let next = ring[(pos + 1) % r];
    let prev = ring[(pos + r - 1) % r];
    for s in 0..r - 1 {
        let send_idx = (pos + r - s) % r;
        let recv_idx = (pos + r - s - 1) % r;
        actions.push(Action::Send {
            dst: next,
            phase,
            step: s as u32,
            range: chunks[send_idx],
        });
        actions.push(Action::Recv {
            src: prev,
            phase,
            step: s as u32,
            range: chunks[recv_idx],
            op: RecvOp::Replace,
        });
    }
}

/// Pass-and-add chain towards `chain[0]`: the tail sends its buffer at step 0
/// and each inner member forwards the running sum. After `L-1` sequential
/// steps the head holds the chain-wide sum of `range`.
pub fn chain_reduce_actions(
    actions: &mut Vec<Action>,
    chain: &[u32],
    pos: usize,
    range: ChunkRange,
    phase: u8,
) {
    let len = chain.len();
    if len <= 1 {
        return;
    }
    if pos == len - 1 {
        actions.push(Action::Send {
            dst: chain[pos - 1],
            phase,
            step: 0,
            range,
        });
    } else if pos > 0 {
        actions.push(Action::Recv {
            src: chain[pos + 1],
            phase,
            step: (len - 2 - pos) as u32,
            range,
            op: RecvOp::Reduce,
        });
        actions.push(Action::Send {
            dst: chain[pos - 1],
            phase,
            step: (len - 1 - pos) as u32,
            range,
        });
    } else {
        actions.push(Action::Recv {
            src: chain[1],
            phase,
            step: (len - 2) as u32,
            range,
            op: RecvOp::Reduce,
        });
    }
}

/// Forwarding chain from `chain[0]`: the head sends `range` at step 0 and each
/// member passes it along, overwriting its copy.
pub fn chain_broadcast_actions(
    actions: &mut Vec<Action>,
    chain: &[u32],
    pos: usize,
    range: ChunkRange,
    phase: u8,
) {
    let len = chain.len();
    if len <= 1 {
        return;
    }
    if pos == 0 {
        actions.push(Action::Send {
            dst: chain[1],
            phase,
            step: 0,
            range,
        });
    } else {
        actions.push(Action::Recv {
            src: chain[pos - 1],
            phase,
            step: (pos - 1) as u32,
            range,
            op: RecvOp::Replace,
        });
        if pos + 1 < len {
            actions.push(Action::Send {
                dst: chain[pos + 1],
                phase,
                step: pos as u32,
                range,
            });
        }
    }
}

/// Ring all-reduce over all ranks: reduce-scatter then all-gather,
/// `2(N-1)` send steps per rank.
pub fn ring_schedule(n_ranks: u32, rank: u32, total_len: usize) -> Vec<Action> {
    let ring: Vec<u32> = (0..n_ranks).collect();
    let chunks = partition_chunks(total_len, n_ranks as usize);
    let pos = rank as usize;
    let mut actions = Vec::new();
    ring_reduce_scatter_actions(
        &mut actions,
        &ring,
        pos,
        &chunks,
        phases::RING_REDUCE_SCATTER,
    );
    ring_all_gather_actions(&mut actions, &ring, pos, &chunks, phases::RING_ALL_GATHER);
    actions
}

/// 2D-torus all-reduce: horizontal reduce-scatter over the rank's row, a full
/// ring all-reduce vertically over the owned chunk, then horizontal
/// all-gather. `2(X-1)` horizontal plus `2(Y-1)` vertical send steps per rank,
/// with vertical payloads X times smaller than a row chunk.
pub fn torus_schedule(topo: &GridTopology, rank: u32, total_len: usize) -> Vec<Action> {
    let (row, col) = topo.coords_of(rank).expect("rank validated by caller");
    let row_ring = topo.row_ring(rank).unwrap();
    let col_ring = topo.col_ring(rank).unwrap();
    let row_chunks = partition_chunks(total_len, topo.x() as usize);
    let owned = row_chunks[col as usize];
    let col_chunks = partition_range(owned, topo.y() as usize);

    let mut actions = Vec::new();
    ring_reduce_scatter_actions(
        &mut actions,
        &row_ring,
        col as usize,
        &row_chunks,
        phases::TORUS_HORIZONTAL_REDUCE_SCATTER,
    );
    ring_reduce_scatter_actions(
        &mut actions,
        &col_ring,
        row as usize,
        &col_chunks,
        phases::TORUS_VERTICAL_REDUCE_SCATTER,
    );
    ring_all_gather_actions(
        &mut actions,
        &col_ring,
        row as usize,
        &col_chunks,
        phases::TORUS_VERTICAL_ALL_GATHER,
    );
    ring_all_gather_actions(
        &mut actions,
        &row_ring,
        col as usize,
        &row_chunks,
        phases::TORUS_HORIZONTAL_ALL_GATHER,
    );
    actions
}

/// Hierarchical all-reduce: rows are groups with the column-0 rank as leader.
/// Full-size chain reduce to the leader, ring all-reduce among leaders, then a
/// full-size chain broadcast back out.
pub fn hierarchical_schedule(topo: &GridTopology, rank: u32, total_len: usize) -> Vec<Action> {
    let (row, col) = topo.coords_of(rank).expect("rank validated by caller");
    let row_chain = topo.row_ring(rank).unwrap();
    let full = ChunkRange {
        offset: 0,
        length: total_len,
    };

    let mut actions = Vec::new();
    chain_reduce_actions(
        &mut actions,
        &row_chain,
        col as usize,
        full,
        phases::HIER_INTRA_REDUCE,
    );
    if col == 0 {
        let leaders: Vec<u32> = (0..topo.y()).map(|r| topo.rank_at(r, 0)).collect();
        let chunks = partition_chunks(total_len, topo.y() as usize);
        ring_reduce_scatter_actions(
            &mut actions,
            &leaders,
            row as usize,
            &chunks,
            phases::HIER_LEADER_REDUCE_SCATTER,
        );
        ring_all_gather_actions(
            &mut actions,
            &leaders,
            row as usize,
            &chunks,
            phases::HIER_LEADER_ALL_GATHER,
        );
    }
    chain_broadcast_actions(
        &mut actions,
        &row_chain,
        col as usize,
        full,
        phases::HIER_INTRA_BROADCAST,
    );
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn send_count(actions: &[Action]) -> usize {
        actions
            .iter()
            .filter(|a| matches!(a, Action::Send { .. }))
            .count()
    }

    #[test]
    fn ring_schedule_send_counts() {
        for n in [1u32, 2, 3, 4, 8] {
            for rank in 0..n {
                let actions = ring_schedule(n, rank, 40);
                assert_eq!(send_count(&actions), 2 * (n as usize - 1));
            }
        }
    }

    #[test]
    fn torus_schedule_send_counts() {
        let topo = GridTopology::new(12, 4, 3).unwrap();
        for rank in 0..12 {
            let actions = torus_schedule(&topo, rank, 100);
            let horizontal = actions
                .iter()
                .filter(|a| {
                    matches!(a, Action::Send { phase, .. }
                        if *phase == phases::TORUS_HORIZONTAL_REDUCE_SCATTER
                            || *phase == phases::TORUS_HORIZONTAL_ALL_GATHER)
                })
                .count();
            let vertical = actions
                .iter()
                .filter(|a| {
                    matches!(a, Action::Send { phase, .. }
                        if *phase == phases::TORUS_VERTICAL_REDUCE_SCATTER
                            || *phase == phases::TORUS_VERTICAL_ALL_GATHER)
                })
                .count();
            assert_eq!(horizontal, 2 * 3); // 2(X-1), X = 4
            assert_eq!(vertical, 2 * 2); // 2(Y-1), Y = 3
        }
    }

    #[test]
    fn reduce_scatter_ownership_lands_on_position() {
        // Per-position bookkeeping: the chunk a position never sends in the
        // last step and receives last is its own.
        let ring = [0u32, 1, 2, 3];
        let chunks = partition_chunks(8, 4);
        for pos in 0..4 {
            let mut actions = Vec::new();
            ring_reduce_scatter_actions(&mut actions, &ring, pos, &chunks, 1);
            let last_recv = actions
                .iter()
                .rev()
                .find_map(|a| match a {
                    Action::Recv { range, .. } => Some(*range),
                    _ => None,
                })
                .unwrap();
            assert_eq!(last_recv, chunks[pos]);
        }
    }

    #[test]
    fn chain_steps_are_contiguous() {
        let chain = [0u32, 1, 2, 3, 4];
        let range = ChunkRange {
            offset: 0,
            length: 10,
        };
        let mut all_send_steps = Vec::new();
        for pos in 0..5 {
            let mut actions = Vec::new();
            chain_reduce_actions(&mut actions, &chain, pos, range, 1);
            for a in &actions {
                if let Action::Send { step, .. } = a {
                    all_send_steps.push(*step);
                }
            }
        }
        all_send_steps.sort_unstable();
        assert_eq!(all_send_steps, vec![0, 1, 2, 3]); // L-1 sequential hops
    }

    #[test]
    fn hierarchical_leader_does_leader_ring() {
        let topo = GridTopology::new(6, 3, 2).unwrap();
        // Rank 0 is the leader of row 0.
        let leader = hierarchical_schedule(&topo, 0, 12);
        assert!(leader
            .iter()
            .any(|a| matches!(a, Action::Send { phase, .. } if *phase == phases::HIER_LEADER_REDUCE_SCATTER)));
        // Rank 1 is a row member, never in the leader ring.
        let member = hierarchical_schedule(&topo, 1, 12);
        assert!(!member.iter().any(|a| matches!(
            a,
            Action::Send { phase, .. } | Action::Recv { phase, .. }
                if *phase == phases::HIER_LEADER_REDUCE_SCATTER
                    || *phase == phases::HIER_LEADER_ALL_GATHER
        )));
    }

    #[test]
    fn single_rank_schedules_are_empty() {
        let topo = GridTopology::new(1, 1, 1).unwrap();
        assert!(ring_schedule(1, 0, 10).is_empty());
        assert!(torus_schedule(&topo, 0, 10).is_empty());
        assert!(hierarchical_schedule(&topo, 0, 10).is_empty());
    }
}
