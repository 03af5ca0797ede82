//! Drives per-rank schedules over a transport.
//!
//! Two drivers share the same per-action logic, so they produce bit-identical
//! buffers:
//!
//! * [`execute_blocking`] runs one rank's schedule in order with blocking
//!   receives — one call per worker thread or process.
//! * [`execute_rounds`] runs all ranks inside a single thread, sweeping rank
//!   by rank and parking a rank at its next unsatisfied receive. Buffered
//!   sends make the ring schedules deadlock-free under this scheduler.

use super::schedule::{Action, RecvOp};
use super::CollectiveError;
use crate::element::{Dtype, Element};
use crate::transport::{Transport, WireMessage};

#[allow(clippy::too_many_arguments)]
fn do_send<E: Element, T: Transport>(
    ep: &T,
    buf: &[E],
    wire: Dtype,
    collective_id: u32,
    dst: u32,
    phase: u8,
    step: u32,
    range: crate::topology::ChunkRange,
) -> Result<(), CollectiveError> {
    let payload = wire.encode_slice(&buf[range.as_range()]);
    let msg = WireMessage {
        collective_id,
        phase,
        step,
        src: ep.rank(),
        dtype: wire,
        payload,
    };
    ep.send(dst, msg)?;
    Ok(())
}

fn apply_incoming<E: Element>(
    buf: &mut [E],
    wire: Dtype,
    msg: &WireMessage,
    range: crate::topology::ChunkRange,
    op: RecvOp,
) -> Result<(), CollectiveError> {
    if msg.dtype != wire {
        return Err(CollectiveError::DtypeMismatch {
            expected: wire,
            got: msg.dtype,
        });
    }
    let values: Vec<E> = wire.decode_slice(&msg.payload)?;
    if values.len() != range.length {
        return Err(CollectiveError::LengthMismatch {
            expected: range.length,
            got: values.len(),
        });
    }
    let target = &mut buf[range.as_range()];
    match op {
        RecvOp::Reduce => {
            for (acc, v) in target.iter_mut().zip(values) {
                *acc = *acc + v;
            }
        }
        RecvOp::Replace => {
            target.copy_from_slice(&values);
        }
    }
    Ok(())
}

/// Execute one rank's schedule with blocking receives.
pub fn execute_blocking<E: Element, T: Transport>(
    ep: &T,
    actions: &[Action],
    buf: &mut [E],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    for action in actions {
        match *action {
            Action::Send {
                dst,
                phase,
                step,
                range,
            } => {
                do_send(ep, buf, wire, collective_id, dst, phase, step, range)?;
            }
            Action::Recv {
                src,
                phase,
                step,
                range,
                op,
            } => {
                let msg = ep.recv(src, collective_id, phase, step)?;
                apply_incoming(buf, wire, &msg, range, op)?;
            }
        }
    }
    Ok(())
}

/// Execute every rank's schedule in one thread, round-robin. Deterministic:
/// ranks are swept in index order and each rank's operations run in schedule
/// order, so results are bit-identical to the threaded driver.
pub fn execute_rounds<E: Element, T: Transport>(
    endpoints: &[T],
    schedules: &[Vec<Action>],
    bufs: &mut [Vec<E>],
    wire: Dtype,
    collective_id: u32,
) -> Result<(), CollectiveError> {
    assert_eq!(endpoints.len(), schedules.len());
    assert_eq!(endpoints.len(), bufs.len());
    let n = endpoints.len();
    let mut cursors = vec![0usize; n];
    loop {
        let mut progressed = false;
        let mut all_done = true;
        for r in 0..n {
            let actions = &schedules[r];
            while cursors[r] < actions.len() {
                match actions[cursors[r]] {
                    Action::Send {
                        dst,
                        phase,
                        step,
                        range,
                    } => {
                        do_send(
                            &endpoints[r],
                            &bufs[r],
                            wire,
                            collective_id,
                            dst,
                            phase,
                            step,
                            range,
                        )?;
                    }
                    Action::Recv {
                        src,
                        phase,
                        step,
                        range,
                        op,
                    } => {
                        match endpoints[r].try_recv(src, collective_id, phase, step)? {
                            Some(msg) => apply_incoming(&mut bufs[r], wire, &msg, range, op)?,
                            None => break, // parked until the message arrives
                        }
                    }
                }
                cursors[r] += 1;
                progressed = true;
            }
            if cursors[r] < actions.len() {
                all_done = false;
            }
        }
        if all_done {
            return Ok(());
        }
        if !progressed {
            return Err(CollectiveError::Stalled);
        }
    }
}
