use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};

use super::{Envelope, TransportError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PeerExit {
    /// The peer finalized cleanly; everything it sent has arrived.
    Finalized,
    /// The connection dropped without a finalize notice.
    Lost,
}

#[derive(Default)]
struct State {
    queue: VecDeque<Envelope>,
    gone: HashMap<usize, PeerExit>,
    closed: bool,
}

/// Unbounded queue of arrived envelopes, matched out of order by predicate.
#[derive(Default)]
pub(crate) struct Mailbox {
    state: Mutex<State>,
    arrived: Condvar,
}

impl Mailbox {
    pub(crate) fn push(&self, env: Envelope) {
        let mut st = self.state.lock().unwrap();
        st.queue.push_back(env);
        self.arrived.notify_all();
    }

    pub(crate) fn mark_gone(&self, rank: usize, how: PeerExit) {
        let mut st = self.state.lock().unwrap();
        // a finalize notice followed by EOF stays a clean exit
        st.gone.entry(rank).or_insert(how);
        self.arrived.notify_all();
    }

    pub(crate) fn close(&self) {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        self.arrived.notify_all();
    }

    /// Removes the oldest envelope satisfying `matches`, blocking until one
    /// arrives. Fails once every rank in `sources` has gone away with nothing
    /// left to match.
    pub(crate) fn take<F>(&self, sources: &[usize], matches: F) -> Result<Envelope, TransportError>
    where
        F: Fn(&Envelope) -> bool,
    {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.closed {
                return Err(TransportError::Finalized);
            }
            if let Some(pos) = st.queue.iter().position(&matches) {
                return Ok(st.queue.remove(pos).expect("position is in range"));
            }
            if !sources.is_empty() && sources.iter().all(|r| st.gone.contains_key(r)) {
                let rank = sources[0];
                return Err(TransportError::PeerGone {
                    rank,
                    finalized: st.gone[&rank] == PeerExit::Finalized,
                });
            }
            st = self.arrived.wait(st).unwrap();
        }
    }

    /// Applies `f` to the oldest envelope satisfying `matches` without removing it.
    pub(crate) fn peek<F, T>(&self, matches: F, f: impl FnOnce(&Envelope) -> T) -> Option<T>
    where
        F: Fn(&Envelope) -> bool,
    {
        let st = self.state.lock().unwrap();
        st.queue.iter().find(|e| matches(e)).map(f)
    }

    pub(crate) fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }
}
