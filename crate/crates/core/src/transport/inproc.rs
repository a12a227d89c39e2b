use std::sync::Arc;

use super::mailbox::{Mailbox, PeerExit};
use super::{Envelope, Outbound, Result, TransportContext};
use crate::pack::Encoding;

struct InProcOut {
    boxes: Arc<Vec<Arc<Mailbox>>>,
}

impl InProcOut {
    fn depart(&self, me: usize, how: PeerExit) {
        for (r, mb) in self.boxes.iter().enumerate() {
            if r != me {
                mb.mark_gone(me, how);
            }
        }
    }
}

impl Outbound for InProcOut {
    fn deliver(&self, env: Envelope) -> Result<()> {
        self.boxes[env.dest].push(env);
        Ok(())
    }

    fn close(&self, me: usize) {
        self.depart(me, PeerExit::Finalized);
    }

    fn abandon(&self, me: usize) {
        self.depart(me, PeerExit::Lost);
    }
}

/// Creates a world of `nprocs` ranks living in this process, one context per
/// rank, without claiming the process-wide [`init`](super::init).
pub fn in_process_world(nprocs: usize, encoding: Encoding) -> Vec<TransportContext> {
    let boxes: Arc<Vec<Arc<Mailbox>>> = Arc::new((0..nprocs).map(|_| Arc::new(Mailbox::default())).collect());
    (0..nprocs)
        .map(|rank| {
            let out = InProcOut { boxes: boxes.clone() };
            TransportContext::new(rank, nprocs, encoding, boxes[rank].clone(), Box::new(out))
        })
        .collect()
}

/// Runs `f` once per rank on its own thread and collects the results in rank order.
///
/// A rank whose closure returns (or panics) without finalizing is treated
/// as a vanished process by its peers. A panic on any rank is re-raised
/// after all threads have stopped.
pub fn run_in_process<T, F>(nprocs: usize, encoding: Encoding, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(TransportContext) -> T + Sync,
{
    let contexts = in_process_world(nprocs, encoding);
    std::thread::scope(|s| {
        let handles: Vec<_> = contexts
            .into_iter()
            .map(|ctx| {
                let f = &f;
                s.spawn(move || {
                    struct Depart(TransportContext);
                    impl Drop for Depart {
                        fn drop(&mut self) {
                            self.0.abandon();
                        }
                    }
                    let guard = Depart(ctx.clone());
                    let out = f(ctx);
                    drop(guard);
                    out
                })
            })
            .collect();
        let results: Vec<std::thread::Result<T>> = handles.into_iter().map(|h| h.join()).collect();
        results
            .into_iter()
            .map(|r| r.unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}
