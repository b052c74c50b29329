//! In-process communicator for virtual ranks running on threads.
//!
//! Collectives are implemented with a generation barrier over shared
//! slots. A rank whose `Comm` is dropped marks the group aborted, so peers
//! blocked in a collective return an error instead of hanging.

use std::any::Any;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, UsageKind};

/// How ranks interleave their byte commits between collectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Commits run concurrently, in whatever order the OS picks.
    Concurrent,
    /// Commits run one rank at a time in a permutation drawn per call
    /// from this seed.
    Seeded(u64),
}

type Slot = Box<dyn Any + Send + Sync>;

struct State {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Slot>>,
    last: Arc<Vec<Slot>>,
    order_call: u64,
    order_pos: usize,
    aborted: bool,
}

struct Shared {
    size: usize,
    schedule: Schedule,
    state: Mutex<State>,
    cv: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// One rank's handle on a group of virtual ranks.
pub struct Comm {
    rank: usize,
    size: usize,
    shared: Option<Arc<Shared>>,
    ordered_calls: AtomicU64,
}

fn aborted() -> Error {
    Error::usage(UsageKind::Aborted, "a peer rank left the collective")
}

impl Comm {
    /// A single-rank communicator.
    pub fn solo() -> Comm {
        Comm {
            rank: 0,
            size: 1,
            shared: None,
            ordered_calls: AtomicU64::new(0),
        }
    }

    /// Handles for `size` ranks; move each into its own thread.
    pub fn world(size: usize, schedule: Schedule) -> Vec<Comm> {
        assert!(size > 0, "communicator needs at least one rank");
        let shared = Arc::new(Shared {
            size,
            schedule,
            state: Mutex::new(State {
                generation: 0,
                arrived: 0,
                slots: (0..size).map(|_| None).collect(),
                last: Arc::new(Vec::new()),
                order_call: 0,
                order_pos: 0,
                aborted: false,
            }),
            cv: Condvar::new(),
        });
        (0..size)
            .map(|rank| Comm {
                rank,
                size,
                shared: Some(shared.clone()),
                ordered_calls: AtomicU64::new(0),
            })
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Every rank contributes one value; all receive the values in rank order.
    pub fn allgather<T: Clone + Send + Sync + 'static>(&self, value: T) -> Result<Vec<T>> {
        let Some(shared) = &self.shared else {
            return Ok(vec![value]);
        };
        let mut st = shared.lock();
        if st.aborted {
            return Err(aborted());
        }
        st.slots[self.rank] = Some(Box::new(value));
        st.arrived += 1;
        let gen = st.generation;
        let results = if st.arrived == shared.size {
            let all: Vec<Slot> = st.slots.iter_mut().map(|s| s.take().expect("slot")).collect();
            st.last = Arc::new(all);
            st.arrived = 0;
            st.generation += 1;
            shared.cv.notify_all();
            st.last.clone()
        } else {
            loop {
                st = shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
                if st.generation != gen {
                    break st.last.clone();
                }
                if st.aborted {
                    return Err(aborted());
                }
            }
        };
        drop(st);
        results
            .iter()
            .map(|slot| {
                slot.downcast_ref::<T>()
                    .cloned()
                    .ok_or_else(|| Error::usage(UsageKind::CollectiveMismatch, "ranks called different collectives"))
            })
            .collect()
    }

    pub fn barrier(&self) -> Result<()> {
        self.allgather(()).map(|_| ())
    }

    /// Run a commit step. Under a seeded schedule all ranks must call this
    /// the same number of times; steps then execute one at a time.
    pub fn ordered<R>(&self, f: impl FnOnce() -> R) -> Result<R> {
        let shared = match &self.shared {
            Some(s) if matches!(s.schedule, Schedule::Seeded(_)) => s,
            _ => return Ok(f()),
        };
        let Schedule::Seeded(seed) = shared.schedule else {
            unreachable!()
        };
        let call = self.ordered_calls.fetch_add(1, Ordering::Relaxed);
        let mut perm: Vec<usize> = (0..shared.size).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ call.wrapping_mul(0x9e37_79b9_7f4a_7c15)));

        let mut st = shared.lock();
        while !(st.order_call == call && perm[st.order_pos] == self.rank) {
            if st.aborted {
                return Err(aborted());
            }
            st = shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        drop(st);
        let out = f();
        let mut st = shared.lock();
        st.order_pos += 1;
        if st.order_pos == shared.size {
            st.order_pos = 0;
            st.order_call += 1;
        }
        shared.cv.notify_all();
        Ok(out)
    }
}

impl Drop for Comm {
    fn drop(&mut self) {
        if let Some(shared) = &self.shared {
            shared.lock().aborted = true;
            shared.cv.notify_all();
        }
    }
}

impl std::fmt::Debug for Comm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Comm")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::thread;

    fn run<T: Send + 'static>(p: usize, schedule: Schedule, f: impl Fn(Comm) -> T + Send + Sync + 'static) -> Vec<T> {
        let f = Arc::new(f);
        let handles: Vec<_> = Comm::world(p, schedule)
            .into_iter()
            .map(|c| {
                let f = f.clone();
                thread::spawn(move || f(c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn allgather_in_rank_order() {
        let out = run(5, Schedule::Concurrent, |c| {
            let mut all = Vec::new();
            for round in 0..20 {
                all.push(c.allgather(c.rank() * 100 + round).unwrap());
            }
            all
        });
        for per_rank in out {
            for (round, v) in per_rank.iter().enumerate() {
                assert_eq!(*v, (0..5).map(|r| r * 100 + round).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn solo_is_identity() {
        let c = Comm::solo();
        assert_eq!(c.allgather(7u8).unwrap(), vec![7]);
        assert_eq!(c.ordered(|| 3).unwrap(), 3);
    }

    #[test]
    fn dropped_peer_aborts_waiters() {
        let out = run(3, Schedule::Concurrent, |c| {
            if c.rank() == 1 {
                return None;
            }
            Some(c.allgather(0u8).unwrap_err().code().0)
        });
        assert_eq!(out, vec![Some(309), None, Some(309)]);
    }

    #[test]
    fn seeded_commits_are_serialized() {
        let active = Arc::new(AtomicUsize::new(0));
        let max_seen = Arc::new(AtomicUsize::new(0));
        let (a, m) = (active.clone(), max_seen.clone());
        let orders = run(4, Schedule::Seeded(11), move |c| {
            let mut turns = Vec::new();
            for _ in 0..10 {
                c.ordered(|| {
                    let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                    m.fetch_max(now, Ordering::SeqCst);
                    std::thread::yield_now();
                    a.fetch_sub(1, Ordering::SeqCst);
                })
                .unwrap();
                turns.push(c.allgather(c.rank()).unwrap().len());
            }
            turns
        });
        assert_eq!(max_seen.load(Ordering::SeqCst), 1);
        assert!(orders.iter().all(|t| t.iter().all(|&n| n == 4)));
    }
}
