//! Per-user FIFO admission.
//!
//! `enqueue` hands out numbered tickets synchronously, so arrival order is
//! fixed at the call site. A ticket becomes ready when every earlier ticket
//! of the same user has been released; releasing happens when the ticket is
//! dropped, after the response has been delivered. Different users never
//! wait on each other.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use tokio::sync::watch;

use crate::error::{Error, Result};

struct Lane {
    next: u64,
    serving: watch::Sender<u64>,
    /// Dropped before their turn; skipped when the turn reaches them.
    abandoned: BTreeSet<u64>,
}

pub struct UserQueues {
    lanes: Mutex<HashMap<String, Lane>>,
    bound: usize,
}

impl UserQueues {
    /// `bound` is the most requests one user may have queued or in flight.
    pub fn new(bound: usize) -> Arc<Self> {
        Arc::new(UserQueues {
            lanes: Mutex::new(HashMap::new()),
            bound: bound.max(1),
        })
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn enqueue(self: &Arc<Self>, user_id: &str) -> Result<Ticket> {
        let mut lanes = self.lanes.lock().unwrap();
        let lane = lanes.entry(user_id.to_string()).or_insert_with(|| Lane {
            next: 0,
            serving: watch::channel(0).0,
            abandoned: BTreeSet::new(),
        });
        let pending = (lane.next - *lane.serving.borrow()) as usize - lane.abandoned.len();
        if pending >= self.bound {
            return Err(Error::QueueFull(user_id.to_string()));
        }
        let number = lane.next;
        lane.next += 1;
        Ok(Ticket {
            queues: self.clone(),
            user_id: user_id.to_string(),
            number,
            turn: lane.serving.subscribe(),
        })
    }

    /// Requests of `user_id` queued or in flight.
    pub fn depth(&self, user_id: &str) -> usize {
        let lanes = self.lanes.lock().unwrap();
        lanes
            .get(user_id)
            .map(|l| (l.next - *l.serving.borrow()) as usize - l.abandoned.len())
            .unwrap_or(0)
    }

    fn release(&self, user_id: &str, number: u64) {
        let mut lanes = self.lanes.lock().unwrap();
        let Some(lane) = lanes.get_mut(user_id) else {
            return;
        };
        if *lane.serving.borrow() != number {
            lane.abandoned.insert(number);
            return;
        }
        let mut next = number + 1;
        while lane.abandoned.remove(&next) {
            next += 1;
        }
        lane.serving.send_replace(next);
        if next == lane.next {
            lanes.remove(user_id);
        }
    }
}

/// A place in one user's queue. Dropping it releases the place.
pub struct Ticket {
    queues: Arc<UserQueues>,
    user_id: String,
    number: u64,
    turn: watch::Receiver<u64>,
}

impl Ticket {
    pub fn number(&self) -> u64 {
        self.number
    }

    /// Resolves once every earlier request of this user has been released.
    pub async fn ready(&mut self) {
        let number = self.number;
        // the sender lives as long as any ticket of the lane
        let _ = self.turn.wait_for(|serving| *serving >= number).await;
    }
}

impl Drop for Ticket {
    fn drop(&mut self) {
        self.queues.release(&self.user_id, self.number);
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    #[tokio::test]
    async fn tickets_are_served_in_order() {
        let q = UserQueues::new(8);
        let mut a = q.enqueue("u").unwrap();
        let mut b = q.enqueue("u").unwrap();
        a.ready().await;
        assert!(tokio::time::timeout(Duration::from_millis(20), b.ready()).await.is_err());
        drop(a);
        b.ready().await;
        assert_eq!(q.depth("u"), 1);
        drop(b);
        assert_eq!(q.depth("u"), 0);
    }

    #[tokio::test]
    async fn abandoned_ticket_is_skipped() {
        let q = UserQueues::new(8);
        let a = q.enqueue("u").unwrap();
        let b = q.enqueue("u").unwrap();
        let mut c = q.enqueue("u").unwrap();
        drop(b);
        drop(a);
        tokio::time::timeout(Duration::from_millis(100), c.ready()).await.unwrap();
    }

    #[tokio::test]
    async fn users_are_independent_and_bounded() {
        let q = UserQueues::new(2);
        let _a1 = q.enqueue("a").unwrap();
        let _a2 = q.enqueue("a").unwrap();
        assert!(matches!(q.enqueue("a"), Err(Error::QueueFull(_))));
        let mut b = q.enqueue("b").unwrap();
        tokio::time::timeout(Duration::from_millis(100), b.ready()).await.unwrap();
    }
}
