//! Live event frames for the control API stream.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameKind {
    Decision,
    ApprovalPending,
    ApprovalResolved,
    PolicyReloaded,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    /// Increases by one per frame within a process.
    pub id: u64,
    pub kind: FrameKind,
    pub payload: Value,
}

pub const REPLAY_FRAMES: usize = 100;
const CHANNEL_CAPACITY: usize = 1024;

/// Broadcast fan-out that also keeps the most recent frames for late
/// subscribers. A subscriber that falls more than the channel capacity
/// behind sees `RecvError::Lagged` and is expected to disconnect.
#[derive(Debug)]
pub struct FrameBus {
    tx: broadcast::Sender<StreamFrame>,
    recent: Mutex<VecDeque<StreamFrame>>,
    next_id: AtomicU64,
}

impl Default for FrameBus {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameBus {
    pub fn new() -> Self {
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        Self {
            tx,
            recent: Mutex::new(VecDeque::with_capacity(REPLAY_FRAMES)),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn publish(&self, kind: FrameKind, payload: Value) -> StreamFrame {
        let mut recent = self.recent.lock();
        let frame = StreamFrame {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            kind,
            payload,
        };
        if recent.len() == REPLAY_FRAMES {
            recent.pop_front();
        }
        recent.push_back(frame.clone());
        // no receivers is fine
        let _ = self.tx.send(frame.clone());
        frame
    }

    /// The buffered frames plus a receiver for everything after them, with
    /// no gap or overlap between the two.
    pub fn subscribe(&self) -> (Vec<StreamFrame>, broadcast::Receiver<StreamFrame>) {
        let recent = self.recent.lock();
        (recent.iter().cloned().collect(), self.tx.subscribe())
    }
}
