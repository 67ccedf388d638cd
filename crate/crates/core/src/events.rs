//! Append-only state event stream with resumable subscriptions.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::interventions::InterventionRecord;
use crate::localization::LocalizerEvent;
use crate::map::NodeId;
use crate::mission::{MissionRecord, TaskRecord, TaskStatus, Trigger};
use crate::nav::NavEvent;
use crate::time::Timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Pose {
        x: f64,
        y: f64,
        z: f64,
        yaw: f64,
        node: Option<NodeId>,
    },
    Battery {
        level: f64,
        docked: bool,
        charging: bool,
    },
    Localizer(LocalizerEvent),
    Nav(NavEvent),
    MissionStarted {
        run_id: u64,
        mission_id: String,
        trigger: Trigger,
        tasks: Vec<TaskRecord>,
    },
    TaskStatus {
        run_id: u64,
        index: usize,
        status: TaskStatus,
        detail: Option<String>,
    },
    MissionFinished {
        record: MissionRecord,
    },
    MissionRejected {
        mission_id: String,
        reason: String,
        inhibited_by: Vec<String>,
    },
    ScheduleFired {
        schedule_id: String,
        mission_id: String,
    },
    ScheduleQueued {
        schedule_id: String,
        mission_id: String,
    },
    ScheduleSuppressed {
        schedule_id: String,
        reason: String,
    },
    ScheduleError {
        schedule_id: String,
        message: String,
    },
    Inhibited {
        monitor: String,
    },
    Uninhibited {
        monitor: String,
    },
    MonitorRequest {
        monitor: String,
        mission_id: String,
        urgent: bool,
    },
    MapVersion {
        version: u64,
    },
    RegistryChanged {
        action: String,
        replaced: bool,
    },
    /// A stored mission or schedule was written or removed.
    StoreChanged {
        entity: String,
        id: String,
        deleted: bool,
    },
    Intervention {
        record: InterventionRecord,
    },
    Alert {
        source: String,
        message: String,
    },
    ShuttingDown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub seq: u64,
    pub time: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

pub const DEFAULT_BACKLOG: usize = 200_000;
pub const DEFAULT_SUBSCRIBER_BUFFER: usize = 4096;

struct Subscriber {
    tx: SyncSender<StateEvent>,
    overflowed: Arc<AtomicBool>,
}

struct BusInner {
    next_seq: u64,
    backlog: VecDeque<StateEvent>,
    capacity: usize,
    subscribers: Vec<Subscriber>,
}

/// Events numbered from 1. Publishing never blocks: a subscriber whose
/// buffer is full is dropped and its overflow flag raised.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<Mutex<BusInner>>,
}

pub struct Subscription {
    /// Retained events after the requested sequence number.
    pub backlog: Vec<StateEvent>,
    /// True when events between the requested number and the backlog's
    /// first entry were already discarded.
    pub gap: bool,
    pub live: Receiver<StateEvent>,
    pub overflowed: Arc<AtomicBool>,
}

impl Subscription {
    pub fn has_overflowed(&self) -> bool {
        self.overflowed.load(Ordering::SeqCst)
    }
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new(DEFAULT_BACKLOG)
    }
}

impl EventBus {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(BusInner {
                next_seq: 1,
                backlog: VecDeque::new(),
                capacity: capacity.max(1),
                subscribers: Vec::new(),
            })),
        }
    }

    pub fn publish(&self, time: Timestamp, kind: EventKind) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let event = StateEvent { seq, time, kind };
        inner.subscribers.retain(|s| match s.tx.try_send(event.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                s.overflowed.store(true, Ordering::SeqCst);
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
        if inner.backlog.len() == inner.capacity {
            inner.backlog.pop_front();
        }
        inner.backlog.push_back(event);
        seq
    }

    /// Sequence number of the latest event, 0 before the first.
    pub fn last_seq(&self) -> u64 {
        self.inner.lock().unwrap().next_seq - 1
    }

    pub fn subscribe(&self, after: u64) -> Subscription {
        self.subscribe_with_buffer(after, DEFAULT_SUBSCRIBER_BUFFER)
    }

    pub fn subscribe_with_buffer(&self, after: u64, buffer: usize) -> Subscription {
        let mut inner = self.inner.lock().unwrap();
        let (tx, live) = mpsc::sync_channel(buffer.max(1));
        let overflowed = Arc::new(AtomicBool::new(false));
        inner.subscribers.push(Subscriber {
            tx,
            overflowed: overflowed.clone(),
        });
        let first = inner.backlog.front().map_or(inner.next_seq, |e| e.seq);
        Subscription {
            backlog: inner.backlog.iter().filter(|e| e.seq > after).cloned().collect(),
            gap: after + 1 < first,
            live,
            overflowed,
        }
    }

    /// Retained events after `after`.
    pub fn since(&self, after: u64) -> Vec<StateEvent> {
        let inner = self.inner.lock().unwrap();
        inner.backlog.iter().filter(|e| e.seq > after).cloned().collect()
    }
}
