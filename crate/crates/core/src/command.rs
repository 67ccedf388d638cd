//! Commands accepted by the core and the handle clients use to send them.

use std::sync::mpsc::{self, Receiver, Sender};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::actions::{ActionRegistration, CancelToken};
use crate::events::EventBus;
use crate::interventions::InterventionRecord;
use crate::map::{MapEdit, NodeId, TopologicalMap};
use crate::mission::Mission;
use crate::schedule::Schedule;
use crate::time::Timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    ExecuteMission {
        mission_id: String,
        #[serde(default)]
        reorder: bool,
    },
    Interrupt,
    NavigateTo {
        node: NodeId,
    },
    ApplyMapEdit {
        edit: MapEdit,
        expected_version: u64,
    },
    ReplaceMap {
        map: TopologicalMap,
        #[serde(default)]
        expected_version: Option<u64>,
    },
    GetMap,
    ComputePolicy {
        goal: NodeId,
    },
    PlanPath {
        #[serde(default)]
        start: Option<NodeId>,
        goal: NodeId,
    },
    SaveMission {
        mission: Mission,
    },
    LoadMission {
        mission_id: String,
    },
    ListMissions,
    DeleteMission {
        mission_id: String,
    },
    SaveSchedule {
        schedule: Schedule,
    },
    DeleteSchedule {
        schedule_id: String,
    },
    ListSchedules,
    SetScheduleEnabled {
        schedule_id: String,
        enabled: bool,
    },
    RegisterAction {
        registration: ActionRegistration,
    },
    ListActions,
    LogIntervention {
        record: InterventionRecord,
    },
    ListInterventions {
        #[serde(default)]
        limit: Option<usize>,
    },
    ComputeMtbi {
        start: Timestamp,
        window_hours: f64,
    },
    /// Travel-cost reordering of a stored mission or of one given inline.
    ReorderMission {
        #[serde(default)]
        mission_id: Option<String>,
        #[serde(default)]
        mission: Option<Mission>,
        #[serde(default)]
        start: Option<NodeId>,
        #[serde(default)]
        save: bool,
    },
    Status,
    ListRecords {
        #[serde(default)]
        limit: Option<usize>,
    },
    Shutdown,
}

impl Command {
    /// Whether the command can change persisted or live state.
    pub fn is_mutating(&self) -> bool {
        !matches!(
            self,
            Command::GetMap
                | Command::ComputePolicy { .. }
                | Command::PlanPath { .. }
                | Command::LoadMission { .. }
                | Command::ListMissions
                | Command::ListSchedules
                | Command::ListActions
                | Command::ListInterventions { .. }
                | Command::ComputeMtbi { .. }
                | Command::Status
                | Command::ListRecords { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Busy,
    Inhibited,
    Invalid,
    ScheduledMissionInUse,
    Unreachable,
    Storage,
    Unavailable,
}

#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
#[error("{code:?}: {message}")]
pub struct CommandError {
    pub code: ErrorCode,
    pub message: String,
}

impl CommandError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

pub type Reply = Result<Value, CommandError>;

pub struct Envelope {
    pub command: Command,
    pub reply: Sender<Reply>,
}

/// Cheap to clone; every client holds one.
#[derive(Clone)]
pub struct CoreHandle {
    pub(crate) tx: Sender<Envelope>,
    pub(crate) bus: EventBus,
    pub(crate) interrupt: CancelToken,
}

impl CoreHandle {
    pub fn events(&self) -> &EventBus {
        &self.bus
    }

    /// Enqueue without waiting for the answer.
    pub fn submit(&self, command: Command) -> Receiver<Reply> {
        let (reply, rx) = mpsc::channel();
        if matches!(command, Command::Interrupt) {
            self.interrupt.cancel();
        }
        if let Err(mpsc::SendError(env)) = self.tx.send(Envelope { command, reply }) {
            let _ = env.reply.send(Err(gone()));
        }
        rx
    }

    /// Enqueue and block until the core has answered.
    pub fn request(&self, command: Command) -> Reply {
        self.submit(command).recv().unwrap_or_else(|_| Err(gone()))
    }
}

fn gone() -> CommandError {
    CommandError::new(ErrorCode::Unavailable, "core has stopped")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_documents() {
        let c: Command = serde_json::from_str(r#"{"kind":"execute_mission","mission_id":"b1"}"#).unwrap();
        assert_eq!(
            c,
            Command::ExecuteMission {
                mission_id: "b1".into(),
                reorder: false
            }
        );
        let text = serde_json::to_string(&Command::Interrupt).unwrap();
        assert_eq!(text, r#"{"kind":"interrupt"}"#);
        assert!(!Command::Status.is_mutating());
        assert!(Command::Interrupt.is_mutating());
    }
}
