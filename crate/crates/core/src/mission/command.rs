//! Operator commands. On the wire a command is its JSON text carried in
//! `command` frames; the framed size is what the uplink budget is charged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{LinkError, TransferTarget, UplinkCharge, UplinkKind};
use crate::orbitsim::ZonePolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Capture {
        channel: u8,
    },
    SetPriority {
        asset_id: u64,
        priority: i32,
    },
    StartTransfer {
        asset_id: u64,
        target: TransferTarget,
    },
    AbortTransfer {
        asset_id: u64,
    },
    DeleteAsset {
        asset_id: u64,
    },
    /// `content_base64` is the standard-alphabet base64 of the file.
    RepairUpload {
        logical_name: String,
        content_base64: String,
    },
    SetZonePolicy {
        policy: ZonePolicy<f64>,
    },
    TriggerFinetune,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Capture { .. } => "capture",
            Command::SetPriority { .. } => "set_priority",
            Command::StartTransfer { .. } => "start_transfer",
            Command::AbortTransfer { .. } => "abort_transfer",
            Command::DeleteAsset { .. } => "delete_asset",
            Command::RepairUpload { .. } => "repair_upload",
            Command::SetZonePolicy { .. } => "set_zone_policy",
            Command::TriggerFinetune => "trigger_finetune",
        }
    }

    pub fn uplink_kind(&self) -> UplinkKind {
        match self {
            Command::RepairUpload { .. } => UplinkKind::FileRepair,
            _ => UplinkKind::Command,
        }
    }

    pub fn from_json(text: &str) -> Result<Command, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_wire(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("command serialises")
    }
}

#[derive(Debug, Error)]
pub enum CommandError {
    /// Not enough uplink budget; nothing was sent.
    #[error(transparent)]
    Budget(LinkError),
    #[error("unknown asset {0}")]
    UnknownAsset(u64),
    /// Delivered and charged, but refused onboard.
    #[error("rejected onboard: {0}")]
    Rejected(String),
    #[error("mission has ended")]
    Ended,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub command: String,
    pub ack_sequence: u16,
    pub framed_bytes: u64,
    pub charge: UplinkCharge,
    pub detail: serde_json::Value,
}
