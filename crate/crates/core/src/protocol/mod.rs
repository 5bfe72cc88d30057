//! Length-prefixed JSON messages between the compiler and a learner.
//!
//! Every frame is a 4-byte big-endian length and a JSON object
//! `{type, session, seq, reply_to?, payload}`. The compiler side owns the
//! environment: it answers `start_episode` with an observation, applies
//! each `action` (which must name the observation it answers in
//! `reply_to`), and ends with `episode_done`. An off-mask or stale action
//! gets an `error` and the observation again; a malformed frame gets an
//! `error` and the session closes.

mod client;
mod codec;
mod server;

pub use client::{run_learner, Learner, LearnerEvent};
pub use codec::{read_frame, write_frame, MAX_FRAME};
pub use server::{drive_episode, drive_remote, run_session, serve_tcp, ServerContext};

use std::io;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, Observation, ResetOutcome, StepResult, Transcript};
use crate::transforms::ColorMap;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unexpected message `{0:?}`")]
    Unexpected(MessageType),
    #[error("peer reported {code:?}: {message}")]
    Peer { code: ErrorCode, message: String },
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}

impl From<io::Error> for ProtocolError {
    fn from(e: io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    StartEpisode,
    Observation,
    Action,
    GraphUpdate,
    EpisodeDone,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub session: u64,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    pub payload: serde_json::Value,
}

impl Message {
    pub fn new(kind: MessageType, session: u64, seq: u64, payload: serde_json::Value) -> Self {
        Message {
            kind,
            session,
            seq,
            reply_to: None,
            payload,
        }
    }

    pub fn with<T: Serialize>(kind: MessageType, session: u64, seq: u64, payload: &T) -> Self {
        Message::new(kind, session, seq, serde_json::to_value(payload).expect("serializable"))
    }

    pub fn replying_to(mut self, seq: u64) -> Self {
        self.reply_to = Some(seq);
        self
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// The action is not in the current mask.
    OffMask,
    /// `reply_to` does not name the latest observation.
    Stale,
    /// The frame could not be decoded; the session closes.
    Malformed,
    /// A well-formed request that cannot be served, e.g. an invalid function.
    BadRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub version: u32,
    pub role: String,
    #[serde(default)]
    pub machine: Option<String>,
}

/// Either a MIR function or a seed selecting one from the server's corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartEpisodePayload {
    #[serde(default)]
    pub function: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Built-in machine name; the server's machine when absent.
    #[serde(default)]
    pub machine: Option<String>,
    #[serde(default)]
    pub config: Option<EnvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub step: u64,
    /// Outcome of the previous action, without its graph update.
    pub last: Option<StepResult>,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDonePayload {
    pub outcome: ResetOutcome,
    pub last: Option<StepResult>,
    pub decisions: ColorMap,
    pub cost_rl: u64,
    pub cost_greedy: u64,
    pub global_reward: f64,
    /// The verifier accepted the final assignment.
    pub verified: bool,
    pub transcript: Transcript,
}
