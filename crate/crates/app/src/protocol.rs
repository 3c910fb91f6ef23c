//! JSON text frames exchanged with the demo game. Positions are world coordinates.

use serde::{Deserialize, Serialize};
use shepherd_core::curriculum::LessonId;
use shepherd_core::episode::EpisodeMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Start { lesson: LessonId, n: usize, seed: u64 },
    /// Latest mouse position.
    Input { x: f64, y: f64 },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State {
        t: u64,
        shepherd: [f64; 2],
        goal: [f64; 2],
        sheep: Vec<[f64; 2]>,
        collected: bool,
    },
    Done {
        success: bool,
        metrics: EpisodeMetrics,
    },
    Error {
        msg: String,
    },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialise")
    }
}
