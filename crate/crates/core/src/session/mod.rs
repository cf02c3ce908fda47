//! Map persistence, localization in a shared map, session merging and the
//! map-sharing service.

pub mod archive;
pub mod client;
pub mod codec;
pub mod localize;
pub mod merge;
pub mod server;
pub mod wire;

use std::io;

use thiserror::Error;

pub use archive::{load_map, load_map_file, save_map, save_map_file, session_color, MapArchive, SessionInfo};
pub use client::{track_client, MapClient, TrackParams, TrackSession};
pub use localize::{localize, localize_indexed, LocalizeParams, Localization, MapIndex};
pub use merge::{merge_sessions, MergeParams, MergeReport};
pub use server::{start_server, MapSnapshot, ServerHandle, ServerParams};

use crate::posegraph::GraphError;
use crate::simworld::SimError;
use codec::CodecError;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("corrupt map archive: {0}")]
    CorruptArchive(String),
    #[error("unsupported archive version {0}")]
    VersionMismatch(u32),
    #[error("the new session never localized against the base map")]
    NeverLocalized,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code}: {text}")]
    Remote { code: u8, text: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
