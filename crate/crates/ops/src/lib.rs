//! Operator-facing service: storage, the wire protocol, configuration and
//! the `ronda` command line.

pub mod cli;
pub mod client;
pub mod config;
pub mod protocol;
pub mod server;
pub mod service;
pub mod store;
pub mod world;

use std::fmt::Display;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use client::{Client, SubscribeAck};
pub use config::Config;
pub use protocol::{Op, Request, ServerMessage, PROTOCOL_VERSION};
pub use server::Server;
pub use service::Service;
pub use store::{DirStore, LoadError};
pub use world::World;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{}: {reason}", path.display())]
    File { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

impl OpsError {
    pub fn file(path: &Path, reason: impl Display) -> Self {
        OpsError::File {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}
