//! Command line and HTTP front end for `textir`.
//!
//! Every endpoint lives under `/api`: `POST /api/restore` and
//! `POST /api/sweep` take multipart forms, `GET /api/health` and
//! `GET /api/model` describe the service.

pub mod cli;
pub mod http;
pub mod request;
pub mod service;

pub use http::{router, AppState, PoolConfig};
pub use request::{RawRequest, RequestError, RestoreRequest};
pub use service::{LoadedModel, RestoreMetadata, RestoreOutput, ServiceError};
