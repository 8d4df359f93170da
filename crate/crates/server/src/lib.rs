//! Live round-based sessions: seat management, round timeouts,
//! controller-in-the-loop resolution, and an HTTP/event-stream API.

pub mod api;
pub mod error;
pub mod id;
pub mod session;

pub use api::{router, serve, AppState, ServerConfig};
pub use error::{Result, ServerError};
pub use id::SessionId;
pub use session::{LiveSession, Phase, SeatKind};
