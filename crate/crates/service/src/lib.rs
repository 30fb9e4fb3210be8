//! HTTP session API for interactive episodes: a human Architect watches the
//! Builder's prediction, then gives help or answers its clarification question.

pub mod http;
pub mod session;

pub use http::{router, serve};
pub use session::{Phase, ServiceConfig, SessionError, SessionManager};
