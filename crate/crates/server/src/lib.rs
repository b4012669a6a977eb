//! HTTP server and command-line front end for aitchview.

pub mod analysis;
pub mod api;
pub mod cli;
pub mod error;
pub mod state;

pub use api::router;
pub use state::AppState;
