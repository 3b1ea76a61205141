//! Command-line tool and HTTP gateway over the `pcd-core` modules.

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod http;

pub use error::ApiError;
