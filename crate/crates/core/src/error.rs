// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors raised by the statistical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("input is not sorted: {0}")]
    Unsorted(&'static str),
    #[error("session has already stopped ({0})")]
    SessionStopped(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
