// SPDX-License-Identifier: MIT OR Apache-2.0

//! Live pBOS sessions over HTTP/JSON.
//!
//! | method | path                          |                              |
//! |--------|-------------------------------|------------------------------|
//! | POST   | `/sessions`                   | create from config and prior |
//! | GET    | `/sessions`                   | list                         |
//! | GET    | `/sessions/{id}`              | snapshot                     |
//! | POST   | `/sessions/{id}/observations` | ingest and step              |
//! | POST   | `/sessions/{id}/what-if`      | non-mutating preview         |
//! | GET    | `/healthz`                    | liveness                     |
//!
//! Sessions persist as append-only event logs and are replayed on start.

#![forbid(unsafe_code)]

pub mod api;
pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use api::router;
pub use error::ServiceError;
pub use store::Store;

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, data_dir: Option<&Path>) -> Result<(), ServiceError> {
    let store = match data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
