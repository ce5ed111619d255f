//! HTTP service that runs the human classification protocol: study setup,
//! participant sessions, catch-trial exclusion and level advancement.

pub mod api;
pub mod store;
pub mod study;

use std::path::Path;
use std::sync::Arc;

pub use api::{router, Shared};
pub use store::{Command, State, Store, StoreError};
pub use study::{CatchRule, CreateStudy, Study, StudyConfig, StudyError};

/// Snapshot cadence used when none is configured.
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 200;

/// Opens the store under `data_dir` and builds the router.
pub fn app(
    data_dir: &Path,
    snapshot_every: u64,
) -> Result<(axum::Router, Arc<Shared>), StoreError> {
    let (store, state) = Store::open(data_dir, snapshot_every)?;
    log::info!(
        "store {} holds {} studies after {} events",
        data_dir.display(),
        state.studies.len(),
        state.applied
    );
    let shared = Arc::new(Shared::new(store, state));
    Ok((router(shared.clone()), shared))
}

/// Serves until the listener fails.
pub async fn serve(
    listener: tokio::net::TcpListener,
    data_dir: &Path,
    snapshot_every: u64,
) -> std::io::Result<()> {
    let (router, _) = app(data_dir, snapshot_every).map_err(std::io::Error::other)?;
    axum::serve(listener, router).await
}
