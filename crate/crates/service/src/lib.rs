//! Operational triage service: fragments incoming responses, scores them
//! against the active cutoff, durably queues flagged fragments for human
//! review, records adjudications and exports them as labeled training data.

pub mod engine;
pub mod error;
pub mod http;
pub mod metrics;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use engine::{CalibrationView, Engine, EngineConfig, FaultPoint, QueuePage};
pub use error::{Result, ServiceError};
pub use metrics::MetricsSnapshot;
pub use model::{
    Adjudication, AdjudicationRequest, FlagDecision, FragmentRecord, Outcome, ReviewItem, ReviewStatus,
    SubmittedResponse,
};

/// Serve the API on `addr` until ctrl-c.
pub async fn serve(engine: Arc<Engine>, max_text_bytes: usize, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, http::router(engine, max_text_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
