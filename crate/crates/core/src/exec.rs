//! Bounded concurrent fan-out that preserves input order.

use std::future::Future;

use futures::stream::{self, StreamExt};

/// Run `f` over `items` with at most `limit` futures in flight, returning
/// results in input order regardless of completion order. Per-endpoint
/// in-flight caps still apply inside the gateway; `limit` bounds
/// pipeline-level parallelism.
pub async fn map_concurrent<T, R, F, Fut>(items: Vec<T>, limit: usize, f: F) -> Vec<R>
where
    F: Fn(T) -> Fut,
    Fut: Future<Output = R>,
{
    let limit = limit.max(1);
    stream::iter(items.into_iter().map(f))
        .buffered(limit)
        .collect()
        .await
}
