//! Parallel replications.
//!
//! Replication r draws from `Streams::replication(r)`, so results do not
//! depend on how rayon schedules the work. Outputs come back sorted by
//! replication index.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::report::Abort;
use crate::rng::Streams;

/// Largest tolerated share of aborted replications.
pub const MAX_ABORT_SHARE: f64 = 0.1;

/// Successful outputs in replication order plus the aborts.
#[derive(Debug)]
pub struct Replicated<T> {
    pub outputs: Vec<(usize, T)>,
    pub aborts: Vec<Abort>,
}

/// Run `body` for replications 0..count in parallel.
///
/// A configuration error in any replication is returned as is, since every
/// other replication would hit it too. Runtime errors abort only their
/// replication; more than 10% aborts fails the whole run.
pub fn replicate<T, F>(count: usize, streams: &Streams, body: F) -> Result<Replicated<T>>
where
    T: Send,
    F: Fn(usize, &Streams) -> Result<T> + Sync,
{
    let results: Vec<(usize, Result<T>)> = (0..count)
        .into_par_iter()
        .map(|r| (r, body(r, &streams.replication(r))))
        .collect();
    let mut outputs = Vec::with_capacity(count);
    let mut aborts = Vec::new();
    for (r, res) in results {
        match res {
            Ok(v) => outputs.push((r, v)),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => aborts.push(Abort { replication: r, error: e.to_string() }),
        }
    }
    if aborts.len() as f64 > MAX_ABORT_SHARE * count as f64 {
        return Err(Error::TooManyAborts { aborted: aborts.len(), total: count });
    }
    Ok(Replicated { outputs, aborts })
}
