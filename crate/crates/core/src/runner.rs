//! Replica fan-out over a worker pool.
//!
//! Replicas are split into contiguous shards, one per worker. Each shard owns
//! its workspace and accumulator; accumulators are merged in shard order.
//! Replica `i` sees the same seed whatever the shard layout, and accumulators
//! hold integer counts, so the merged result does not depend on `workers`.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub fn run_replicas<W, A, M, I, B, G>(reps: u64, workers: usize, make: M, init: I, body: B, merge: G) -> Result<A>
where
    A: Send,
    M: Fn() -> Result<W> + Sync,
    I: Fn() -> A + Sync,
    B: Fn(&mut W, &mut A, u64) -> Result<()> + Sync,
    G: Fn(&mut A, A),
{
    let workers = workers.max(1);
    let shard = |lo: u64, hi: u64| -> Result<A> {
        let mut w = make()?;
        let mut acc = init();
        for i in lo..hi {
            body(&mut w, &mut acc, i)?;
        }
        Ok(acc)
    };
    if workers == 1 || reps < 2 {
        return shard(0, reps);
    }
    let bounds: Vec<(u64, u64)> = (0..workers as u64)
        .map(|k| (reps * k / workers as u64, reps * (k + 1) / workers as u64))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::ResourceLimit(e.to_string()))?;
    let parts: Vec<Result<A>> = pool.install(|| bounds.par_iter().map(|&(lo, hi)| shard(lo, hi)).collect());
    let mut out = init();
    for p in parts {
        merge(&mut out, p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharding_does_not_change_sums() {
        let run = |workers| {
            run_replicas(
                1000,
                workers,
                || Ok(()),
                || 0u64,
                |_, acc, i| {
                    *acc += i * i;
                    Ok(())
                },
                |a, b| *a += b,
            )
            .unwrap()
        };
        assert_eq!(run(1), run(3));
        assert_eq!(run(1), (0..1000u64).map(|i| i * i).sum::<u64>());
    }
}
