use std::thread;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CODESET_BENCH_THREADS";

pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `0..n` on up to `threads` scoped workers. Results come back
/// in index order, so output does not depend on scheduling.
pub fn parallel_map<T, E, G>(n: usize, threads: usize, f: G) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    G: Fn(usize) -> Result<T, E> + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<T>, E>> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Result<Vec<T>, E>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let r: Result<Vec<usize>, ()> = parallel_map(10, 3, |i| Ok(i * i));
        assert_eq!(r.unwrap(), (0..10).map(|i| i * i).collect::<Vec<_>>());
        let e: Result<Vec<usize>, usize> = parallel_map(10, 4, |i| if i == 7 { Err(i) } else { Ok(i) });
        assert_eq!(e, Err(7));
    }
}
