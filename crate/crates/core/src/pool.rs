//! Bounded fan-out over a slice with ordered results.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Apply `f` to every item using up to `parallelism` threads, returning
/// results in input order. The first error (by index) wins; remaining work
/// is abandoned once any item fails.
pub(crate) fn parallel_map<T, R, E, F>(items: &[T], parallelism: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = parallelism.max(1).min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                if r.is_err() {
                    next.store(items.len(), Ordering::Relaxed);
                }
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    let mut slots = slots.into_inner().expect("worker panicked");
    if let Some(pos) = slots.iter().position(|r| matches!(r, Some(Err(_)))) {
        return match slots.swap_remove(pos) {
            Some(Err(e)) => Err(e),
            _ => unreachable!(),
        };
    }
    Ok(slots
        .into_iter()
        .map(|r| match r {
            Some(Ok(v)) => v,
            _ => unreachable!("all items processed when none failed"),
        })
        .collect())
}
