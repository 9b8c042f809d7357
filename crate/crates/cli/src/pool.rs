//! Fixed-size worker pool over independent per-item tasks.

/// Applies `task` to every item on `workers` scoped threads and returns the
/// results in item order. Each worker owns one `init()` state; worker `k`
/// takes items `k, k + workers, ...`.
pub fn map_with<T, S, R>(
    items: &[T],
    workers: usize,
    init: impl Fn() -> S + Sync,
    task: impl Fn(&mut S, &T) -> R + Sync,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        let mut state = init();
        return items.iter().map(|it| task(&mut state, it)).collect();
    }
    let mut slots: Vec<Option<R>> = std::iter::repeat_with(|| None).take(items.len()).collect();
    let (init, task) = (&init, &task);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                scope.spawn(move || {
                    let mut state = init();
                    (k..items.len())
                        .step_by(workers)
                        .map(|i| (i, task(&mut state, &items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

pub fn map<T: Sync, R: Send>(items: &[T], workers: usize, task: impl Fn(&T) -> R + Sync) -> Vec<R> {
    map_with(items, workers, || (), |_, it| task(it))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_does_not_depend_on_worker_count() {
        let items: Vec<u64> = (0..37).collect();
        let one = map(&items, 1, |x| x * x + 1);
        for w in [2, 3, 8, 64] {
            assert_eq!(map(&items, w, |x| x * x + 1), one);
        }
        assert!(map(&Vec::<u64>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn each_worker_gets_its_own_state() {
        let items = vec![1usize; 10];
        let counts = map_with(&items, 3, || 0usize, |n, x| {
            *n += x;
            *n
        });
        // worker k sees items k, k+3, ...; its running count restarts at 0
        assert_eq!(counts, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }
}
