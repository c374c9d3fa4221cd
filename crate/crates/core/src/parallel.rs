//! Point-level parallelism with results merged by task index.

use rayon::prelude::*;

use crate::error::{HjbError, Result};

/// Worker count from an explicit value, else `HJB_WORKERS`, else 1.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return if w == 0 { Err(HjbError::InvalidInput("workers must be ≥ 1".into())) } else { Ok(w) };
    }
    match std::env::var("HJB_WORKERS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(HjbError::InvalidInput(format!("HJB_WORKERS: invalid worker count '{s}'"))),
        },
        Err(_) => Ok(1),
    }
}

/// Applies `f(index, item)` on `workers` threads; output order is the input
/// order regardless of scheduling.
pub fn map_indexed<I, O, F>(workers: usize, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()),
        Err(_) => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..200).collect();
        let f = |i: usize, x: &u64| (i as u64) * 1000 + x * x;
        assert_eq!(map_indexed(1, &items, f), map_indexed(4, &items, f));
    }

    #[test]
    fn explicit_workers_validated() {
        assert_eq!(resolve_workers(Some(3)).unwrap(), 3);
        assert!(resolve_workers(Some(0)).is_err());
    }
}
