//! Generic inclusive prefix/suffix scan over an associative operator,
//! with sequential and parallel execution and an instrumented
//! combine-call counter.
//!
//! The parallel engine is a work-efficient two-phase (up-sweep /
//! down-sweep) tree scan. The operators this crate feeds it have no
//! cheap identity element, so lengths that are not powers of two are
//! handled by splitting off the tail as its own segment and stitching
//! the segments together, instead of padding with identities. Operands
//! are never reordered: the operators are associative but not
//! commutative.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Execution strategy for a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Left-fold on the caller's thread; association order is exactly
    /// that of a running accumulation.
    Sequential,
    /// Two-phase tree scan on a worker pool.
    Parallel,
}

/// How a scan should run.
#[derive(Debug, Clone)]
pub struct ScanPlan {
    pub mode: ScanMode,
    /// Worker threads for parallel mode; clamped to at least 1.
    pub worker_budget: usize,
    /// When set, the number of combine invocations is reported in the
    /// scan output.
    pub count_combines: bool,
}

impl ScanPlan {
    pub fn sequential() -> Self {
        ScanPlan {
            mode: ScanMode::Sequential,
            worker_budget: 1,
            count_combines: false,
        }
    }

    pub fn parallel(worker_budget: usize) -> Self {
        ScanPlan {
            mode: ScanMode::Parallel,
            worker_budget: worker_budget.max(1),
            count_combines: false,
        }
    }

    pub fn counting(mut self, on: bool) -> Self {
        self.count_combines = on;
        self
    }
}

/// Scan results plus instrumentation.
#[derive(Debug, Clone)]
pub struct ScanOutput<E> {
    pub values: Vec<E>,
    /// Number of combine calls made, 0 unless the plan asked for
    /// counting.
    pub combine_calls: u64,
}

struct Cx<'a, F> {
    combine: &'a F,
    counter: Option<&'a AtomicU64>,
}

impl<'a, F> Cx<'a, F> {
    fn apply<E>(&self, a: &E, b: &E, lo: usize, hi: usize) -> Result<E>
    where
        F: Fn(&E, &E) -> Result<E>,
    {
        if let Some(c) = self.counter {
            c.fetch_add(1, Ordering::Relaxed);
        }
        (self.combine)(a, b).map_err(|e| Error::ScanCombine {
            lo,
            hi,
            source: Box::new(e),
        })
    }
}

/// Inclusive prefix scan: `out[k] = e_0 ⊗ e_1 ⊗ … ⊗ e_k`.
///
/// `combine` must be associative and a pure function of its two
/// arguments; in parallel mode it is invoked concurrently from the
/// worker pool. Sequential and parallel modes agree up to the
/// operator's floating-point reassociation tolerance, and exactly for
/// exactly-associative operators.
pub fn inclusive_scan<E, F>(elements: Vec<E>, combine: F, plan: &ScanPlan) -> Result<ScanOutput<E>>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    if elements.is_empty() {
        return Err(Error::EmptyInput {
            context: "inclusive_scan",
        });
    }
    let counter = AtomicU64::new(0);
    let cx = Cx {
        combine: &combine,
        counter: plan.count_combines.then_some(&counter),
    };
    let mut values = elements;
    match plan.mode {
        ScanMode::Sequential => {
            for k in 1..values.len() {
                values[k] = cx.apply(&values[k - 1], &values[k], 0, k)?;
            }
        }
        ScanMode::Parallel => {
            let pool = pool_for(plan.worker_budget)?;
            pool.install(|| scan_segmented(&mut values, 0, &cx))?;
        }
    }
    Ok(ScanOutput {
        values,
        combine_calls: counter.into_inner(),
    })
}

/// Inclusive suffix scan: `out[k] = e_k ⊗ e_{k+1} ⊗ … ⊗ e_{n-1}`,
/// preserving left-to-right operand order.
///
/// Implemented as index reversal plus an argument-flipped combine,
/// followed by a final reversal.
pub fn reverse_scan<E, F>(elements: Vec<E>, combine: F, plan: &ScanPlan) -> Result<ScanOutput<E>>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    if elements.is_empty() {
        return Err(Error::EmptyInput {
            context: "reverse_scan",
        });
    }
    let n = elements.len();
    let mut reversed = elements;
    reversed.reverse();
    let flipped = |a: &E, b: &E| combine(b, a);
    let mut out = inclusive_scan(reversed, flipped, plan).map_err(|e| match e {
        Error::ScanCombine { lo, hi, source } => Error::ScanCombine {
            lo: n - 1 - hi,
            hi: n - 1 - lo,
            source,
        },
        other => other,
    })?;
    out.values.reverse();
    Ok(out)
}

/// Exact number of combine calls the parallel scan performs on `n`
/// elements.
///
/// For `n = 2^m` the two sweeps cost `n-1` and `n-1-m` combines, so the
/// total is `2n - 2 - log2(n)`. Other lengths split into a head of
/// `p = 2^⌊log2 n⌋` elements and a recursively scanned tail, stitched
/// with one combine per tail element.
pub fn expected_combine_count(n: usize) -> u64 {
    if n <= 1 {
        return 0;
    }
    if n.is_power_of_two() {
        let m = n.trailing_zeros() as u64;
        return 2 * n as u64 - 2 - m;
    }
    let p = prev_power_of_two(n);
    expected_combine_count(p) + expected_combine_count(n - p) + (n - p) as u64
}

fn prev_power_of_two(n: usize) -> usize {
    debug_assert!(n >= 1);
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Scan of an arbitrary-length segment: power-of-two head via the tree
/// sweeps, tail recursively, then the head's total prefix is combined
/// into every tail entry.
fn scan_segmented<E, F>(data: &mut [E], base: usize, cx: &Cx<'_, F>) -> Result<()>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    let n = data.len();
    if n <= 1 {
        return Ok(());
    }
    let p = prev_power_of_two(n);
    if p == n {
        return scan_pow2(data, base, cx);
    }
    let (head, tail) = data.split_at_mut(p);
    let (hr, tr) = rayon::join(
        || scan_pow2(head, base, cx),
        || scan_segmented(tail, base + p, cx),
    );
    hr?;
    tr?;
    let head_total = head[p - 1].clone();
    let stitched: Result<Vec<E>> = tail
        .par_iter()
        .enumerate()
        .map(|(t, v)| cx.apply(&head_total, v, base, base + p + t))
        .collect();
    for (slot, v) in tail.iter_mut().zip(stitched?) {
        *slot = v;
    }
    Ok(())
}

/// In-place inclusive tree scan for power-of-two lengths.
///
/// Up-sweep: position `k·2^{d+1} + 2^{d+1} - 1` absorbs its block's
/// left half, leaving each position holding the product of the trailing
/// power-of-two-sized segment that ends there. Down-sweep (top level
/// down): each position holding a segment of length `2^d` that does not
/// start at the segment origin absorbs the already-final prefix ending
/// just before it. No identity element is required and position 0 is
/// never written.
fn scan_pow2<E, F>(data: &mut [E], base: usize, cx: &Cx<'_, F>) -> Result<()>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let levels = n.trailing_zeros();

    for d in 0..levels {
        let stride = 1usize << (d + 1);
        let half = 1usize << d;
        let pairs: Vec<(usize, usize, usize, usize)> = (0..n / stride)
            .map(|k| {
                let left = k * stride + half - 1;
                let right = k * stride + stride - 1;
                (left, right, base + k * stride, base + right)
            })
            .collect();
        run_phase(data, &pairs, cx)?;
    }

    for d in (0..levels).rev() {
        let stride = 1usize << (d + 1);
        let half = 1usize << d;
        let pairs: Vec<(usize, usize, usize, usize)> = (1..n / stride)
            .map(|q| {
                let left = q * stride - 1;
                let right = q * stride + half - 1;
                (left, right, base, base + right)
            })
            .collect();
        run_phase(data, &pairs, cx)?;
    }
    Ok(())
}

/// Execute one level of independent combines `(left, right) -> right`.
/// Targets within a level are disjoint, so results are computed against
/// the immutable snapshot and written back afterwards.
fn run_phase<E, F>(
    data: &mut [E],
    pairs: &[(usize, usize, usize, usize)],
    cx: &Cx<'_, F>,
) -> Result<()>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    if pairs.len() <= 2 {
        for &(l, r, lo, hi) in pairs {
            data[r] = cx.apply(&data[l], &data[r], lo, hi)?;
        }
        return Ok(());
    }
    let updates: Result<Vec<(usize, E)>> = pairs
        .par_iter()
        .map(|&(l, r, lo, hi)| cx.apply(&data[l], &data[r], lo, hi).map(|v| (r, v)))
        .collect();
    for (r, v) in updates? {
        data[r] = v;
    }
    Ok(())
}

pub(crate) fn pool_for(workers: usize) -> Result<Arc<ThreadPool>> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = pools.lock().expect("scan pool registry poisoned");
    if let Some(p) = guard.get(&workers) {
        return Ok(p.clone());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("scan-worker-{i}"))
        .build()
        .map_err(|e| Error::Engine {
            detail: e.to_string(),
        })?;
    let pool = Arc::new(pool);
    guard.insert(workers, pool.clone());
    Ok(pool)
}
