//! Hierarchical wall-time profiler.
//!
//! Each thread records into its own [`ThreadProfiler`]; nested scopes are
//! keyed by their `/`-joined path (`round/local_train/sgd`). Per-thread
//! totals are merged into the shared [`Profiler`] when the thread profiler
//! is flushed or dropped, and [`Profiler::report`] turns them into rows with
//! mean, call count, total and share of the run's wall time.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::ProfileEntry;

pub const TOTAL_RUN_LABEL: &str = "Total Run";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfilerError {
    #[error("profiler scope label must be non-empty")]
    EmptyLabel,
    #[error("scope end for {label:?} does not match the innermost open scope {open:?}")]
    UnmatchedScopeEnd { label: String, open: Option<String> },
    #[error("{0} profiler scope(s) still open")]
    OpenScopes(usize),
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    calls: u64,
    total: Duration,
}

#[derive(Debug)]
pub struct Profiler {
    enabled: bool,
    started: Instant,
    merged: Mutex<HashMap<String, Accum>>,
    open: AtomicUsize,
}

impl Default for Profiler {
    fn default() -> Self {
        Self::new()
    }
}

impl Profiler {
    /// Starts the run clock.
    pub fn new() -> Self {
        Self {
            enabled: true,
            started: Instant::now(),
            merged: Mutex::new(HashMap::new()),
            open: AtomicUsize::new(0),
        }
    }

    /// A profiler whose scopes record nothing.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// A recorder for the calling thread with top-level scopes at the root.
    pub fn thread(&self) -> ThreadProfiler<'_> {
        ThreadProfiler::new(self, None)
    }

    /// A recorder whose scopes nest under `parent` (a path such as `round/local_train`).
    /// Used by worker threads so their work is attributed to the dispatching scope.
    pub fn thread_under(&self, parent: &str) -> ThreadProfiler<'_> {
        ThreadProfiler::new(self, Some(parent.to_string()))
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    fn merge(&self, local: &mut HashMap<String, Accum>) {
        if local.is_empty() {
            return;
        }
        let mut merged = self.merged.lock().unwrap_or_else(|p| p.into_inner());
        for (path, acc) in local.drain() {
            let slot = merged.entry(path).or_default();
            slot.calls += acc.calls;
            slot.total += acc.total;
        }
    }

    /// Summarises everything merged so far against the elapsed run time.
    ///
    /// Thread profilers must be flushed or dropped first. Fails while any
    /// scope is still open.
    pub fn report(&self) -> Result<ProfileReport, ProfilerError> {
        let open = self.open.load(Ordering::SeqCst);
        if open > 0 {
            return Err(ProfilerError::OpenScopes(open));
        }
        let run_total = self.started.elapsed().as_secs_f64();
        let merged = self.merged.lock().unwrap_or_else(|p| p.into_inner());
        let entries_total = |total: f64| {
            if run_total > 0.0 {
                100.0 * total / run_total
            } else {
                0.0
            }
        };
        let mut rows: Vec<ProfileEntry> = merged
            .iter()
            .map(|(path, acc)| {
                let total_s = acc.total.as_secs_f64();
                ProfileEntry {
                    action: path.clone(),
                    mean_duration_s: total_s / acc.calls as f64,
                    num_calls: acc.calls,
                    total_s,
                    percentage: entries_total(total_s),
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            b.total_s
                .total_cmp(&a.total_s)
                .then_with(|| a.action.cmp(&b.action))
        });
        let calls: u64 = rows.iter().map(|r| r.num_calls).sum();
        let total_row = ProfileEntry {
            action: TOTAL_RUN_LABEL.to_string(),
            mean_duration_s: if calls > 0 {
                run_total / calls as f64
            } else {
                0.0
            },
            num_calls: calls,
            total_s: run_total,
            percentage: 100.0,
        };
        rows.insert(0, total_row);
        Ok(ProfileReport {
            run_total_s: run_total,
            entries: rows,
        })
    }
}

/// Scope recorder bound to one thread.
pub struct ThreadProfiler<'p> {
    profiler: &'p Profiler,
    prefix: Option<String>,
    stack: RefCell<Vec<(String, Instant)>>,
    local: RefCell<HashMap<String, Accum>>,
    _not_send: PhantomData<*const ()>,
}

impl<'p> ThreadProfiler<'p> {
    fn new(profiler: &'p Profiler, prefix: Option<String>) -> Self {
        Self {
            profiler,
            prefix,
            stack: RefCell::new(Vec::new()),
            local: RefCell::new(HashMap::new()),
            _not_send: PhantomData,
        }
    }

    /// Opens `label` and closes it when the returned guard drops.
    ///
    /// # Panics
    ///
    /// If `label` is empty.
    pub fn scope(&self, label: &str) -> Scope<'_, 'p> {
        self.enter(label)
            .expect("profiler scope label must be non-empty");
        Scope {
            owner: self,
            label: label.to_string(),
        }
    }

    /// Opens a scope explicitly. Pair with [`ThreadProfiler::exit`].
    pub fn enter(&self, label: &str) -> Result<(), ProfilerError> {
        if label.is_empty() {
            return Err(ProfilerError::EmptyLabel);
        }
        if !self.profiler.enabled {
            return Ok(());
        }
        let mut stack = self.stack.borrow_mut();
        let path = match stack
            .last()
            .map(|(p, _)| p.as_str())
            .or(self.prefix.as_deref())
        {
            Some(parent) => format!("{parent}/{label}"),
            None => label.to_string(),
        };
        self.profiler.open.fetch_add(1, Ordering::SeqCst);
        stack.push((path, Instant::now()));
        Ok(())
    }

    /// Closes the innermost scope, which must be `label`. Returns its duration.
    pub fn exit(&self, label: &str) -> Result<Duration, ProfilerError> {
        if !self.profiler.enabled {
            return Ok(Duration::ZERO);
        }
        let mut stack = self.stack.borrow_mut();
        let matches = stack
            .last()
            .is_some_and(|(path, _)| path.rsplit('/').next() == Some(label));
        if !matches {
            return Err(ProfilerError::UnmatchedScopeEnd {
                label: label.to_string(),
                open: stack.last().map(|(p, _)| p.clone()),
            });
        }
        let (path, start) = stack.pop().expect("checked non-empty");
        let elapsed = start.elapsed();
        let mut local = self.local.borrow_mut();
        let acc = local.entry(path).or_default();
        acc.calls += 1;
        acc.total += elapsed;
        self.profiler.open.fetch_sub(1, Ordering::SeqCst);
        Ok(elapsed)
    }

    /// Pushes this thread's totals into the shared profiler.
    pub fn flush(&self) {
        self.profiler.merge(&mut self.local.borrow_mut());
    }

    pub fn depth(&self) -> usize {
        self.stack.borrow().len()
    }
}

impl Drop for ThreadProfiler<'_> {
    fn drop(&mut self) {
        self.flush();
    }
}

/// Guard returned by [`ThreadProfiler::scope`].
pub struct Scope<'t, 'p> {
    owner: &'t ThreadProfiler<'p>,
    label: String,
}

impl Drop for Scope<'_, '_> {
    fn drop(&mut self) {
        // Guards drop innermost-first, so this only fails if a scope opened
        // with `enter` inside the guard was never exited; that leaves it in
        // the open count and `report` refuses to run.
        let _ = self.owner.exit(&self.label);
    }
}

/// Result of [`Profiler::report`]. The first entry is the `Total Run` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub run_total_s: f64,
    pub entries: Vec<ProfileEntry>,
}

impl ProfileReport {
    /// Rows recorded at the root of a thread, excluding `Total Run`.
    pub fn top_level(&self) -> impl Iterator<Item = &ProfileEntry> {
        self.entries
            .iter()
            .filter(|e| e.action != TOTAL_RUN_LABEL && !e.action.contains('/'))
    }

    pub fn get(&self, action: &str) -> Option<&ProfileEntry> {
        self.entries.iter().find(|e| e.action == action)
    }

    /// Fixed-width table with durations in seconds to four decimals.
    pub fn to_table(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.action.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>13}  {:>10}  {:>12}  {:>9}",
            "Action", "Mean Dur.(s)", "Num Calls", "Total(s)", "Percent."
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 54));
        for e in &self.entries {
            let mean = if e.action == TOTAL_RUN_LABEL {
                "-".to_string()
            } else {
                format!("{:.4}", e.mean_duration_s)
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>13}  {:>10}  {:>12.4}  {:>9.4}",
                e.action, mean, e.num_calls, e.total_s, e.percentage
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread::sleep;

    #[test]
    fn single_scope_counts_once() {
        let p = Profiler::new();
        {
            let t = p.thread();
            let _s = t.scope("work");
        }
        let r = p.report().unwrap();
        assert_eq!(r.get("work").unwrap().num_calls, 1);
        assert_eq!(r.entries[0].action, TOTAL_RUN_LABEL);
    }

    #[test]
    fn repeated_scopes_accumulate_calls() {
        let p = Profiler::new();
        {
            let t = p.thread();
            for _ in 0..844 {
                let _s = t.scope("lr_scheduler");
            }
        }
        assert_eq!(
            p.report().unwrap().get("lr_scheduler").unwrap().num_calls,
            844
        );
    }

    #[test]
    fn nested_scopes_are_contained() {
        let p = Profiler::new();
        {
            let t = p.thread();
            let _outer = t.scope("outer");
            for _ in 0..3 {
                let _inner = t.scope("inner");
                sleep(Duration::from_millis(2));
            }
        }
        let r = p.report().unwrap();
        let outer = r.get("outer").unwrap();
        let inner = r.get("outer/inner").unwrap();
        assert_eq!(inner.num_calls, 3);
        assert!(inner.total_s <= outer.total_s);
        assert_eq!(r.top_level().count(), 1);
    }

    #[test]
    fn unmatched_end_is_an_error() {
        let p = Profiler::new();
        let t = p.thread();
        assert!(matches!(
            t.exit("nothing"),
            Err(ProfilerError::UnmatchedScopeEnd { .. })
        ));
        t.enter("a").unwrap();
        t.enter("b").unwrap();
        assert_eq!(
            t.exit("a"),
            Err(ProfilerError::UnmatchedScopeEnd {
                label: "a".into(),
                open: Some("a/b".into())
            })
        );
        assert_eq!(p.report(), Err(ProfilerError::OpenScopes(2)));
        t.exit("b").unwrap();
        t.exit("a").unwrap();
        t.flush();
        assert!(p.report().is_ok());
        assert_eq!(t.enter(""), Err(ProfilerError::EmptyLabel));
    }

    #[test]
    fn whole_run_in_one_action_is_near_hundred_percent() {
        let p = Profiler::new();
        {
            let t = p.thread();
            let _s = t.scope("all");
            sleep(Duration::from_millis(50));
        }
        let r = p.report().unwrap();
        let pct = r.get("all").unwrap().percentage;
        assert!(pct > 95.0 && pct <= 100.0, "{pct}");
    }

    #[test]
    fn equal_siblings_split_evenly() {
        let p = Profiler::new();
        {
            let t = p.thread();
            for label in ["first", "second"] {
                let _s = t.scope(label);
                sleep(Duration::from_millis(60));
            }
        }
        let r = p.report().unwrap();
        let a = r.get("first").unwrap().percentage;
        let b = r.get("second").unwrap().percentage;
        assert!((a - 50.0).abs() < 5.0 && (b - 50.0).abs() < 5.0, "{a} {b}");
        assert!(a + b <= 100.0);
    }

    #[test]
    fn rows_are_consistent_and_sorted() {
        let p = Profiler::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    let t = p.thread_under("pool");
                    for _ in 0..10 {
                        let _g = t.scope("task");
                    }
                });
            }
        });
        {
            let t = p.thread();
            let _g = t.scope("main");
            sleep(Duration::from_millis(1));
        }
        let r = p.report().unwrap();
        assert_eq!(r.get("pool/task").unwrap().num_calls, 40);
        for e in &r.entries {
            assert!((e.total_s - e.mean_duration_s * e.num_calls as f64).abs() < 1e-9);
        }
        assert!(r.entries[1..]
            .windows(2)
            .all(|w| w[0].total_s >= w[1].total_s));
        assert!(r.to_table().contains("Mean Dur.(s)"));
    }

    #[test]
    fn disabled_profiler_records_nothing() {
        let p = Profiler::disabled();
        {
            let t = p.thread();
            let _s = t.scope("x");
        }
        let r = p.report().unwrap();
        assert_eq!(r.entries.len(), 1);
    }
}
