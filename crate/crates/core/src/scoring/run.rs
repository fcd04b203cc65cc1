//! Resumable dataset-scale scoring.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde_json::json;

use super::store::{ScoreStore, StoreContents, StoreError, StoreHeader, StoreLine, StorePolicies, STORE_FORMAT};
use super::{one_shot_row, zero_shot_profile, GoldenScoreTable, OverflowPolicy, ScoringError};
use crate::anchors::AnchorSet;
use crate::backend::Backend;
use crate::dataset::{Dataset, InstructionExample, PromptTemplate};
use crate::Fingerprint;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub overflow_policy: OverflowPolicy,
    /// Applied when deriving the golden-score table; rows do not depend on it.
    pub tie_epsilon: f64,
    /// Leave anchor source examples out of the candidate pool.
    pub exclude_anchors: bool,
    pub parallelism: usize,
    /// Discard an existing store instead of resuming it.
    pub fresh: bool,
    /// Stop after writing this many new rows.
    pub stop_after: Option<usize>,
    /// Set externally (e.g. by a signal handler) to stop dispatching work.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            overflow_policy: OverflowPolicy::default(),
            tie_epsilon: 0.0,
            exclude_anchors: false,
            parallelism: 1,
            fresh: false,
            stop_after: None,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub complete: bool,
    pub candidates: usize,
    pub resumed_rows: usize,
    pub new_rows: usize,
    /// Present when every candidate has a row.
    pub table: Option<GoldenScoreTable>,
    pub store: StoreContents,
}

/// Fingerprint of everything that determines stored rows. Parallelism,
/// retry settings and `tie_epsilon` are deliberately absent.
pub fn config_fingerprint(
    dataset: &Fingerprint,
    anchors: &Fingerprint,
    backend: &serde_json::Value,
    template: &Fingerprint,
    policies: &StorePolicies,
) -> Fingerprint {
    Fingerprint::of(&json!({
        "dataset": dataset,
        "anchors": anchors,
        "backend": backend,
        "template": template,
        "policies": policies,
    }))
}

fn candidates<'a>(dataset: &'a Dataset, anchors: &AnchorSet, exclude_anchors: bool) -> Vec<&'a InstructionExample> {
    dataset
        .examples()
        .iter()
        .filter(|e| !(exclude_anchors && anchors.contains_source(&e.id)))
        .collect()
}

/// Score every candidate against `anchors`, streaming rows to the store at
/// `store_path`. Re-running with the same configuration resumes where the
/// previous run stopped.
pub fn score_dataset(
    backend: &dyn Backend,
    dataset: &Dataset,
    anchors: &AnchorSet,
    template: &PromptTemplate,
    store_path: &Path,
    options: &RunOptions,
) -> Result<RunSummary, ScoringError> {
    let policies = StorePolicies { overflow_policy: options.overflow_policy, exclude_anchors: options.exclude_anchors };
    let pool = candidates(dataset, anchors, options.exclude_anchors);
    let descriptor = backend.descriptor();
    let dataset_fp = dataset.fingerprint();
    let template_fp = template.fingerprint();
    let config = config_fingerprint(&dataset_fp, anchors.fingerprint(), &descriptor, &template_fp, &policies);
    let header = StoreHeader {
        format: STORE_FORMAT.into(),
        config_fingerprint: config.clone(),
        dataset_fingerprint: dataset_fp,
        anchor_fingerprint: anchors.fingerprint().clone(),
        template_fingerprint: template_fp,
        backend_fingerprint: backend.fingerprint(),
        backend: descriptor,
        policies,
        m: anchors.m(),
        candidates: pool.len(),
    };

    let existing = if options.fresh { None } else { ScoreStore::read(store_path)? };
    let (mut store, existing) = match existing {
        Some(c) if c.header.config_fingerprint != config => {
            return Err(StoreError::ConfigMismatch { stored: c.header.config_fingerprint, current: config }.into());
        }
        Some(c) => {
            log::info!("resuming {}: {} of {} rows present", store_path.display(), c.rows.len(), pool.len());
            (ScoreStore::resume(store_path, c.valid_len)?, Some(c))
        }
        None => (ScoreStore::create(store_path, &header)?, None),
    };

    let profile = match existing.as_ref().and_then(|c| c.profile.clone()) {
        Some(p) => p,
        None => {
            let started = Instant::now();
            let p = zero_shot_profile(backend, anchors, options.parallelism)?;
            store.append(&StoreLine::Profile(p.clone()))?;
            log::info!("zero-shot profile over {} anchors in {:.2?}", anchors.m(), started.elapsed());
            p
        }
    };
    debug_assert_eq!(profile.anchor_fingerprint, *anchors.fingerprint());

    let todo: Vec<&InstructionExample> = pool
        .iter()
        .copied()
        .filter(|e| existing.as_ref().is_none_or(|c| !c.rows.contains_key(&e.id)))
        .collect();
    let resumed_rows = pool.len() - todo.len();
    let new_rows = dispatch(backend, &todo, anchors, template, options, &mut store)?;
    store.sync()?;

    let contents = ScoreStore::read(store_path)?.expect("store was just written");
    let complete = contents.is_complete();
    let table = if complete { Some(contents.table(options.tie_epsilon)?) } else { None };
    if !complete {
        log::warn!(
            "run stopped with {} of {} rows; rerun the same command to resume",
            contents.rows.len(),
            pool.len()
        );
    }
    Ok(RunSummary { complete, candidates: pool.len(), resumed_rows, new_rows, table, store: contents })
}

/// Fan rows out to a worker pool; a single writer appends them as they
/// complete. Returns the number of rows written.
fn dispatch(
    backend: &dyn Backend,
    todo: &[&InstructionExample],
    anchors: &AnchorSet,
    template: &PromptTemplate,
    options: &RunOptions,
    store: &mut ScoreStore,
) -> Result<usize, ScoringError> {
    if todo.is_empty() || options.stop_after == Some(0) {
        return Ok(0);
    }
    let stop = AtomicBool::new(false);
    let cancelled = || options.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed));
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.max(1).min(todo.len());
    let started = Instant::now();
    let mut written = 0usize;
    let mut failure: Option<ScoringError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(candidate) = todo.get(i) else { break };
                let row = one_shot_row(backend, candidate, anchors, template, options.overflow_policy);
                if tx.send(row).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        loop {
            if cancelled() {
                log::warn!("cancellation requested; stopping after {written} new rows");
                break;
            }
            let row = match rx.recv_timeout(Duration::from_millis(100)) {
                Ok(row) => row,
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            };
            let result = row.and_then(|row| store.append(&StoreLine::Row(row)).map_err(ScoringError::from));
            if let Err(e) = result {
                failure = Some(e);
                break;
            }
            written += 1;
            if written.is_multiple_of(1000) {
                log::info!("{written}/{} rows in {:.1?}", todo.len(), started.elapsed());
            }
            if options.stop_after.is_some_and(|n| written >= n) {
                log::info!("stopping after {written} new rows as requested");
                break;
            }
        }
        stop.store(true, Ordering::Relaxed);
        drop(rx);
    });

    match failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}
