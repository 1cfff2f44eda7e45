//! Iterative insert-then-delete decoding, decode traces, and corpus
//! evaluation.

mod bleu;
mod trace;

pub use bleu::bleu_corpus;
pub use trace::render_trace;

use crate::autodiff::Tape;
use crate::insdel::{
    apply_deletions, deletion_probs, greedy_parallel_insert, insertion_logits, Canvas,
    DeletionParams, InsertionParams, SlotTargets, SlotWeighting, TapedDeletion, TapedInsertion,
};
use crate::tasks::Example;
use crate::transformer::Mode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    InsOnly,
    InsDel,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ins-only" => Ok(DecodeMode::InsOnly),
            "ins-del" => Ok(DecodeMode::InsDel),
            other => Err(format!("unknown mode {other:?} (expected ins-only or ins-del)")),
        }
    }
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::InsOnly => write!(f, "ins-only"),
            DecodeMode::InsDel => write!(f, "ins-del"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub max_iterations: usize,
    pub deletion_threshold: f32,
}

impl DecodeOptions {
    /// Default iteration cap for targets up to `max_target_len` tokens:
    /// `2 * max_target_len + 2`.
    pub fn for_max_target(mode: DecodeMode, max_target_len: usize) -> Self {
        DecodeOptions {
            mode,
            max_iterations: 2 * max_target_len + 2,
            deletion_threshold: 0.5,
        }
    }

    pub fn validate(&self) {
        assert!(self.max_iterations >= 1, "max_iterations must be at least 1");
        assert!(
            self.deletion_threshold > 0.0 && self.deletion_threshold < 1.0,
            "deletion threshold must be inside (0,1)"
        );
    }
}

/// One decode iteration as recorded in a trace: the canvas the insertion
/// model saw, the realized insertions (slot, token), the canvas the
/// deletion model saw, the deleted positions, and the surviving canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceIteration {
    pub before: Canvas,
    pub insertions: Vec<(usize, usize)>,
    pub after_insert: Canvas,
    pub deletions: Vec<usize>,
    pub after_delete: Canvas,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeTrace {
    pub iterations: Vec<TraceIteration>,
}

impl DecodeTrace {
    /// Re-apply every recorded edit and confirm each intermediate canvas,
    /// returning the final canvas.
    pub fn replay(&self) -> Option<Canvas> {
        let mut current: Option<Canvas> = None;
        for it in &self.iterations {
            if let Some(prev) = &current {
                if *prev != it.before {
                    return None;
                }
            }
            let inserted = it.before.insert_at_slots(&it.insertions);
            if inserted != it.after_insert {
                return None;
            }
            let deleted = if it.deletions.is_empty() {
                inserted.clone()
            } else {
                inserted.remove_positions(&it.deletions)
            };
            if deleted != it.after_delete {
                return None;
            }
            current = Some(deleted);
        }
        current
    }
}

/// Iterative parallel decode from an empty target canvas. Each iteration
/// runs one greedy insertion phase and, in ins-del mode, one deletion
/// phase; decoding stops when an iteration makes no edit or at the
/// iteration cap. Returns the target letters and the trace.
pub fn decode(
    source: &[usize],
    insertion: &InsertionParams,
    deletion: &DeletionParams,
    options: &DecodeOptions,
) -> (Vec<usize>, DecodeTrace) {
    options.validate();
    let max_len = insertion.decoder.config.max_positions;
    let mut canvas = Canvas::new(source, &[]);
    let mut trace = DecodeTrace::default();

    for _ in 0..options.max_iterations {
        let before = canvas.clone();

        // insertion phase
        let logit_values = {
            let mut tape = Tape::new();
            let taped = TapedInsertion::register_frozen(&mut tape, insertion);
            let logits = insertion_logits(&mut tape, &taped, &canvas, &mut Mode::Eval);
            tape.value(logits).to_vec()
        };
        let outcome = greedy_parallel_insert(&canvas, &logit_values, None);
        // a canvas at capacity takes no insertions; deletions may still run
        let (after_insert, insertions) = if outcome.canvas.len() > max_len {
            (canvas.clone(), Vec::new())
        } else {
            let pairs: Vec<(usize, usize)> =
                outcome.records.iter().map(|r| (r.slot, r.token)).collect();
            (outcome.canvas, pairs)
        };

        // deletion phase
        let (after_delete, deletions) = match options.mode {
            DecodeMode::InsOnly => (after_insert.clone(), Vec::new()),
            DecodeMode::InsDel => {
                let probs = {
                    let mut tape = Tape::new();
                    let taped = TapedDeletion::register_frozen(&mut tape, deletion);
                    let p = deletion_probs(&mut tape, &taped, &after_insert, &mut Mode::Eval);
                    tape.value(p).to_vec()
                };
                let deleted: Vec<usize> = after_insert
                    .target_span()
                    .filter(|&p| probs[p] > options.deletion_threshold)
                    .collect();
                (apply_deletions(&after_insert, &probs, options.deletion_threshold), deleted)
            }
        };

        let edited = !insertions.is_empty() || !deletions.is_empty();
        canvas = after_delete.clone();
        trace.iterations.push(TraceIteration {
            before,
            insertions,
            after_insert,
            deletions,
            after_delete,
        });
        if !edited {
            break;
        }
    }
    (canvas.target_tokens().to_vec(), trace)
}

/// Decode with the slot-span-center oracle in place of the model argmax and
/// no deletions: every nonempty slot inserts the middle of its span. Runs
/// the real canvas and insertion machinery; the ground-truth alignment is
/// tracked alongside. Returns the reconstruction and the iterations used.
pub fn oracle_decode(
    source: &[usize],
    target: &[usize],
    max_iterations: usize,
) -> (Vec<usize>, usize) {
    use crate::insdel::vocab::{TOKEN_EOS_SLOT, VOCAB_SIZE};
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for iteration in 0..=max_iterations {
        if kept.len() == target.len() {
            let letters: Vec<usize> = kept.iter().map(|&(_, t)| t).collect();
            return (letters, iteration);
        }
        assert!(iteration < max_iterations, "oracle_decode hit the iteration cap");

        let alignment: Vec<usize> = kept.iter().map(|&(i, _)| i).collect();
        let canvas = Canvas::with_alignment(source, &kept);
        let targets = SlotTargets::build(&alignment, target, SlotWeighting::default());

        // per-slot ground-truth gaps, mirrored by SlotTargets::span
        let mut gaps: Vec<(usize, usize)> = Vec::new();
        let mut lo = 0usize;
        for &k in &alignment {
            gaps.push((lo, k));
            lo = k + 1;
        }
        gaps.push((lo, target.len()));

        let mut rows = vec![0.0f32; targets.slot_count() * VOCAB_SIZE];
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for (slot, &(lo, hi)) in gaps.iter().enumerate() {
            let row = &mut rows[slot * VOCAB_SIZE..(slot + 1) * VOCAB_SIZE];
            if lo == hi {
                row[TOKEN_EOS_SLOT] = 1.0;
            } else {
                let center = lo + (hi - lo - 1) / 2;
                row[target[center]] = 1.0;
                chosen.push((center, target[center]));
            }
        }
        let outcome = greedy_parallel_insert(&canvas, &rows, Some(&targets));
        assert!(
            outcome.records.iter().all(|r| r.span_valid == Some(true)),
            "oracle insertions must be span-valid"
        );
        kept.extend(chosen);
        kept.sort_unstable_by_key(|&(i, _)| i);
        let letters: Vec<usize> = kept.iter().map(|&(_, t)| t).collect();
        assert_eq!(
            outcome.canvas.target_tokens(),
            letters.as_slice(),
            "canvas and tracked alignment diverged"
        );
    }
    unreachable!("loop returns or panics at the cap");
}

/// Corpus-level evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub exact_match_rate: f64,
    pub mean_iterations: f64,
    pub mean_insertions: f64,
    pub mean_deletions: f64,
}

/// Decode every example and score the corpus. Traces are returned in
/// dataset order; in ins-only mode the deletion parameters are never read.
pub fn evaluate(
    dataset: &[Example],
    insertion: &InsertionParams,
    deletion: &DeletionParams,
    options: &DecodeOptions,
) -> (EvalReport, Vec<DecodeTrace>) {
    assert!(!dataset.is_empty(), "evaluate on an empty dataset");
    let mut candidates = Vec::with_capacity(dataset.len());
    let mut references = Vec::with_capacity(dataset.len());
    let mut traces = Vec::with_capacity(dataset.len());
    let mut exact = 0usize;
    let mut iterations = 0usize;
    let mut insertions = 0usize;
    let mut deletions = 0usize;
    for example in dataset {
        let (out, trace) = decode(&example.source_ids(), insertion, deletion, options);
        let text: String = crate::insdel::Vocab::decode_word(&out);
        if text == example.target {
            exact += 1;
        }
        iterations += trace.iterations.len();
        insertions += trace.iterations.iter().map(|i| i.insertions.len()).sum::<usize>();
        deletions += trace.iterations.iter().map(|i| i.deletions.len()).sum::<usize>();
        candidates.push(text);
        references.push(example.target.clone());
        traces.push(trace);
    }
    let n = dataset.len() as f64;
    let report = EvalReport {
        bleu: bleu_corpus(&candidates, &references),
        exact_match_rate: exact as f64 / n,
        mean_iterations: iterations as f64 / n,
        mean_insertions: insertions as f64 / n,
        mean_deletions: deletions as f64 / n,
    };
    (report, traces)
}
