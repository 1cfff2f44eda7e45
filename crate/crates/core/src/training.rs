//! Joint training: sample a partial hypothesis, train the insertion model
//! toward its slot targets, insert the argmax tokens without
//! backpropagating through the sampling, and train the deletion model on
//! the insertion phase's own mistakes.

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::insdel::{
    deletion_loss, deletion_probs, deletion_targets, greedy_parallel_insert, insertion_logits,
    insertion_loss, Canvas, DeletionParams, InsertionParams, SlotTargets, SlotWeighting,
    TapedDeletion, TapedInsertion, Vocab, TOKEN_EOS_SLOT,
};
use crate::rng::{sample_sorted_subset, shuffle_stream, stream, STREAM_INIT_DELETION, STREAM_INIT_INSERTION, STREAM_TRAIN};
use crate::tasks::Example;
use crate::transformer::{Mode, ModelConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub p_adv: f32,
    pub tau: f32,
    pub uniform_weights: bool,
    pub del_loss_weight: f32,
    pub adam: AdamConfig,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200_000,
            batch_size: 32,
            p_adv: 0.0,
            tau: 1.0,
            uniform_weights: false,
            del_loss_weight: 1.0,
            adam: AdamConfig::default(),
            seed: 1,
            checkpoint_every: 10_000,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!((0.0..=1.0).contains(&self.p_adv), "p_adv must lie in [0,1]");
        assert!(self.tau > 0.0, "tau must be positive");
        assert!(self.batch_size > 0, "batch_size must be positive");
        assert!(self.del_loss_weight >= 0.0, "del_loss_weight must be nonnegative");
    }

    pub fn weighting(&self) -> SlotWeighting {
        if self.uniform_weights {
            SlotWeighting::Uniform
        } else {
            SlotWeighting::BalancedTree { tau: self.tau }
        }
    }
}

/// Everything a training run mutates: the two disjoint parameter sets,
/// their optimizer states, the step counter, and the training RNG.
pub struct TrainState {
    pub model_config: ModelConfig,
    pub insertion: InsertionParams,
    pub deletion: DeletionParams,
    pub adam_insertion: AdamState,
    pub adam_deletion: AdamState,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn init(model_config: ModelConfig, train_config: &TrainConfig) -> Self {
        train_config.validate();
        let mut ins_rng = stream(train_config.seed, STREAM_INIT_INSERTION);
        let mut del_rng = stream(train_config.seed, STREAM_INIT_DELETION);
        TrainState {
            model_config,
            insertion: InsertionParams::init(model_config, &mut ins_rng),
            deletion: DeletionParams::init(model_config, &mut del_rng),
            adam_insertion: AdamState::new(train_config.adam),
            adam_deletion: AdamState::new(train_config.adam),
            step: 0,
            rng: stream(train_config.seed, STREAM_TRAIN),
        }
    }
}

/// Per-step metrics, one JSON object per line in the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub ins_loss: f32,
    pub del_loss: f32,
    pub insertions: usize,
    pub invalid_insertions: usize,
    pub del_signal_fraction: f32,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}: insertion {ins}, deletion {del}")]
    NonFinite { step: u64, ins: f32, del: f32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Draw a generation step `i` uniform on `[1, n]`, keep a uniformly random
/// `(i-1)`-subset of target positions, and build the canvas from the source
/// plus the kept tokens in target order.
pub fn sample_partial(example: &Example, rng: &mut ChaCha8Rng) -> Canvas {
    let target = example.target_ids();
    let n = target.len();
    assert!(n >= 1, "example target must be nonempty");
    let i = rng.gen_range(1..=n);
    let kept_indices = sample_sorted_subset(rng, n, i - 1);
    let kept: Vec<(usize, usize)> = kept_indices.into_iter().map(|k| (k, target[k])).collect();
    Canvas::with_alignment(&example.source_ids(), &kept)
}

/// Mask the logits the argmax sampler sees so that every nonempty-span slot
/// is forced to pick the wrong letter it is most confident about: span
/// members, the stop symbol, and structural tokens all go to -inf. The
/// insertion loss is always computed on unmasked logits.
pub fn adversarial_mask(logit_values: &mut [f32], targets: &SlotTargets) {
    let v = crate::insdel::VOCAB_SIZE;
    assert_eq!(logit_values.len(), targets.slot_count() * v, "adversarial_mask shape mismatch");
    for slot in 0..targets.slot_count() {
        let span = targets.span(slot);
        if span.is_empty() {
            continue;
        }
        let row = &mut logit_values[slot * v..(slot + 1) * v];
        for &tok in span {
            row[tok] = f32::NEG_INFINITY;
        }
        row[TOKEN_EOS_SLOT] = f32::NEG_INFINITY;
        for tok in 0..v {
            if Vocab::is_structural(tok) {
                row[tok] = f32::NEG_INFINITY;
            }
        }
    }
}

/// One optimizer step over a batch. Per example: sample a partial canvas,
/// insertion forward and loss, greedy (optionally adversarial) insertion
/// with the chosen token ids detached from the tape, deletion forward on
/// the post-insertion canvas, on-policy deletion labels and loss. Gradients
/// of the summed loss are averaged over the batch, then each parameter set
/// takes one Adam step.
pub fn train_step(
    batch: &[Example],
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<StepMetrics, TrainError> {
    assert!(!batch.is_empty(), "train_step on an empty batch");
    let inv_b = 1.0 / batch.len() as f32;
    let weighting = config.weighting();

    let mut ins_loss_sum = 0.0f32;
    let mut del_loss_sum = 0.0f32;
    let mut insertions = 0usize;
    let mut invalid = 0usize;
    let mut signal_examples = 0usize;

    for example in batch {
        let canvas = sample_partial(example, &mut state.rng);
        let targets =
            SlotTargets::build(canvas.alignment().unwrap(), &example.target_ids(), weighting);

        let mut tape = Tape::new();
        let ins = TapedInsertion::register(&mut tape, &state.insertion);
        let logits = insertion_logits(
            &mut tape,
            &ins,
            &canvas,
            &mut Mode::Train { rng: &mut state.rng },
        );
        let ins_loss = insertion_loss(&mut tape, logits, &targets);

        // detach: the sampler sees values, not tape nodes
        let mut logit_values = tape.value(logits).to_vec();
        let adversarial = state.rng.gen_range(0.0f32..1.0) < config.p_adv;
        if adversarial {
            adversarial_mask(&mut logit_values, &targets);
        }
        let outcome = greedy_parallel_insert(&canvas, &logit_values, Some(&targets));

        let del = TapedDeletion::register(&mut tape, &state.deletion);
        let probs = deletion_probs(
            &mut tape,
            &del,
            &outcome.canvas,
            &mut Mode::Train { rng: &mut state.rng },
        );
        let dt = deletion_targets(&outcome.records, &outcome.canvas);
        let del_loss = deletion_loss(&mut tape, probs, &dt);

        let ins_value = tape.scalar_value(ins_loss);
        let del_value = tape.scalar_value(del_loss);
        if !ins_value.is_finite() || !del_value.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step + 1,
                ins: ins_value,
                del: del_value,
            });
        }

        let weighted_del = tape.scale(del_loss, config.del_loss_weight);
        let total = tape.add(ins_loss, weighted_del);
        let grads = tape.backward_seeded(total, inv_b);
        ins.export_grads(&grads, &mut state.insertion);
        del.export_grads(&grads, &mut state.deletion);

        ins_loss_sum += ins_value;
        del_loss_sum += del_value;
        insertions += outcome.records.len();
        invalid += outcome.records.iter().filter(|r| r.span_valid == Some(false)).count();
        if dt.any_positive() {
            signal_examples += 1;
        }
    }

    state.adam_insertion.step(&mut state.insertion.tensors_mut());
    state.adam_deletion.step(&mut state.deletion.tensors_mut());
    state.step += 1;

    Ok(StepMetrics {
        step: state.step,
        ins_loss: ins_loss_sum * inv_b,
        del_loss: del_loss_sum * inv_b,
        insertions,
        invalid_insertions: invalid,
        del_signal_fraction: signal_examples as f32 * inv_b,
    })
}

/// Cycle the dataset in shuffled epochs until `config.steps`, emitting
/// metrics every `eval_every` steps and checkpoints every
/// `checkpoint_every` steps plus a final checkpoint (the last step's; no
/// model selection). Epoch permutations are pure functions of
/// `(seed, epoch)`, so a resumed run rebuilds them without replay.
pub fn train_loop(
    state: &mut TrainState,
    dataset: &[Example],
    config: &TrainConfig,
    mut on_metrics: impl FnMut(&StepMetrics) -> Result<(), TrainError>,
    mut on_checkpoint: impl FnMut(&TrainState) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.validate();
    let batch_size = config.batch_size.min(dataset.len());
    let steps_per_epoch = (dataset.len() / batch_size) as u64;
    let mut current_epoch: Option<(u64, Vec<usize>)> = None;

    while state.step < config.steps {
        let epoch = state.step / steps_per_epoch;
        if current_epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..dataset.len()).collect();
            let mut rng = shuffle_stream(config.seed, epoch);
            // Fisher-Yates, hand-rolled for a pinned draw sequence
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            current_epoch = Some((epoch, perm));
        }
        let perm = &current_epoch.as_ref().unwrap().1;
        let batch_idx = (state.step % steps_per_epoch) as usize;
        let batch: Vec<Example> = perm[batch_idx * batch_size..(batch_idx + 1) * batch_size]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect();

        let metrics = train_step(&batch, state, config)?;
        if metrics.step % config.eval_every == 0 {
            on_metrics(&metrics)?;
        }
        if config.checkpoint_every > 0 && metrics.step % config.checkpoint_every == 0 {
            on_checkpoint(state)?;
        }
    }
    on_checkpoint(state)?;
    Ok(())
}
