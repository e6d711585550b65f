//! Mini-batch training with the spec's optimizer, loss, and regularizers,
//! plus the k-fold cross-validation driver.

use super::{HeadKind, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::eval::{confusion, kfold, weighted_metrics, MetricsReport};
use crate::tensor::{early_stop_check, optimizer_step, EarlyStop, Mode, OptimizerState, Tape};
use crate::textprep::{Label, LabeledDocument, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Loss/accuracy pair per epoch, on both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

fn one_hot_targets(labels: &[Label]) -> Vec<Vec<f64>> {
    labels.iter().map(|l| l.one_hot()).collect()
}

fn batch_scores<R: rand::Rng>(
    model: &Model,
    tape: &mut Tape,
    bound: &[crate::tensor::Var],
    docs: &[&LabeledDocument],
    prepared: &[Vec<u32>],
    mode: Mode,
    rng: &mut R,
) -> Result<crate::tensor::Var> {
    let mut rows = Vec::with_capacity(docs.len());
    for ids in prepared {
        rows.push(model.forward_scores(tape, bound, ids, mode, rng)?);
    }
    tape.stack_rows(&rows)
}

fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    scores: crate::tensor::Var,
    targets: &[Vec<f64>],
) -> Result<crate::tensor::Var> {
    match model.head_kind() {
        HeadKind::Softmax => tape.cross_entropy(scores, targets),
        HeadKind::CapsuleNorms => {
            let m = model.spec().margin;
            tape.margin_loss(scores, targets, m.m_plus, m.m_minus, m.lambda)
        }
    }
}

fn count_correct(scores: &[f64], labels: &[Label]) -> usize {
    scores
        .chunks(NUM_CLASSES)
        .zip(labels)
        .filter(|(row, label)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            best == label.index()
        })
        .count()
}

/// Average loss and accuracy of a document set in eval mode.
pub fn evaluate(model: &Model, docs: &[LabeledDocument]) -> Result<(f64, f64)> {
    if docs.is_empty() {
        return Err(Error::Training("cannot evaluate an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in docs.chunks(model.spec().batch_size.max(1)) {
        let prepared: Vec<Vec<u32>> = chunk
            .iter()
            .map(|d| model.prepare_ids(&d.token_ids))
            .collect::<Result<_>>()?;
        let refs: Vec<&LabeledDocument> = chunk.iter().collect();
        let labels: Vec<Label> = chunk.iter().map(|d| d.label).collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let scores = batch_scores(model, &mut tape, &bound, &refs, &prepared, Mode::Eval, &mut rng)?;
        let loss = batch_loss(model, &mut tape, scores, &one_hot_targets(&labels))?;
        loss_sum += tape.values(loss)[0] * chunk.len() as f64;
        correct += count_correct(tape.values(scores), &labels);
    }
    Ok((loss_sum / docs.len() as f64, correct as f64 / docs.len() as f64))
}

/// Predicted labels for a document set, in order.
pub fn predict_labels(model: &Model, docs: &[LabeledDocument]) -> Result<Vec<Label>> {
    docs.iter()
        .map(|d| model.predict(&d.token_ids).map(|(l, _)| l))
        .collect()
}

/// Train in shuffled mini-batches for up to `epochs` epochs, recording
/// per-epoch train/validation loss and accuracy. Early stopping follows the
/// spec's patience rule when `spec.early_stopping` is set. Without a
/// validation set the train figures are recorded in the val slots.
pub fn train_model(
    model: &mut Model,
    train_docs: &[LabeledDocument],
    val_docs: &[LabeledDocument],
    epochs: usize,
    seed: u64,
) -> Result<History> {
    if train_docs.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let prepared: Vec<Vec<u32>> = train_docs
        .iter()
        .map(|d| model.prepare_ids(&d.token_ids))
        .collect::<Result<_>>()?;

    let trainable: Vec<usize> = model
        .params()
        .items()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(i, _)| i)
        .collect();
    let sizes: Vec<usize> = trainable
        .iter()
        .map(|&i| model.params().items()[i].tensor.numel())
        .collect();
    let mut opt = OptimizerState::new(model.spec().optimizer.clone(), &sizes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_size = model.spec().batch_size.max(1);
    let mut history = History::default();
    let mut val_losses = Vec::with_capacity(epochs);

    for _epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train_docs.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(batch_size) {
            let docs: Vec<&LabeledDocument> = batch.iter().map(|&i| &train_docs[i]).collect();
            let ids: Vec<Vec<u32>> = batch.iter().map(|&i| prepared[i].clone()).collect();
            let labels: Vec<Label> = docs.iter().map(|d| d.label).collect();

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let scores =
                batch_scores(model, &mut tape, &bound, &docs, &ids, Mode::Train, &mut rng)?;
            let loss = batch_loss(model, &mut tape, scores, &one_hot_targets(&labels))?;
            loss_sum += tape.values(loss)[0] * docs.len() as f64;
            correct += count_correct(tape.values(scores), &labels);
            tape.backward(loss)?;

            let reg = model.spec().regularizer.clone();
            let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(trainable.len());
            for (&idx, _) in trainable.iter().zip(&sizes) {
                let g = tape.grad(bound[idx]).map(|g| g.to_vec());
                grads.push(g);
            }
            let params = model.params_mut().items_mut();
            for (slot, &idx) in trainable.iter().enumerate() {
                if let Some(g) = grads[slot].as_mut() {
                    reg.apply_penalty_gradient(params[idx].tensor.values(), g);
                }
            }
            let mut param_slices: Vec<&mut [f64]> = Vec::with_capacity(trainable.len());
            // Split borrows: trainable indices are strictly increasing.
            let mut rest = params;
            let mut consumed = 0usize;
            for &idx in &trainable {
                let (_, tail) = rest.split_at_mut(idx - consumed);
                let (item, tail) = tail.split_at_mut(1);
                param_slices.push(item[0].tensor.values_mut());
                rest = tail;
                consumed = idx + 1;
            }
            let grad_refs: Vec<Option<&[f64]>> =
                grads.iter().map(|g| g.as_deref()).collect();
            optimizer_step(&mut opt, &mut param_slices, &grad_refs)?;
        }

        let train_loss = loss_sum / train_docs.len() as f64;
        let train_accuracy = correct as f64 / train_docs.len() as f64;
        let (val_loss, val_accuracy) = if val_docs.is_empty() {
            (train_loss, train_accuracy)
        } else {
            evaluate(model, val_docs)?
        };
        history.epochs.push(EpochStats {
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        val_losses.push(val_loss);

        if model.spec().early_stopping
            && early_stop_check(&val_losses, model.spec().regularizer.early_stop_patience)
                == EarlyStop::Stop
        {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

/// Everything a cross-validation run produces.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fold_reports: Vec<MetricsReport>,
    pub aggregate: MetricsReport,
    pub histories: Vec<History>,
}

/// Train and score one independent model per fold. `build_model` receives a
/// fold-specific seed; folds run on up to `jobs` parallel threads (fold
/// results are ordered and deterministic either way for a fixed seed).
pub fn cross_validate<F>(
    docs: &[LabeledDocument],
    k: usize,
    stratified: bool,
    seed: u64,
    epochs: usize,
    jobs: usize,
    build_model: F,
) -> Result<CvOutcome>
where
    F: Fn(u64) -> Result<Model> + Sync,
{
    let labels: Vec<Label> = docs.iter().map(|d| d.label).collect();
    let plan = kfold(&labels, k, stratified, seed)?;
    let jobs = jobs.max(1);

    let run_fold = |fold: usize| -> Result<(MetricsReport, History)> {
        let train_idx = plan.train_indices(fold);
        let train: Vec<LabeledDocument> = train_idx.iter().map(|&i| docs[i].clone()).collect();
        let val: Vec<LabeledDocument> =
            plan.folds[fold].iter().map(|&i| docs[i].clone()).collect();
        let fold_seed = seed.wrapping_add(1 + fold as u64);
        let mut model = build_model(fold_seed)?;
        let history = train_model(&mut model, &train, &val, epochs, fold_seed)?;
        let preds = predict_labels(&model, &val)?;
        let actuals: Vec<Label> = val.iter().map(|d| d.label).collect();
        let report = weighted_metrics(&confusion(&preds, &actuals)?)?;
        Ok((report, history))
    };

    let mut results: Vec<Option<Result<(MetricsReport, History)>>> =
        (0..k).map(|_| None).collect();
    if jobs == 1 {
        for (fold, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_fold(fold));
        }
    } else {
        std::thread::scope(|scope| {
            let mut pending = Vec::new();
            for (fold, slot) in results.iter_mut().enumerate() {
                pending.push(scope.spawn(move || *slot = Some(run_fold(fold))));
                if pending.len() == jobs {
                    for h in pending.drain(..) {
                        h.join().expect("fold thread");
                    }
                }
            }
            for h in pending {
                h.join().expect("fold thread");
            }
        });
    }

    let mut fold_reports = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    for (fold, slot) in results.into_iter().enumerate() {
        match slot.expect("fold executed") {
            Ok((report, history)) => {
                fold_reports.push(report);
                histories.push(history);
            }
            Err(e) => {
                return Err(Error::Training(format!("fold {fold} failed: {e}")));
            }
        }
    }
    let aggregate = MetricsReport::mean(&fold_reports)?;
    Ok(CvOutcome {
        fold_reports,
        aggregate,
        histories,
    })
}

/// Convenience for specs: ensure the model spec and document lengths agree.
pub fn validate_spec_for_docs(spec: &ModelSpec, docs: &[LabeledDocument]) -> Result<()> {
    spec.validate()?;
    if docs.is_empty() {
        return Err(Error::Training("empty document set".into()));
    }
    Ok(())
}
