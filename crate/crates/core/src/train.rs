//! Mini-batch training of the response generator on the joint loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LossWeights, PeeModel, TrainingExample};
use crate::numkit::{adam_step, AdamConfig, AdamState, ParamStore, Tape, CLIP_NORM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
}

/// Mean per-example losses of one pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss: f64,
    pub nll: f64,
    pub p_match: f64,
    pub p_bows: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossSummary,
    pub valid: Option<LossSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    /// parameters of the epoch with the lowest validation loss, when a
    /// validation set was given
    pub best: Option<(usize, ParamStore)>,
}

/// Forward-only mean losses over a set of examples.
pub fn evaluate_loss(model: &PeeModel, examples: &[TrainingExample], w: &LossWeights) -> Result<LossSummary> {
    let mut sum = LossSummary::default();
    for ex in examples {
        let mut tape = Tape::new(&model.store);
        let p = model.loss(&mut tape, ex, w)?;
        sum.loss += tape.item(p.total);
        sum.nll += tape.item(p.nll);
        sum.p_match += tape.item(p.p_match);
        sum.p_bows += tape.item(p.p_bows);
    }
    let n = examples.len().max(1) as f64;
    Ok(LossSummary {
        loss: sum.loss / n,
        nll: sum.nll / n,
        p_match: sum.p_match / n,
        p_bows: sum.p_bows / n,
    })
}

/// Adam on shuffled mini-batches of the mean joint loss, with gradients
/// clipped to a global norm of [`CLIP_NORM`].
pub fn train_model<R: Rng + ?Sized>(
    model: &mut PeeModel,
    train: &[TrainingExample],
    valid: &[TrainingExample],
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Contract("no training examples".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let adam = AdamConfig {
        learning_rate: opts.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, &model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        let mut sum = LossSummary::default();
        for (batch_no, chunk) in order.chunks(opts.batch_size).enumerate() {
            let mut grads = {
                let mut tape = Tape::new(&model.store);
                let mut total = None;
                for &i in chunk {
                    let p = model.loss(&mut tape, &train[i], &opts.weights)?;
                    let parts = [p.total, p.nll, p.p_match, p.p_bows].map(|v| tape.item(v));
                    if parts.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!(
                            "epoch {epoch}, batch {batch_no}, example {i}: loss {}, nll {}, p_match {}, p_bows {}",
                            parts[0], parts[1], parts[2], parts[3]
                        )));
                    }
                    sum.loss += parts[0];
                    sum.nll += parts[1];
                    sum.p_match += parts[2];
                    sum.p_bows += parts[3];
                    total = Some(match total {
                        Some(acc) => tape.add(acc, p.total),
                        None => p.total,
                    });
                }
                let mean = tape.scale(total.expect("non-empty batch"), 1.0 / chunk.len() as f64);
                tape.backward(mean)?
            };
            grads.clip_global_norm(CLIP_NORM);
            adam_step(&mut model.store, &grads, &mut state)?;
        }
        let n = train.len() as f64;
        let train_summary = LossSummary {
            loss: sum.loss / n,
            nll: sum.nll / n,
            p_match: sum.p_match / n,
            p_bows: sum.p_bows / n,
        };
        let valid_summary = if valid.is_empty() {
            None
        } else {
            let v = evaluate_loss(model, valid, &opts.weights)?;
            if best.as_ref().is_none_or(|b| v.loss < b.1) {
                best = Some((epoch, v.loss, model.store.clone()));
            }
            Some(v)
        };
        log::info!(
            "epoch {epoch}: loss {:.5} nll {:.5} p_match {:.5} p_bows {:.5}",
            train_summary.loss,
            train_summary.nll,
            train_summary.p_match,
            train_summary.p_bows
        );
        epochs.push(EpochRecord {
            epoch,
            train: train_summary,
            valid: valid_summary,
        });
    }
    Ok(TrainOutcome {
        epochs,
        best: best.map(|(e, _, s)| (e, s)),
    })
}
