//! Multi-task baseline: QC and QD batches alternate, and the QD task trains the QC model's
//! question encoder directly. The code encoder only ever sees QC gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::epoch::{EpochStats, PairwiseTask};
use super::steps::triplet_step;
use super::{check_nonempty, fit, qc_eval, qc_task, qd_task, stream_rng, QcData, TrainConfig, TrainHistory};
use super::{STREAM_INIT, STREAM_TRAIN};
use crate::corpus::EncodedQd;
use crate::error::{Error, Result};
use crate::model::{ModelDims, Parameters, QCModel, QDModel};
use crate::optim::Optimizer;

struct Mtl {
    qc_opt: Optimizer,
    /// Steps the shared question encoder on QD batches only.
    qd_opt: Optimizer,
    /// Holds the shared question encoder while a QD batch runs.
    shell: QDModel,
}

enum Batch<'b> {
    Qc(&'b [usize]),
    Qd(&'b [usize]),
}

impl Mtl {
    fn qc_batch(
        &mut self,
        model: &mut QCModel,
        task: &PairwiseTask<'_>,
        batch: &[usize],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let mut grads = model.zeros_like();
        let mut loss = 0.0;
        for &i in batch {
            let j = task.other(i, rng.random_range(0..task.others(i)));
            let ex = task.examples[i];
            let out = triplet_step(
                &*model,
                ex.anchor,
                ex.positive,
                task.examples[j].positive,
                cfg.margin,
                1.0,
                Some(rng),
                &mut grads,
            )?;
            loss += out.loss;
        }
        grads.scale(1.0 / batch.len() as f64);
        self.qc_opt.step(model, &mut grads);
        Ok(loss)
    }

    fn qd_batch(
        &mut self,
        model: &mut QCModel,
        task: &PairwiseTask<'_>,
        batch: &[usize],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<()> {
        std::mem::swap(&mut self.shell.question_encoder, &mut model.question_encoder);
        let result = (|| {
            let mut grads = self.shell.zeros_like();
            for &i in batch {
                let j = task.other(i, rng.random_range(0..task.others(i)));
                let ex = task.examples[i];
                triplet_step(
                    &self.shell,
                    ex.anchor,
                    ex.positive,
                    task.examples[j].positive,
                    cfg.margin,
                    1.0,
                    Some(&mut *rng),
                    &mut grads,
                )?;
            }
            grads.scale(1.0 / batch.len() as f64);
            self.qd_opt.step(&mut self.shell, &mut grads);
            Ok(())
        })();
        std::mem::swap(&mut self.shell.question_encoder, &mut model.question_encoder);
        result
    }
}

/// Trains a fresh QC model with the QD task as an auxiliary objective on the shared question
/// encoder. Checkpoints are selected on QC dev MAP; the reported loss is the QC loss.
pub fn train_mtl_dcs(
    qc_data: QcData<'_>,
    qd_train: &[EncodedQd],
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<(QCModel, TrainHistory)> {
    cfg.validate()?;
    check_nonempty("QC training", qc_data.train.len())?;
    let model = QCModel::new(dims, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let qc = qc_task(qc_data.train);
    let qd = qd_task(qd_train);
    let mut state = Mtl {
        qc_opt: Optimizer::new(cfg.optimizer_settings()),
        qd_opt: Optimizer::new(cfg.optimizer_settings()),
        shell: QDModel {
            question_encoder: model.question_encoder.zeros_like(),
        },
    };
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let eval = qc_eval(qc_data);
    fit(
        model,
        cfg,
        "mtl-dcs",
        |model, epoch| {
            let mut qc_order: Vec<usize> = (0..qc.len()).filter(|&i| qc.others(i) > 0).collect();
            let mut qd_order: Vec<usize> = (0..qd.len()).filter(|&i| qd.others(i) > 0).collect();
            qc_order.shuffle(&mut rng);
            qd_order.shuffle(&mut rng);
            let mut qc_batches = qc_order.chunks(cfg.batch_size);
            let mut qd_batches = qd_order.chunks(cfg.batch_size);
            let mut loss = 0.0;
            loop {
                let next = [qc_batches.next().map(Batch::Qc), qd_batches.next().map(Batch::Qd)];
                if next.iter().all(Option::is_none) {
                    break;
                }
                for batch in next.into_iter().flatten() {
                    match batch {
                        Batch::Qc(b) => loss += state.qc_batch(model, &qc, b, cfg, &mut rng)?,
                        Batch::Qd(b) => state.qd_batch(model, &qd, b, cfg, &mut rng)?,
                    }
                }
            }
            if !loss.is_finite() || !model.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite QC loss or parameters".into(),
                });
            }
            Ok(EpochStats {
                mean_loss: loss / qc_order.len().max(1) as f64,
                mean_weight: 1.0,
            })
        },
        Some(&eval),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qd_batches_touch_only_the_question_encoder() {
        let cfg = TrainConfig {
            embedding_dim: 4,
            encoder_out_dim: 6,
            ..TrainConfig::default()
        };
        let mut model = QCModel::new(cfg.dims(10, 10), &mut stream_rng(1, STREAM_INIT)).unwrap();
        let pairs: Vec<EncodedQd> = (0..4)
            .map(|i| EncodedQd {
                id: i,
                question_a: vec![2 + i as usize, 3],
                question_b: vec![5 + i as usize],
            })
            .collect();
        let task = qd_task(&pairs);
        let mut mtl = Mtl {
            qc_opt: Optimizer::new(cfg.optimizer_settings()),
            qd_opt: Optimizer::new(cfg.optimizer_settings()),
            shell: QDModel {
                question_encoder: model.question_encoder.zeros_like(),
            },
        };
        let before = model.clone();
        let batch: Vec<usize> = (0..task.len()).collect();
        mtl.qd_batch(&mut model, &task, &batch, &cfg, &mut stream_rng(1, STREAM_TRAIN))
            .unwrap();
        assert_ne!(model.question_encoder, before.question_encoder);
        assert_eq!(model.code_encoder, before.code_encoder);
    }
}
