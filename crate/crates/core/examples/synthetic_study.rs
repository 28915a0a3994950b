//! Pretrains, then runs the full and no-RR adversarial variants on a synthetic corpus and
//! reports dev MAP and the mean weight on false vs true negatives.
//!
//! Usage: synthetic_study [K] [M] [seeds] [config.toml] [qd-config.toml] [adv-config.toml]

use std::env;
use std::time::Instant;

use advcode::corpus::{prepare_corpus, PrepareOptions, SyntheticCorpus, SyntheticSpec};
use advcode::training::{pretrain_qc, pretrain_qd, train_adversarial, Ablation, QcData, QdData, TrainConfig};

fn main() -> advcode::Result<()> {
    env_logger::init();
    let args: Vec<String> = env::args().collect();
    let k = args.get(1).map_or(20, |s| s.parse().unwrap());
    let m = args.get(2).map_or(3, |s| s.parse().unwrap());
    let seeds = args.get(3).map_or(5, |s| s.parse().unwrap());
    let base = match args.get(4) {
        Some(p) => TrainConfig::load(p.as_ref())?,
        None => TrainConfig::default(),
    };
    let qd_base = match args.get(5) {
        Some(p) => TrainConfig::load(p.as_ref())?,
        None => base.clone(),
    };
    let adv_base = match args.get(6) {
        Some(p) => TrainConfig::load(p.as_ref())?,
        None => base.clone(),
    };
    for seed in 0..seeds {
        let t = Instant::now();
        let corpus = SyntheticCorpus::generate(SyntheticSpec {
            intents: k,
            per_intent: m,
            seed,
        })?;
        let prepared = prepare_corpus(
            &corpus.qc,
            &corpus.qd,
            PrepareOptions {
                seed,
                ..PrepareOptions::default()
            },
        )?;
        let cfg = TrainConfig { seed, ..base.clone() };
        let enc = prepared.encode(cfg.limits());
        let qd_pools = prepared.qd_pools.clone().unwrap();
        let qc_data = QcData {
            train: &enc.qc.train,
            dev: &enc.qc.dev,
            dev_pools: &prepared.qc_pools.dev,
        };
        let qd_data = QdData {
            train: &enc.qd.train,
            dev: &enc.qd.dev,
            dev_pools: &qd_pools.dev,
        };
        let dims = cfg.dims(prepared.vocab.nl.len(), prepared.vocab.code.len());
        let (qc, h_qc) = pretrain_qc(qc_data, dims, &cfg)?;
        let (qd, h_qd) = pretrain_qd(qd_data, &qc, &TrainConfig { seed, ..qd_base.clone() })?;
        let pre_map = h_qc.best().map_or(0.0, |r| r.dev_map);
        let mut line = format!(
            "seed {seed}: pre {pre_map:.4} ({} ep) qd {:.4} ({} ep)",
            h_qc.records.len(),
            h_qd.best().map_or(0.0, |r| r.dev_map),
            h_qd.records.len()
        );
        for ablation in [Ablation::Full, Ablation::NoRr] {
            let cfg = TrainConfig {
                ablation,
                record_samples: true,
                seed,
                ..adv_base.clone()
            };
            let run = train_adversarial(qc_data, Some(qd_data), qc.clone(), qd.clone(), &cfg)?;
            let best = run.history.best().map_or(0.0, |r| r.dev_map);
            let (mut fw, mut fn_, mut tw, mut tn) = (0.0, 0, 0.0, 0);
            if ablation == Ablation::Full {
                for s in run.samples.iter().filter(|s| s.epoch >= 1) {
                    if corpus.is_false_negative(s.query_id, s.chosen_id) {
                        fw += s.weight;
                        fn_ += 1;
                    } else {
                        tw += s.weight;
                        tn += 1;
                    }
                }
                line += &format!(
                    " | full {best:.4} ({} ep) w_fn {:.3} (n={fn_}) w_tn {:.3} gap {:.3}",
                    run.history.records.len(),
                    fw / fn_.max(1) as f64,
                    tw / tn.max(1) as f64,
                    tw / tn.max(1) as f64 - fw / fn_.max(1) as f64
                );
            } else {
                line += &format!(" | no_rr {best:.4} ({} ep)", run.history.records.len());
            }
        }
        println!("{line}  [{:.1}s]", t.elapsed().as_secs_f64());
    }
    Ok(())
}
