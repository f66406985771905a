//! Train every method on the synthetic blobs benchmark and print the
//! clean/robust/trade-off table plus transferability summaries.
//!
//! Run with `cargo run --release -p rte-core --example blobs_demo`.

use rte_core::analysis::{
    attacked_accuracy, clean_accuracy, tradeoff_metric, transferability_matrix, TransferMetric,
};
use rte_core::attacks::{AttackConfig, AttackObjective};
use rte_core::data::synth_blobs;
use rte_core::objectives::KlDirection;
use rte_core::snn::{LifConfig, SnnModel};
use rte_core::surrogate::SurrogateSpec;
use rte_core::training::{eval_attack, train, Method, TrainConfig};

fn main() {
    let epsilon = 0.05;
    let data_seeds = [1u64, 5, 6];
    let methods = [Method::Clean, Method::At, Method::Trades, Method::Rte];

    for &method in &methods {
        let mut clean_sum = 0.0;
        let mut robust_sum = 0.0;
        for (i, &data_seed) in data_seeds.iter().enumerate() {
            let seed = i as u64;
            let data = synth_blobs(1024, 2, 2, 0.12, data_seed).unwrap();
            let (train_set, eval_set) = data.split(512).unwrap();
            let mut model = SnnModel::init(
                &[2, 32, 32, 2],
                LifConfig::new(0.5, 0.5, 4).unwrap(),
                SurrogateSpec::default(),
                true,
                true,
                seed,
            )
            .unwrap();
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 0.1,
                momentum: 0.9,
                gamma: 6.0,
                attack: AttackConfig {
                    epsilon,
                    alpha: epsilon / 4.0,
                    steps: 7,
                    random_start: true,
                    objective: AttackObjective::CeOnAggregate,
                    box_lo: 0.0,
                    box_hi: 1.0,
                },
                seed,
                method,
                kl_epsilon: 1e-12,
                kl_direction: KlDirection::RefFirst,
                grad_clip: Some(5.0),
                cosine_decay: false,
            };
            let started = std::time::Instant::now();
            let report = train(&mut model, &train_set, &eval_set, &cfg).unwrap();
            let clean = clean_accuracy(&model, &eval_set).unwrap();
            let (robust, _) =
                attacked_accuracy(&model, &eval_set, &eval_attack(&cfg.attack), 77).unwrap();
            clean_sum += clean;
            robust_sum += robust;
            let tm = transferability_matrix(
                &model,
                &eval_set,
                epsilon,
                TransferMetric::Kl,
                7,
                256,
                seed,
            )
            .unwrap();
            println!(
                "{:6} seed {seed} | clean {clean:6.2} robust {robust:6.2} tradeoff {:7.2} | \
                 matrix diag {:.4} offdiag {:.4} | loss {:.3}->{:.3} | {:.1}s",
                method.name(),
                tradeoff_metric(clean, robust).unwrap(),
                tm.diagonal_mean(),
                tm.off_diagonal_mean(),
                report.epochs.first().unwrap().mean_loss,
                report.epochs.last().unwrap().mean_loss,
                started.elapsed().as_secs_f64(),
            );
        }
        println!(
            "{:6} mean   | clean {:6.2} robust {:6.2} tradeoff {:7.2}\n",
            method.name(),
            clean_sum / 3.0,
            robust_sum / 3.0,
            (clean_sum + robust_sum) / 3.0,
        );
    }
}
