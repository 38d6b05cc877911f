//! Trains a small GREAT policy on XASY TSP and reports the greedy gap to
//! Held-Karp after every epoch.
//!
//! Usage: cargo run --release --example desk_train -- [nb|nf] [lr] [epochs] [seed]

use great_core::baselines::{held_karp_tsp, nearest_neighbor};
use great_core::encoder::{GreatConfig, Variant};
use great_core::eval::{augmented_solve, evaluate_dataset};
use great_core::training::{dataset, train, TrainConfig};

fn main() -> Result<(), great_core::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = match args.first().map(String::as_str) {
        Some("nf") => Variant::Nf,
        _ => Variant::Nb,
    };
    let lr = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = TrainConfig {
        encoder: GreatConfig { variant, ..GreatConfig::default() },
        epochs,
        instances_per_epoch: 1_000,
        batch_size: 32,
        validation_size: 100,
        lr,
        seed,
        ..TrainConfig::default()
    };
    let held_out = dataset(cfg.kind, cfg.distribution, cfg.n, 200, 0xD35C)?;
    let optimum: Vec<f64> = held_out.iter().map(|i| held_karp_tsp(i).map(|s| s.objective)).collect::<Result<_, _>>()?;
    let mean_opt = optimum.iter().sum::<f64>() / optimum.len() as f64;
    let nn = evaluate_dataset(&held_out, |i| Ok(nearest_neighbor(i)?), |i| Ok(held_karp_tsp(i)?))?;
    println!("nearest neighbor: {}", nn.summary().trim_end());
    let started = std::time::Instant::now();
    let out = train(&cfg, |r| {
        let val_len = -r.validation.unwrap_or(f64::NAN);
        println!(
            "epoch {:>3}  loss {:+.5}  train reward {:.4}  val length {:.4}  {:.0} inst/s  [{:.0}s]",
            r.epoch, r.mean_loss, r.mean_reward, val_len, r.instances_per_sec, started.elapsed().as_secs_f64()
        );
    })?;
    let policy = out.best.policy;
    let report = evaluate_dataset(&held_out, |i| augmented_solve(&out.best.params, &policy, i, 1), |i| Ok(held_karp_tsp(i)?))?;
    println!("held-out mean optimum {mean_opt:.4}; {}", report.summary().trim_end());
    Ok(())
}
