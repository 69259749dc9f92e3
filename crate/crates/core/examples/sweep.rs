//! Runs the ablation over several seeds and prints the three orderings.
//!
//! usage: sweep <cookie|apple> <seeds> [learning_rate] [max_epochs]
//!
//! `TRAIT_SIGMA` and `PATIENCE` in the environment override the world's
//! hidden-trait spread and the early-stopping patience.

use std::time::Instant;

use colortraj::basis::BasisConfig;
use colortraj::dataset::{conditions_of, make_zero_shot_split, preprocess, EvalSelector};
use colortraj::eval::{run_ablation, AblationConfig, Target};
use colortraj::net::TrainConfig;
use colortraj::synth::{generate_dataset, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let family = args.get(1).map(String::as_str).unwrap_or("cookie");
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut tc = TrainConfig::default();
    if let Some(lr) = args.get(3).and_then(|s| s.parse().ok()) {
        tc.learning_rate = lr;
    }
    if let Some(e) = args.get(4).and_then(|s| s.parse().ok()) {
        tc.max_epochs = e;
    }
    let mut wins = [0; 4];
    for seed in 0..seeds {
        let start = Instant::now();
        let mut world = match family {
            "apple" => WorldConfig::apple_default(),
            _ => WorldConfig::cookie_default(),
        }
        .with_seed(seed);
        if let Ok(ts) = std::env::var("TRAIT_SIGMA") {
            world.trait_sigma = ts.parse().unwrap();
        }
        if let Ok(p) = std::env::var("PATIENCE") {
            tc.patience = p.parse().unwrap();
        }
        let eval = vec![world.default_eval_condition()];
        let recs = preprocess(&generate_dataset(&world).unwrap(), 15).unwrap();
        let plan = make_zero_shot_split(&conditions_of(&recs), &EvalSelector::Conditions(eval), seed).unwrap();
        let cfg = AblationConfig {
            basis: BasisConfig::default(),
            train: TrainConfig { seed, ..tc.clone() },
            target: Target::Smoothed,
        };
        let run = run_ablation(&recs, &plan, &cfg).unwrap();
        let r: Vec<f64> = run.report.rows.iter().map(|x| x.rmse).collect();
        let epochs: Vec<usize> = run.report.rows.iter().map(|x| x.epochs_run).collect();
        let w = [r[1] < r[0], r[3] < r[1], r[2] < r[1], r[4] < r[3]];
        for (a, b) in wins.iter_mut().zip(w) {
            *a += b as usize;
        }
        println!(
            "seed {seed}: {:.3} {:.3} {:.3} {:.3} {:.3} epochs {:?} {:?} {:.1}s",
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            epochs,
            w,
            start.elapsed().as_secs_f64()
        );
    }
    println!("wins (tab>lstm, mm>tab, sim tab, sim mm): {wins:?} of {seeds}");
}
