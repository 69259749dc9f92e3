//! Best validation loss (training conditions only) per learning rate.
//!
//! usage: lr_select <seeds> <lr>...

use colortraj::basis::BasisConfig;
use colortraj::dataset::{conditions_of, make_zero_shot_split, preprocess, EvalSelector};
use colortraj::eval::{train_model, ModelKind};
use colortraj::net::TrainConfig;
use colortraj::synth::{generate_dataset, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args[1].parse().unwrap();
    let lrs: Vec<f64> = args[2..].iter().map(|s| s.parse().unwrap()).collect();
    for world in [WorldConfig::cookie_default(), WorldConfig::apple_default()] {
        for kind in [ModelKind::Baseline, ModelKind::TabularOnly, ModelKind::MultiModal] {
            let mut line = format!("{:?} {:<12}", world.family, kind.as_str());
            for &lr in &lrs {
                let mut total = 0.0;
                for seed in 0..seeds {
                    let w = world.clone().with_seed(seed);
                    let recs = preprocess(&generate_dataset(&w).unwrap(), 15).unwrap();
                    let eval = EvalSelector::Conditions(vec![w.default_eval_condition()]);
                    let plan = make_zero_shot_split(&conditions_of(&recs), &eval, seed).unwrap();
                    let tc = TrainConfig {
                        learning_rate: lr,
                        seed,
                        ..TrainConfig::default()
                    };
                    match train_model(&recs, &plan, kind, &BasisConfig::default(), &tc) {
                        Ok((_, h)) => total += h.validation.iter().cloned().fold(f64::INFINITY, f64::min),
                        Err(_) => total = f64::INFINITY,
                    }
                }
                line += &format!("  lr {lr}: {:.4}", total / seeds as f64);
            }
            println!("{line}");
        }
    }
}
