// Scratch harness for hyperparameter bring-up. Not part of the deliverable.
use advlab::envs::EnvConfig;
use advlab::training::{train_dqn, TrainConfig};
use std::time::Instant;

fn main() {
    let cfg = EnvConfig::minipong();
    let variants = [
        ("lr03-g90-ue2", 0.03, 0.90, 2, 40_000),
        ("lr10-g90-ue2", 0.10, 0.90, 2, 40_000),
        ("lr03-g95-ue4", 0.03, 0.95, 4, 40_000),
    ];
    for (name, lr, gamma, ue, decay) in variants {
        let config = TrainConfig {
            iterations: 25,
            steps_per_iteration: 3000,
            learning_rate: lr,
            gamma,
            update_every: ue,
            epsilon_decay_steps: decay,
            replay_capacity: 8000,
            ..TrainConfig::dqn(0)
        };
        let t0 = Instant::now();
        match train_dqn(&cfg, &config) {
            Ok(outcome) => {
                println!(
                    "{name}: {:.0?} score {:.2} curve {:?}",
                    t0.elapsed(),
                    outcome.curve.score(),
                    outcome
                        .curve
                        .mean_returns()
                        .iter()
                        .map(|v| *v as i64)
                        .collect::<Vec<_>>()
                );
            }
            Err(e) => println!("{name}: FAILED {e}"),
        }
    }
}
