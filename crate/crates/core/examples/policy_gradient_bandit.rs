//! Checks the REINFORCE gradient on a three-action softmax bandit against
//! the exact gradient, then climbs the expected reward.

use eventsynth::rl::{bandit_ascent, gradient_estimator_check};

fn main() {
    let logits = [0.2, -0.1, 0.4];
    let rewards = [1.0, 0.0, -1.0];
    let check = gradient_estimator_check(&logits, &rewards, 100_000, 3);
    println!("analytic          {:?}", check.analytic);
    println!("finite difference {:?}  max deviation {:.2e}", check.finite_difference, check.finite_difference_deviation);
    println!("monte carlo       {:?}  max deviation {:.2e}", check.monte_carlo, check.monte_carlo_deviation);
    let curve = bandit_ascent(&logits, &rewards, 0.1, 50);
    println!("expected reward: start {:.4}, after 10 steps {:.4}, after 50 steps {:.4}", curve[0], curve[10], curve[50]);
}
