/// `R_t = Σ_{i≥t} γ^{i−t} r_i`, by the backward recursion `R_t = r_t + γ R_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Undiscounted sum, the headline episode metric.
pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}
