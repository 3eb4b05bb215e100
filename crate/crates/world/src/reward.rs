use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r_arrival: f64,
    pub r_collision: f64,
    pub alpha_goal: f64,
    pub alpha_avoid: f64,
    /// Meters.
    pub d_safe: f64,
    /// Meters.
    pub arrival_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_arrival: 50.0,
            r_collision: -10.0,
            alpha_goal: 3.0,
            alpha_avoid: -0.05,
            d_safe: 5.0,
            arrival_threshold: 0.5,
        }
    }
}

/// The goal and collision parts of a step reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub goal: f64,
    pub collision: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.goal + self.collision
    }
}

/// Goal term: arrival bonus inside the threshold (unless crashed), otherwise
/// progress `alpha_goal * (d_prev - d_t)`. Collision term: crash penalty, or
/// `alpha_avoid * max(d_safe - d_min, 0)`. An infinite `d_min` (nothing in
/// the world) counts as `d_safe`.
pub fn reward_terms(
    d_t: f64,
    d_prev: f64,
    d_min: f64,
    crashed: bool,
    arrived: bool,
    cfg: &RewardConfig,
) -> RewardTerms {
    let goal = if arrived || (!crashed && d_t < cfg.arrival_threshold) {
        cfg.r_arrival
    } else {
        cfg.alpha_goal * (d_prev - d_t)
    };
    let d_min = if d_min.is_finite() { d_min } else { cfg.d_safe };
    let collision = if crashed {
        cfg.r_collision
    } else {
        cfg.alpha_avoid * (cfg.d_safe - d_min).max(0.0)
    };
    RewardTerms { goal, collision }
}

pub fn reward(d_t: f64, d_prev: f64, d_min: f64, crashed: bool, arrived: bool, cfg: &RewardConfig) -> f64 {
    reward_terms(d_t, d_prev, d_min, crashed, arrived, cfg).total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        let c = RewardConfig::default();
        assert_eq!(reward_terms(0.4, 0.6, 10.0, false, true, &c).goal, 50.0);
        assert_eq!(reward_terms(3.0, 3.5, 5.0, false, false, &c).collision, 0.0);
        assert_eq!(reward_terms(3.0, 3.5, 3.0, false, false, &c).collision, -0.05 * 2.0);
        assert_eq!(reward_terms(3.0, 3.5, 0.1, true, false, &c).collision, -10.0);
        assert_eq!(reward_terms(3.0, 3.5, f64::INFINITY, false, false, &c).collision, 0.0);
    }

    #[test]
    fn approaching_is_rewarded() {
        let c = RewardConfig::default();
        assert!(reward(2.0, 2.1, 9.0, false, false, &c) > 0.0);
        assert!(reward(2.1, 2.0, 9.0, false, false, &c) < 0.0);
    }
}
