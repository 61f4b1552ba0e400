//! Per-tick comfort/efficiency/safety costs, follower weighting, and the
//! two aggregate objectives (lane-changer cost and target-flow cost).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective weights and normalizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub comfort: f64,
    pub efficiency: f64,
    pub safety: f64,
    /// Comfort normalizer, m/s^3.
    pub n_comfort: f64,
    /// Efficiency normalizer, m/s.
    pub n_efficiency: f64,
    /// Safety normalizer, 1/s.
    pub n_safety: f64,
    /// Guard against a zero denominator in the safety proximity term.
    pub v_small: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            comfort: 1.0 / 3.0,
            efficiency: 1.0 / 3.0,
            safety: 1.0 / 3.0,
            n_comfort: 8.0,
            n_efficiency: 25.0,
            n_safety: 0.5,
            v_small: 1e-6,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost_weights.comfort", self.comfort),
            ("cost_weights.efficiency", self.efficiency),
            ("cost_weights.safety", self.safety),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.comfort + self.efficiency + self.safety > 0.0) {
            return Err(Error::config("cost_weights", "weights must sum to > 0"));
        }
        for (name, v) in [
            ("cost_weights.n_comfort", self.n_comfort),
            ("cost_weights.n_efficiency", self.n_efficiency),
            ("cost_weights.n_safety", self.n_safety),
            ("cost_weights.v_small", self.v_small),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Raw (un-normalized) per-tick cost triple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickCost {
    pub comfort: f64,
    pub efficiency: f64,
    pub safety: f64,
}

/// Per-vehicle series of tick costs plus the resulting aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Lane-changer per-tick costs over [t_0, t_end].
    pub lc_series: Vec<TickCost>,
    /// Target-lane follower per-tick costs, one series per follower.
    pub follower_series: Vec<Vec<TickCost>>,
    /// Follower weights used in the target-flow aggregate.
    pub follower_weights: Vec<f64>,
    pub j_lc: f64,
    pub j_tf: f64,
    pub constraint_violation: f64,
}

impl CostBreakdown {
    /// Normalized, category-weighted total cost of one follower (unit vehicle
    /// weight). Used to identify the most affected vehicle.
    pub fn follower_total(&self, i: usize, w: &CostWeights) -> f64 {
        let series = &self.follower_series[i];
        let sum: TickCost = series.iter().fold(TickCost::default(), |acc, c| TickCost {
            comfort: acc.comfort + c.comfort,
            efficiency: acc.efficiency + c.efficiency,
            safety: acc.safety + c.safety,
        });
        w.comfort * sum.comfort / w.n_comfort
            + w.efficiency * sum.efficiency / w.n_efficiency
            + w.safety * sum.safety / w.n_safety
    }
}

/// Per-tick cost of one vehicle.
///
/// `closing_speed` is follower speed minus leader speed; `spacing` the gross
/// spacing to the leader. `leader` = None yields zero safety cost.
pub fn step_cost(
    jerk: f64,
    v: f64,
    v_desired: f64,
    leader: Option<(f64, f64)>, // (closing_speed, spacing)
    w: &CostWeights,
) -> TickCost {
    let safety = match leader {
        Some((closing, spacing)) => {
            let lambda = if closing >= 0.0 { 1.0 } else { 0.0 };
            lambda * closing * closing + 1.0 / (spacing * spacing + w.v_small)
        }
        None => 0.0,
    };
    TickCost {
        comfort: jerk.abs(),
        efficiency: (v - v_desired).abs(),
        safety,
    }
}

/// Follower weights from the t_0 snapshot: sigma_i = |dv| / sqrt(dx),
/// normalized to sum to one. All-zero sigmas fall back to uniform weights.
pub fn follower_weights(followers: &[(f64, f64)]) -> Result<Vec<f64>> {
    let m = followers.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut sigma = Vec::with_capacity(m);
    for (i, (dv, dx)) in followers.iter().enumerate() {
        if !(*dx > 0.0) {
            return Err(Error::DimensionMismatch(format!(
                "follower {i} has non-positive distance {dx} to the lane changer"
            )));
        }
        sigma.push(dv.abs() / dx.sqrt());
    }
    let total: f64 = sigma.iter().sum();
    if total > 0.0 {
        Ok(sigma.into_iter().map(|s| s / total).collect())
    } else {
        // All followers speed-matched: documented uniform fallback.
        Ok(vec![1.0 / m as f64; m])
    }
}

/// Aggregate cost of the lane-changing vehicle over its tick series.
pub fn aggregate_jlc(series: &[TickCost], w: &CostWeights) -> f64 {
    let (mut c, mut e, mut s) = (0.0, 0.0, 0.0);
    for tick in series {
        c += tick.comfort;
        e += tick.efficiency;
        s += tick.safety;
    }
    w.comfort * c / w.n_comfort + w.efficiency * e / w.n_efficiency + w.safety * s / w.n_safety
}

/// Aggregate cost of the target-lane followers: per-vehicle weighted sums per
/// category, normalized, then category-weighted.
pub fn aggregate_jtf(
    series: &[Vec<TickCost>],
    vehicle_weights: &[f64],
    w: &CostWeights,
) -> Result<f64> {
    if series.len() != vehicle_weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} follower series vs {} weights",
            series.len(),
            vehicle_weights.len()
        )));
    }
    let (mut c, mut e, mut s) = (0.0, 0.0, 0.0);
    for (veh, omega) in series.iter().zip(vehicle_weights.iter()) {
        for tick in veh {
            c += omega * tick.comfort;
            e += omega * tick.efficiency;
            s += omega * tick.safety;
        }
    }
    Ok(w.comfort * c / w.n_comfort + w.efficiency * e / w.n_efficiency + w.safety * s / w.n_safety)
}
