//! Macroscopic measurement over a space-time rectangle (Edie's generalized
//! definitions) plus gridded speed data for heatmaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim_engine::SimulationTrace;

/// Space-time measurement rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdieRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl EdieRegion {
    pub fn new(x_min: f64, x_max: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(x_max > x_min) {
            return Err(Error::config("region.x_max", "must exceed x_min"));
        }
        if !(t_max > t_min) {
            return Err(Error::config("region.t_max", "must exceed t_min"));
        }
        Ok(EdieRegion { x_min, x_max, t_min, t_max })
    }

    /// Rectangle area in m*s.
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.t_max - self.t_min)
    }
}

/// Aggregate flow measurements over one rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdieMetrics {
    /// Flow q, veh/h.
    pub flow: f64,
    /// Space-mean speed, m/s.
    pub mean_speed: f64,
    /// Density k, veh/km.
    pub density: f64,
    /// Total distance travelled inside the rectangle, m.
    pub total_distance: f64,
    /// Total time spent inside the rectangle, s.
    pub total_time: f64,
    /// Rectangle area, m*s.
    pub area: f64,
}

/// Metrics from externally supplied totals (useful for cross-checking
/// published tables without re-simulating).
pub fn edie_from_totals(total_distance: f64, total_time: f64, area: f64) -> EdieMetrics {
    EdieMetrics {
        flow: total_distance / area * 3600.0,
        mean_speed: total_distance / total_time,
        density: total_time / area * 1000.0,
        total_distance,
        total_time,
        area,
    }
}

/// Per-vehicle contribution to the rectangle totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRegionRow {
    pub vehicle_id: usize,
    /// Distance travelled inside the rectangle, m.
    pub distance: f64,
    /// Time spent inside the rectangle, s.
    pub time: f64,
}

/// Clip one constant-velocity segment (t0,x0) -> (t1,x1) to the rectangle.
/// Returns (distance, time) inside, both zero if the segment misses it.
fn clip_segment(region: &EdieRegion, t0: f64, x0: f64, t1: f64, x1: f64) -> (f64, f64) {
    debug_assert!(t1 > t0);
    // Clock window first.
    let mut a = t0.max(region.t_min);
    let mut b = t1.min(region.t_max);
    if b <= a {
        return (0.0, 0.0);
    }
    let v = (x1 - x0) / (t1 - t0);
    // Then the spatial window: x(t) = x0 + v (t - t0) must lie in [x_min, x_max].
    if v.abs() < 1e-12 {
        if x0 < region.x_min || x0 > region.x_max {
            return (0.0, 0.0);
        }
    } else {
        let t_at = |x: f64| t0 + (x - x0) / v;
        let (t_lo, t_hi) = if v > 0.0 {
            (t_at(region.x_min), t_at(region.x_max))
        } else {
            (t_at(region.x_max), t_at(region.x_min))
        };
        a = a.max(t_lo);
        b = b.min(t_hi);
        if b <= a {
            return (0.0, 0.0);
        }
    }
    let dt = b - a;
    (v.abs() * dt, dt)
}

fn check_coverage(trace: &SimulationTrace, region: &EdieRegion) -> Result<()> {
    let (start, end) = match (trace.ticks.first(), trace.ticks.last()) {
        (Some(f), Some(l)) if trace.ticks.len() >= 2 => (f.t, l.t),
        _ => (f64::NAN, f64::NAN),
    };
    if !(start <= region.t_min && end >= region.t_max) {
        return Err(Error::RegionOutsideTrace {
            t_min: region.t_min,
            t_max: region.t_max,
            trace_start: start,
            trace_end: end,
        });
    }
    Ok(())
}

/// Per-vehicle clipped distance and time; vehicles that never enter the
/// rectangle are excluded. Inter-tick motion is treated as constant-velocity.
pub fn per_vehicle_region_table(
    trace: &SimulationTrace,
    region: &EdieRegion,
) -> Result<Vec<VehicleRegionRow>> {
    check_coverage(trace, region)?;
    let mut totals: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for w in trace.ticks.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        for s in &prev.states {
            let Some(sn) = next.states.iter().find(|n| n.id == s.id) else {
                continue;
            };
            let (d, t) = clip_segment(region, prev.t, s.x, next.t, sn.x);
            if t > 0.0 {
                let e = totals.entry(s.id).or_insert((0.0, 0.0));
                e.0 += d;
                e.1 += t;
            }
        }
    }
    Ok(totals
        .into_iter()
        .map(|(vehicle_id, (distance, time))| VehicleRegionRow { vehicle_id, distance, time })
        .collect())
}

/// Edie's generalized flow, space-mean speed, and density over the rectangle.
pub fn edie_metrics(trace: &SimulationTrace, region: &EdieRegion) -> Result<EdieMetrics> {
    let rows = per_vehicle_region_table(trace, region)?;
    let total_distance: f64 = rows.iter().map(|r| r.distance).sum();
    let total_time: f64 = rows.iter().map(|r| r.time).sum();
    Ok(edie_from_totals(total_distance, total_time, region.area()))
}

/// Mean-speed grid over (x, t) cells; `None` where no sample fell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub x_origin: f64,
    pub t_origin: f64,
    pub dx: f64,
    pub dt: f64,
    pub nx: usize,
    pub nt: usize,
    /// Row-major [t_index][x_index].
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatmapGrid {
    /// Rows of (t_center, x_center, speed) for occupied cells only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,speed\n");
        for (ti, row) in self.cells.iter().enumerate() {
            for (xi, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    let t = self.t_origin + (ti as f64 + 0.5) * self.dt;
                    let x = self.x_origin + (xi as f64 + 0.5) * self.dx;
                    out.push_str(&format!("{t:.3},{x:.3},{v:.6}\n"));
                }
            }
        }
        out
    }
}

/// Bucket every instantaneous (t, x, v) sample into cells of size (dx, dt)
/// and average per cell.
pub fn heatmap_grid(trace: &SimulationTrace, dx: f64, dt: f64) -> Result<HeatmapGrid> {
    if !(dx > 0.0) {
        return Err(Error::config("heatmap.dx", "must be positive"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("heatmap.dt", "must be positive"));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for tick in &trace.ticks {
        for s in &tick.states {
            x_min = x_min.min(s.x);
            x_max = x_max.max(s.x);
        }
        t_min = t_min.min(tick.t);
        t_max = t_max.max(tick.t);
    }
    if !x_min.is_finite() {
        return Ok(HeatmapGrid {
            x_origin: 0.0,
            t_origin: 0.0,
            dx,
            dt,
            nx: 0,
            nt: 0,
            cells: Vec::new(),
        });
    }
    let nx = ((x_max - x_min) / dx).floor() as usize + 1;
    let nt = ((t_max - t_min) / dt).floor() as usize + 1;
    let mut sums = vec![vec![(0.0f64, 0usize); nx]; nt];
    for tick in &trace.ticks {
        let ti = (((tick.t - t_min) / dt).floor() as usize).min(nt - 1);
        for s in &tick.states {
            let xi = (((s.x - x_min) / dx).floor() as usize).min(nx - 1);
            let cell = &mut sums[ti][xi];
            cell.0 += s.v;
            cell.1 += 1;
        }
    }
    let cells = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(sum, n)| if n > 0 { Some(sum / n as f64) } else { None })
                .collect()
        })
        .collect();
    Ok(HeatmapGrid {
        x_origin: x_min,
        t_origin: t_min,
        dx,
        dt,
        nx,
        nt,
        cells,
    })
}
