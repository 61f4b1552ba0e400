//! From-scratch NSGA-II with constraint-domination, crowding diversity, and
//! discrete 0.1-grid decision variables.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::KinematicBounds;

/// Minimum change unit of every decision variable.
pub const GRID_STEP: f64 = 0.1;

/// Snap a value to the 0.1 grid. Idempotent: values already on the grid map
/// to themselves bit-for-bit.
pub fn snap_to_grid(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Integer grid key of a genome; makes candidates hashable for the cache.
pub fn grid_key(genome: &[f64]) -> Vec<i64> {
    genome.iter().map(|x| (x * 10.0).round() as i64).collect()
}

/// One lane-change decision vector on the 0.1 grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcCandidate {
    /// Wait time before steering onset (t_start - t_0), s.
    pub t_wait: f64,
    /// Maneuver duration (t_end - t_start), s.
    pub t_dur: f64,
    /// Longitudinal displacement (x_end - x_start), m.
    pub x_disp: f64,
    /// Longitudinal end speed, m/s.
    pub v_end: f64,
    /// Longitudinal end acceleration, m/s^2.
    pub a_end: f64,
}

impl LcCandidate {
    pub fn to_genome(self) -> Vec<f64> {
        vec![self.t_wait, self.t_dur, self.x_disp, self.v_end, self.a_end]
    }

    pub fn from_genome(g: &[f64]) -> Self {
        assert_eq!(g.len(), 5, "lane-change genome has 5 variables");
        LcCandidate {
            t_wait: g[0],
            t_dur: g[1],
            x_disp: g[2],
            v_end: g[3],
            a_end: g[4],
        }
    }

    /// Decision-variable box bounds from the configured kinematic bounds.
    pub fn bounds(b: &KinematicBounds) -> Vec<(f64, f64)> {
        vec![
            (b.t_wait_min, b.t_wait_max),
            (b.t_lc_min, b.t_lc_max),
            (b.x_lc_min, b.x_lc_max),
            (b.v_end_min, b.v_end_max),
            (b.a_end_min, b.a_end_max),
        ]
    }

    /// Grid and box invariants.
    pub fn is_valid(&self, b: &KinematicBounds) -> bool {
        let bounds = Self::bounds(b);
        self.to_genome().iter().zip(bounds.iter()).all(|(x, (lo, hi))| {
            let on_grid = (x - snap_to_grid(*x)).abs() <= 1e-9;
            on_grid && *x >= lo - 1e-9 && *x <= hi + 1e-9
        })
    }
}

/// Objective pair plus total constraint violation of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objectives: [f64; 2],
    pub violation: f64,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }
}

/// Member of an evolving population.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Vec<f64>,
    pub eval: Evaluation,
    pub rank: usize,
    pub crowding: f64,
}

/// Feasible rank-0 set returned by the solver.
#[derive(Debug, Clone, Default)]
pub struct ParetoFront {
    pub members: Vec<Individual>,
    /// Index of the nearest-to-origin member, once selected.
    pub selected: Option<usize>,
}

/// Genetic-operator and loop configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsgaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-variable mutation probability.
    pub mutation_rate: f64,
    pub eta_crossover: f64,
    pub eta_mutation: f64,
    pub seed: u64,
}

impl Default for NsgaParams {
    fn default() -> Self {
        NsgaParams {
            population: 60,
            generations: 80,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            eta_crossover: 15.0,
            eta_mutation: 20.0,
            seed: 42,
        }
    }
}

impl NsgaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::config(
                "nsga_params.population",
                format!("must be even and >= 4, got {}", self.population),
            ));
        }
        if self.generations == 0 {
            return Err(Error::config("nsga_params.generations", "must be >= 1"));
        }
        for (name, p) in [
            ("nsga_params.crossover_rate", self.crossover_rate),
            ("nsga_params.mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, format!("must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Deb constraint-domination: feasible beats infeasible, infeasible compare
/// by violation, feasible compare by Pareto dominance.
pub fn constraint_dominates(a: &Evaluation, b: &Evaluation) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => {
            let le = a.objectives[0] <= b.objectives[0] && a.objectives[1] <= b.objectives[1];
            let lt = a.objectives[0] < b.objectives[0] || a.objectives[1] < b.objectives[1];
            le && lt
        }
    }
}

/// Front index for every population member under constraint-domination.
pub fn fast_nondominated_sort(population: &[Evaluation]) -> Result<Vec<usize>> {
    for e in population {
        if e.objectives.iter().any(|x| x.is_nan()) || e.violation.is_nan() {
            return Err(Error::NanObjective {
                candidate: e.objectives.to_vec(),
            });
        }
    }
    let n = population.len();
    let mut dominated_by: Vec<usize> = vec![0; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if constraint_dominates(&population[i], &population[j]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            } else if constraint_dominates(&population[j], &population[i]) {
                dominates[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut front = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            rank[i] = front;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        current = next;
        front += 1;
    }
    Ok(rank)
}

/// Crowding distance of each point of one mutually non-dominated front.
pub fn crowding_distance(front: &[[f64; 2]]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut distance = vec![0.0f64; n];
    for obj in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][obj].partial_cmp(&front[b][obj]).unwrap());
        let min = front[order[0]][obj];
        let max = front[order[n - 1]][obj];
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        if max > min {
            for w in 1..n - 1 {
                let i = order[w];
                if distance[i].is_finite() {
                    distance[i] += (front[order[w + 1]][obj] - front[order[w - 1]][obj]) / (max - min);
                }
            }
        }
    }
    distance
}

fn better(a: &Individual, b: &Individual) -> Option<bool> {
    if a.rank != b.rank {
        return Some(a.rank < b.rank);
    }
    if a.crowding != b.crowding {
        return Some(a.crowding > b.crowding);
    }
    None
}

/// Binary tournament by (rank, crowding) with an explicit rng tiebreak.
pub fn tournament_select<'a, R: Rng>(population: &'a [Individual], rng: &mut R) -> &'a Individual {
    assert!(!population.is_empty());
    let a = &population[rng.gen_range(0..population.len())];
    let b = &population[rng.gen_range(0..population.len())];
    match better(a, b) {
        Some(true) => a,
        Some(false) => b,
        None => {
            if rng.gen_bool(0.5) {
                a
            } else {
                b
            }
        }
    }
}

/// Simulated-binary crossover and polynomial mutation in continuous space,
/// snapped to the 0.1 grid and clamped to bounds.
pub fn vary<R: Rng>(
    parents: (&[f64], &[f64]),
    rates: &NsgaParams,
    bounds: &[(f64, f64)],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1: Vec<f64> = parents.0.to_vec();
    let mut c2: Vec<f64> = parents.1.to_vec();
    if rng.gen::<f64>() < rates.crossover_rate {
        for i in 0..c1.len() {
            if rng.gen::<f64>() < 0.5 && (c1[i] - c2[i]).abs() > 1e-12 {
                let u: f64 = rng.gen();
                let beta = if u <= 0.5 {
                    (2.0 * u).powf(1.0 / (rates.eta_crossover + 1.0))
                } else {
                    (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (rates.eta_crossover + 1.0))
                };
                let (y1, y2) = (c1[i], c2[i]);
                c1[i] = 0.5 * ((1.0 + beta) * y1 + (1.0 - beta) * y2);
                c2[i] = 0.5 * ((1.0 - beta) * y1 + (1.0 + beta) * y2);
            }
        }
    }
    for child in [&mut c1, &mut c2] {
        for (i, x) in child.iter_mut().enumerate() {
            if rng.gen::<f64>() < rates.mutation_rate {
                let (lo, hi) = bounds[i];
                let u: f64 = rng.gen();
                let delta = if u < 0.5 {
                    (2.0 * u).powf(1.0 / (rates.eta_mutation + 1.0)) - 1.0
                } else {
                    1.0 - (2.0 * (1.0 - u)).powf(1.0 / (rates.eta_mutation + 1.0))
                };
                *x += delta * (hi - lo);
            }
        }
        for (i, x) in child.iter_mut().enumerate() {
            let (lo, hi) = bounds[i];
            *x = snap_to_grid(x.clamp(lo, hi));
            // Snapping can step just past a non-grid-aligned bound.
            if *x < lo {
                *x += GRID_STEP;
            }
            if *x > hi {
                *x -= GRID_STEP;
            }
        }
    }
    (c1, c2)
}

fn assign_ranks_and_crowding(pop: &mut [Individual]) -> Result<()> {
    let evals: Vec<Evaluation> = pop.iter().map(|i| i.eval).collect();
    let ranks = fast_nondominated_sort(&evals)?;
    for (ind, r) in pop.iter_mut().zip(ranks.iter()) {
        ind.rank = *r;
    }
    let n_fronts = ranks.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    for front in 0..n_fronts {
        let members: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].rank == front).collect();
        let objs: Vec<[f64; 2]> = members.iter().map(|&i| pop[i].eval.objectives).collect();
        let dist = crowding_distance(&objs);
        for (&i, d) in members.iter().zip(dist.iter()) {
            pop[i].crowding = *d;
        }
    }
    Ok(())
}

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub front: ParetoFront,
    /// Smallest violation seen across all evaluations (0 when feasible
    /// candidates exist).
    pub best_violation: f64,
    /// Distinct candidates evaluated (cache size).
    pub evaluations: usize,
}

/// Run the elitist merge-sort-truncate loop.
///
/// The evaluator maps a grid genome to `(objectives, violation)`; calls are
/// cached by grid key, so duplicate candidates are evaluated once.
pub fn evolve<F>(
    mut evaluator: F,
    bounds: &[(f64, f64)],
    cfg: &NsgaParams,
) -> Result<EvolveOutcome>
where
    F: FnMut(&[f64]) -> Result<([f64; 2], f64)>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: HashMap<Vec<i64>, Evaluation> = HashMap::new();
    let mut best_violation = f64::INFINITY;

    let mut evaluate = |genome: &[f64],
                        cache: &mut HashMap<Vec<i64>, Evaluation>,
                        best_violation: &mut f64|
     -> Result<Evaluation> {
        let key = grid_key(genome);
        if let Some(e) = cache.get(&key) {
            return Ok(*e);
        }
        let (objectives, violation) = evaluator(genome).map_err(|e| Error::Evaluation {
            candidate: genome.to_vec(),
            source: Box::new(e),
        })?;
        if objectives.iter().any(|x| x.is_nan()) || violation.is_nan() {
            return Err(Error::NanObjective {
                candidate: genome.to_vec(),
            });
        }
        let eval = Evaluation {
            objectives,
            violation,
        };
        *best_violation = best_violation.min(violation);
        cache.insert(key, eval);
        Ok(eval)
    };

    // Uniform grid-random initialization within bounds.
    let mut population: Vec<Individual> = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let genome: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| {
                let steps = ((hi - lo) / GRID_STEP).floor() as u64;
                let k = rng.gen_range(0..=steps);
                snap_to_grid(lo + k as f64 * GRID_STEP).clamp(*lo, *hi)
            })
            .collect();
        let eval = evaluate(&genome, &mut cache, &mut best_violation)?;
        population.push(Individual {
            genome,
            eval,
            rank: 0,
            crowding: 0.0,
        });
    }
    assign_ranks_and_crowding(&mut population)?;

    for _ in 0..cfg.generations {
        let mut offspring: Vec<Individual> = Vec::with_capacity(cfg.population);
        while offspring.len() < cfg.population {
            let p1 = tournament_select(&population, &mut rng).genome.clone();
            let p2 = tournament_select(&population, &mut rng).genome.clone();
            let (c1, c2) = vary((&p1, &p2), cfg, bounds, &mut rng);
            for genome in [c1, c2] {
                if offspring.len() >= cfg.population {
                    break;
                }
                let eval = evaluate(&genome, &mut cache, &mut best_violation)?;
                offspring.push(Individual {
                    genome,
                    eval,
                    rank: 0,
                    crowding: 0.0,
                });
            }
        }
        let mut merged = population;
        merged.append(&mut offspring);
        assign_ranks_and_crowding(&mut merged)?;
        // Truncate by (rank asc, crowding desc), stable so the evolution
        // path is independent of the sort implementation details.
        let mut order: Vec<usize> = (0..merged.len()).collect();
        order.sort_by(|&a, &b| {
            merged[a]
                .rank
                .cmp(&merged[b].rank)
                .then(merged[b].crowding.partial_cmp(&merged[a].crowding).unwrap())
                .then(a.cmp(&b))
        });
        let keep: Vec<Individual> = order[..cfg.population]
            .iter()
            .map(|&i| merged[i].clone())
            .collect();
        population = keep;
        assign_ranks_and_crowding(&mut population)?;
    }

    // Feasible rank-0 set, deduplicated by grid identity.
    let mut seen = std::collections::HashSet::new();
    let mut members: Vec<Individual> = population
        .into_iter()
        .filter(|i| i.rank == 0 && i.eval.feasible())
        .filter(|i| seen.insert(grid_key(&i.genome)))
        .collect();
    members.sort_by(|a, b| {
        a.eval.objectives[0]
            .partial_cmp(&b.eval.objectives[0])
            .unwrap()
            .then(a.eval.objectives[1].partial_cmp(&b.eval.objectives[1]).unwrap())
    });
    Ok(EvolveOutcome {
        front: ParetoFront {
            members,
            selected: None,
        },
        best_violation: if best_violation.is_finite() {
            best_violation
        } else {
            f64::INFINITY
        },
        evaluations: cache.len(),
    })
}

/// Nearest-to-origin front member; ties broken by lower second then first
/// objective.
pub fn select_solution(front: &ParetoFront) -> Result<usize> {
    if front.members.is_empty() {
        return Err(Error::EmptyFront);
    }
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for (i, m) in front.members.iter().enumerate() {
        let [jlc, jtf] = m.eval.objectives;
        let key = ((jlc * jlc + jtf * jtf).sqrt(), jtf, jlc);
        if key < best_key {
            best_key = key;
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feasible(j1: f64, j2: f64) -> Evaluation {
        Evaluation {
            objectives: [j1, j2],
            violation: 0.0,
        }
    }

    fn infeasible(j1: f64, j2: f64, v: f64) -> Evaluation {
        Evaluation {
            objectives: [j1, j2],
            violation: v,
        }
    }

    #[test]
    fn single_point_is_rank_zero() {
        assert_eq!(fast_nondominated_sort(&[feasible(1.0, 2.0)]).unwrap(), vec![0]);
    }

    #[test]
    fn hand_ranked_population() {
        let pop = [
            feasible(1.0, 5.0),
            feasible(2.0, 3.0),
            feasible(3.0, 1.0),
            feasible(2.5, 4.0),
        ];
        assert_eq!(fast_nondominated_sort(&pop).unwrap(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn identical_points_are_mutually_nondominated() {
        let pop = [feasible(1.0, 1.0), feasible(1.0, 1.0)];
        assert_eq!(fast_nondominated_sort(&pop).unwrap(), vec![0, 0]);
    }

    #[test]
    fn feasible_dominates_infeasible() {
        let pop = [feasible(100.0, 100.0), infeasible(0.0, 0.0, 0.5)];
        assert_eq!(fast_nondominated_sort(&pop).unwrap(), vec![0, 1]);
    }

    #[test]
    fn infeasible_ordered_by_violation() {
        let pop = [infeasible(0.0, 0.0, 2.0), infeasible(5.0, 5.0, 1.0)];
        assert_eq!(fast_nondominated_sort(&pop).unwrap(), vec![1, 0]);
    }

    #[test]
    fn nan_objective_is_an_error() {
        assert!(fast_nondominated_sort(&[feasible(f64::NAN, 0.0)]).is_err());
    }

    /// Brute-force O(n^2) oracle: rank = number of iterations of "peel the
    /// non-dominated set".
    fn brute_force_ranks(pop: &[Evaluation]) -> Vec<usize> {
        let n = pop.len();
        let mut rank = vec![usize::MAX; n];
        let mut assigned = 0;
        let mut front = 0;
        while assigned < n {
            let mut this_front = Vec::new();
            for i in 0..n {
                if rank[i] != usize::MAX {
                    continue;
                }
                let dominated = (0..n).any(|j| {
                    j != i && rank[j] == usize::MAX && constraint_dominates(&pop[j], &pop[i])
                });
                if !dominated {
                    this_front.push(i);
                }
            }
            for &i in &this_front {
                rank[i] = front;
            }
            assigned += this_front.len();
            front += 1;
        }
        rank
    }

    #[test]
    fn sort_matches_brute_force_on_random_populations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..=60);
            let pop: Vec<Evaluation> = (0..n)
                .map(|_| {
                    let violation = if rng.gen_bool(0.3) {
                        rng.gen::<f64>() * 3.0
                    } else {
                        0.0
                    };
                    Evaluation {
                        objectives: [rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0],
                        violation,
                    }
                })
                .collect();
            assert_eq!(fast_nondominated_sort(&pop).unwrap(), brute_force_ranks(&pop));
        }
    }

    #[test]
    fn two_points_are_boundary() {
        assert_eq!(
            crowding_distance(&[[0.0, 1.0], [1.0, 0.0]]),
            vec![f64::INFINITY, f64::INFINITY]
        );
    }

    #[test]
    fn middle_point_distance() {
        let d = crowding_distance(&[[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_objective_range_contributes_zero() {
        let d = crowding_distance(&[[0.0, 1.0], [0.5, 1.0], [1.0, 1.0]]);
        assert!((d[1] - 1.0).abs() <= 1e-12, "only objective 0 contributes, got {}", d[1]);
    }

    fn individual(rank: usize, crowding: f64) -> Individual {
        Individual {
            genome: vec![0.0],
            eval: feasible(0.0, 0.0),
            rank,
            crowding,
        }
    }

    #[test]
    fn lower_rank_wins_tournament() {
        let pop = vec![individual(0, 1.0), individual(1, f64::INFINITY)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let winner = tournament_select(&pop, &mut rng);
            assert_eq!(winner.rank.min(1), winner.rank);
            if winner.rank == 1 {
                // Only possible when both contestants were the rank-1 member.
                continue;
            }
        }
    }

    #[test]
    fn higher_crowding_wins_at_equal_rank() {
        let a = individual(0, f64::INFINITY);
        let b = individual(0, 1.0);
        assert_eq!(better(&a, &b), Some(true));
        assert_eq!(better(&b, &a), Some(false));
    }

    #[test]
    fn full_tie_uses_rng_and_replays() {
        let pop = vec![individual(0, 1.0), individual(0, 1.0)];
        let picks: Vec<Vec<usize>> = (0..2)
            .map(|_| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                (0..20)
                    .map(|_| {
                        let w = tournament_select(&pop, &mut rng);
                        (w as *const Individual as usize - pop.as_ptr() as usize)
                            / std::mem::size_of::<Individual>()
                    })
                    .collect()
            })
            .collect();
        assert_eq!(picks[0], picks[1]);
    }

    #[test]
    fn zero_rate_variation_is_identity() {
        let cfg = NsgaParams {
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..NsgaParams::default()
        };
        let bounds = vec![(0.0, 10.0); 3];
        let p1 = vec![1.0, 2.5, 7.3];
        let p2 = vec![0.2, 9.9, 4.4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c1, c2) = vary((&p1, &p2), &cfg, &bounds, &mut rng);
        assert_eq!(c1, p1);
        assert_eq!(c2, p2);
    }

    #[test]
    fn children_are_on_grid_within_bounds() {
        let cfg = NsgaParams::default();
        let bounds = vec![(0.0, 10.0), (1.0, 16.0), (5.0, 480.0), (5.0, 30.0), (-2.0, 2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p1 = vec![5.0, 8.0, 100.0, 20.0, 0.0];
        let p2 = vec![1.0, 3.0, 250.0, 28.0, -1.5];
        for _ in 0..200 {
            let (c1, c2) = vary((&p1, &p2), &cfg, &bounds, &mut rng);
            for child in [&c1, &c2] {
                for (x, (lo, hi)) in child.iter().zip(bounds.iter()) {
                    assert!((x - snap_to_grid(*x)).abs() <= 1e-9, "off grid: {x}");
                    assert!(*x >= *lo - 1e-9 && *x <= *hi + 1e-9, "out of bounds: {x}");
                }
            }
        }
    }

    #[test]
    fn variation_is_deterministic() {
        let cfg = NsgaParams::default();
        let bounds = vec![(0.0, 10.0); 5];
        let p1 = vec![5.0, 8.0, 1.0, 2.0, 0.0];
        let p2 = vec![1.0, 3.0, 2.5, 8.0, 1.5];
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            vary((&p1, &p2), &cfg, &bounds, &mut rng)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn degenerate_single_optimum_collapses() {
        let target = [3.0, 7.0];
        let cfg = NsgaParams {
            population: 20,
            generations: 30,
            seed: 5,
            ..NsgaParams::default()
        };
        let bounds = vec![(0.0, 10.0), (0.0, 10.0)];
        let outcome = evolve(
            |g| {
                let d = ((g[0] - target[0]).powi(2) + (g[1] - target[1]).powi(2)).sqrt();
                Ok(([d, d], 0.0))
            },
            &bounds,
            &cfg,
        )
        .unwrap();
        assert!(!outcome.front.members.is_empty());
        for m in &outcome.front.members {
            assert_eq!(m.eval.objectives[0], 0.0);
            assert_eq!(m.genome, vec![3.0, 7.0]);
        }
    }

    #[test]
    fn evolve_is_deterministic() {
        let cfg = NsgaParams {
            population: 16,
            generations: 10,
            seed: 77,
            ..NsgaParams::default()
        };
        let bounds = vec![(0.0, 1.0); 4];
        let run = || {
            evolve(
                |g| {
                    let f1 = g[0];
                    let sum: f64 = g[1..].iter().sum();
                    let f2 = 1.0 + sum - f1.sqrt();
                    Ok(([f1, f2], 0.0))
                },
                &bounds,
                &cfg,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        let key = |o: &EvolveOutcome| -> Vec<(Vec<i64>, [f64; 2])> {
            o.front
                .members
                .iter()
                .map(|m| (grid_key(&m.genome), m.eval.objectives))
                .collect()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn front_members_are_mutually_nondominated_and_feasible() {
        let cfg = NsgaParams {
            population: 24,
            generations: 20,
            seed: 13,
            ..NsgaParams::default()
        };
        let bounds = vec![(0.0, 1.0); 3];
        let outcome = evolve(
            |g| {
                let f1 = g[0];
                let g_fn = 1.0 + 3.0 * (g[1] + g[2]);
                let f2 = g_fn * (1.0 - (f1 / g_fn).sqrt());
                let violation = if g[0] > 0.9 { g[0] - 0.9 } else { 0.0 };
                Ok(([f1, f2], violation))
            },
            &bounds,
            &cfg,
        )
        .unwrap();
        for a in &outcome.front.members {
            assert!(a.eval.feasible());
            for b in &outcome.front.members {
                if a.genome != b.genome {
                    assert!(!constraint_dominates(&a.eval, &b.eval) || !constraint_dominates(&b.eval, &a.eval));
                }
            }
        }
    }

    #[test]
    fn elitism_preserves_best_feasible_point() {
        // The feasible minimum of objective 0 can only improve over time.
        let cfg = NsgaParams {
            population: 16,
            generations: 1,
            seed: 3,
            ..NsgaParams::default()
        };
        let bounds = vec![(0.0, 1.0); 2];
        let eval = |g: &[f64]| -> Result<([f64; 2], f64)> { Ok(([g[0], 1.0 - g[0] + g[1]], 0.0)) };
        let short = evolve(eval, &bounds, &cfg).unwrap();
        let long = evolve(
            eval,
            &bounds,
            &NsgaParams {
                generations: 10,
                ..cfg
            },
        )
        .unwrap();
        let best = |o: &EvolveOutcome| {
            o.front
                .members
                .iter()
                .map(|m| m.eval.objectives[0])
                .fold(f64::INFINITY, f64::min)
        };
        assert!(best(&long) <= best(&short) + 1e-12);
    }

    #[test]
    fn select_solution_hand_case() {
        let front = ParetoFront {
            members: vec![
                Individual { genome: vec![], eval: feasible(3.0, 5.0), rank: 0, crowding: 0.0 },
                Individual { genome: vec![], eval: feasible(4.0, 3.0), rank: 0, crowding: 0.0 },
                Individual { genome: vec![], eval: feasible(6.0, 2.0), rank: 0, crowding: 0.0 },
            ],
            selected: None,
        };
        assert_eq!(select_solution(&front).unwrap(), 1);
    }

    #[test]
    fn select_solution_singleton_and_origin() {
        let single = ParetoFront {
            members: vec![Individual { genome: vec![], eval: feasible(2.0, 2.0), rank: 0, crowding: 0.0 }],
            selected: None,
        };
        assert_eq!(select_solution(&single).unwrap(), 0);
        let with_origin = ParetoFront {
            members: vec![
                Individual { genome: vec![], eval: feasible(1.0, 1.0), rank: 0, crowding: 0.0 },
                Individual { genome: vec![], eval: feasible(0.0, 0.0), rank: 0, crowding: 0.0 },
            ],
            selected: None,
        };
        assert_eq!(select_solution(&with_origin).unwrap(), 1);
    }

    #[test]
    fn select_solution_empty_front_errors() {
        assert!(select_solution(&ParetoFront::default()).is_err());
    }

    #[test]
    fn selected_is_never_dominated() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            // Build a random non-dominated staircase.
            let n = rng.gen_range(2..10);
            let mut j1: f64 = rng.gen::<f64>();
            let mut j2: f64 = 10.0;
            let mut members = Vec::new();
            for _ in 0..n {
                j1 += rng.gen::<f64>();
                j2 -= rng.gen::<f64>() * 0.8;
                members.push(Individual {
                    genome: vec![],
                    eval: feasible(j1, j2),
                    rank: 0,
                    crowding: 0.0,
                });
            }
            let front = ParetoFront { members, selected: None };
            let s = select_solution(&front).unwrap();
            for (i, m) in front.members.iter().enumerate() {
                if i != s {
                    assert!(!constraint_dominates(&m.eval, &front.members[s].eval));
                }
            }
        }
    }
}
