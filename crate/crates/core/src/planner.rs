//! Alternating optimization driver: interleaves the resource-allocation and
//! trajectory subproblems, plus the upper-bound companion run, comparison
//! baselines, the approximation-parameter sweep, and IRS placement search.

use crate::bounds::{mode_partition, ModePartition};
use crate::geometry::Vec3;
use crate::ra_solver::{
    solve_subproblem1, user_rates, Allocation, RaOptions, RateModel,
};
use crate::scenario::Scenario;
use crate::trajectory_solver::{solve_subproblem2, TrajOptions, Trajectory};
use crate::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// Relative sum-rate improvement threshold across alternation rounds.
    pub epsilon: f64,
    pub iter_max: usize,
    pub ra: RaOptions,
    pub traj: TrajOptions,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            epsilon: 1e-3,
            iter_max: 20,
            ra: RaOptions::default(),
            traj: TrajOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub allocation: Allocation,
    /// Aggregate lower-bound objective in bit/s/Hz (summed over subcarriers).
    pub lb_sum_rate: f64,
    /// Aggregate divided by the number of subcarriers (figures-facing value).
    pub normalized_sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    /// Objective after each half-round: odd entries follow the resource
    /// allocation pass, even entries follow the trajectory pass (1-based).
    pub iteration_trace: Vec<f64>,
    /// All minimum rates met at the original (unscaled) targets.
    pub feasible: bool,
}

impl Solution {
    fn finish(
        trajectory: Trajectory,
        allocation: Allocation,
        per_user_rates: Vec<f64>,
        iteration_trace: Vec<f64>,
        scenario: &Scenario,
    ) -> Solution {
        let lb_sum_rate: f64 = per_user_rates.iter().sum();
        let feasible = per_user_rates
            .iter()
            .zip(&scenario.users)
            .all(|(r, u)| *r >= u.r_min - 1e-6);
        Solution {
            trajectory,
            allocation,
            lb_sum_rate,
            normalized_sum_rate: lb_sum_rate / scenario.ofdm.n_f as f64,
            per_user_rates,
            iteration_trace,
            feasible,
        }
    }
}

/// Largest minimum-rate scale in (0, 1] at which the straight-line resource
/// allocation is feasible; 1.0 when no relaxation is needed.
fn bootstrap_scale(
    traj: &Trajectory,
    partition: &ModePartition,
    scenario: &Scenario,
    ra: &RaOptions,
) -> Result<f64> {
    let mut scale = 1.0f64;
    for _ in 0..24 {
        let trial = scaled_r_min(scenario, scale);
        match solve_subproblem1(traj, partition, &trial, ra) {
            Ok(_) => return Ok(scale),
            Err(Error::Infeasible(_)) => scale *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(
        "minimum rates unreachable even after relaxing them by 2^-24".into(),
    ))
}

fn scaled_r_min(scenario: &Scenario, scale: f64) -> Scenario {
    let mut s = scenario.clone();
    for u in &mut s.users {
        u.r_min *= scale;
    }
    s
}

fn alternate_inner(
    scenario: &Scenario,
    alpha: f64,
    opts: &PlanOptions,
    upper: bool,
) -> Result<Solution> {
    scenario.validate().map_err(|e| e)?;
    let partition = mode_partition(alpha, scenario.ofdm.n_f)?;
    let ra_opts = RaOptions { upper, ..opts.ra.clone() };
    let traj_opts = TrajOptions { upper, ..opts.traj.clone() };

    let mut traj = Trajectory::straight_line(scenario);
    let scale0 = bootstrap_scale(&traj, &partition, scenario, &ra_opts)?;
    let mut active_scale = scale0;

    let mut trace: Vec<f64> = Vec::new();
    let mut best_alloc: Option<Allocation> = None;
    let mut best_rates: Vec<f64> = vec![0.0; scenario.n_users()];

    for round in 1..=opts.iter_max {
        // restore relaxed minimum rates geometrically over the first rounds
        let target_scale = if scale0 >= 1.0 {
            1.0
        } else {
            scale0.powf(((5.0 - round as f64) / 5.0).max(0.0))
        };
        let scaled = scaled_r_min(scenario, target_scale.max(active_scale.min(1.0)));

        let incumbent: f64 = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        match solve_subproblem1(&traj, &partition, &scaled, &ra_opts) {
            Ok(sol) => {
                active_scale = target_scale;
                if sol.sum_rate >= incumbent {
                    best_alloc = Some(sol.allocation);
                    trace.push(sol.sum_rate);
                } else {
                    // keep the incumbent allocation: its rate on the current
                    // trajectory is exactly the last trace entry
                    trace.push(incumbent);
                }
            }
            Err(Error::Infeasible(msg)) => {
                if best_alloc.is_none() {
                    return Err(Error::Infeasible(msg));
                }
                trace.push(incumbent); // tightened targets failed: keep incumbent
            }
            Err(e) => return Err(e),
        }

        let alloc = best_alloc.as_ref().unwrap();
        let t_sol = solve_subproblem2(alloc, &traj, &partition, scenario, &traj_opts)?;
        traj = t_sol.trajectory;
        best_rates = t_sol.per_user_rates;
        let after_traj = t_sol.sum_rate.max(*trace.last().unwrap());
        trace.push(after_traj);

        if round > 1 && active_scale >= 1.0 {
            let prev = trace[trace.len() - 3];
            if after_traj - prev <= opts.epsilon * prev.abs().max(1e-12) {
                break;
            }
        }
        if opts.epsilon.is_infinite() {
            break;
        }
    }

    let allocation = best_alloc.unwrap();
    Ok(Solution::finish(traj, allocation, best_rates, trace, scenario))
}

/// Joint trajectory, IRS scheduling, and resource allocation by alternating
/// the two subproblems from the straight-line initialization.
pub fn alternate(scenario: &Scenario, alpha: f64, opts: &PlanOptions) -> Result<Solution> {
    alternate_inner(scenario, alpha, opts, false)
}

/// Same pipeline on the upper-bound gain staircase; used for gap diagnostics.
pub fn solve_upper_bound(scenario: &Scenario, alpha: f64, opts: &PlanOptions) -> Result<Solution> {
    alternate_inner(scenario, alpha, opts, true)
}

/// One-dimensional search over the approximation parameter; returns the
/// argmax of the lower-bound sum rate plus both bound curves.
pub fn sweep_alpha(
    scenario: &Scenario,
    grid: &[f64],
    opts: &PlanOptions,
) -> Result<(f64, Vec<(f64, f64, f64)>)> {
    let curve: Result<Vec<(f64, f64, f64)>> = grid
        .par_iter()
        .map(|&alpha| {
            let lb = alternate(scenario, alpha, opts)?.lb_sum_rate;
            let ub = solve_upper_bound(scenario, alpha, opts)?.lb_sum_rate;
            Ok((alpha, lb, ub))
        })
        .collect();
    let curve = curve?;
    let best = curve
        .iter()
        .cloned()
        .fold((f64::NAN, f64::NEG_INFINITY, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    Ok((best.0, curve))
}

/// Baseline 1: resource allocation only, on the fixed straight line.
pub fn baseline_straight_line(scenario: &Scenario, alpha: f64) -> Result<Solution> {
    let opts = PlanOptions { epsilon: f64::INFINITY, ..Default::default() };
    alternate(scenario, alpha, &opts)
}

/// Baseline 2: full alternation with the IRS disabled. The approximation
/// parameter is irrelevant without a reflected path; a fixed interior value
/// is used.
pub fn baseline_no_irs(scenario: &Scenario, opts: &PlanOptions) -> Result<Solution> {
    alternate(&scenario.without_irs(), 0.14, opts)
}

/// TDMA comparison: one user per slot across all subcarriers (exclusive
/// scheduling strengthened to slot granularity), assigned round-robin, with
/// per-slot water-filling on the straight line.
pub fn baseline_tdma(scenario: &Scenario, alpha: f64) -> Result<Solution> {
    let partition = mode_partition(alpha, scenario.ofdm.n_f)?;
    let traj = Trajectory::straight_line(scenario);
    let model = RateModel::build(traj.slot_positions(), &partition, scenario, false)?;
    let kn = scenario.n_users();
    let mut assign = crate::ra_solver::Assignment {
        irs_user: (0..model.n_slots).map(|n| n % kn).collect(),
        user: vec![None; model.n_slots * model.n_f],
    };
    for n in 0..model.n_slots {
        for i in 1..=model.n_f {
            assign.user[n * model.n_f + (i - 1)] = Some(n % kn);
        }
    }
    let nu = vec![0.0; kn];
    let (allocation, _) = crate::ra_solver::fill_powers(&assign, &nu, &model)?;
    let rates = user_rates(&allocation, &model);
    let trace = vec![rates.iter().sum()];
    Ok(Solution::finish(traj, allocation, rates, trace, scenario))
}

/// Exhaustive IRS placement over candidate locations; each candidate gets a
/// full alternation run.
pub fn irs_placement_search(
    scenario: &Scenario,
    candidates: &[Vec3],
    alpha: f64,
    opts: &PlanOptions,
) -> Result<(Vec3, Vec<(Vec3, f64)>)> {
    let map: Result<Vec<(Vec3, f64)>> = candidates
        .par_iter()
        .map(|&loc| {
            let mut s = scenario.clone();
            s.irs.location = loc;
            Ok((loc, alternate(&s, alpha, opts)?.lb_sum_rate))
        })
        .collect();
    let map = map?;
    let best = map
        .iter()
        .cloned()
        .fold((Vec3::new(f64::NAN, 0.0, 0.0), f64::NEG_INFINITY), |acc, c| {
            if c.1 > acc.1 {
                c
            } else {
                acc
            }
        });
    Ok((best.0, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fast_opts() -> PlanOptions {
        PlanOptions {
            iter_max: 6,
            ra: RaOptions { max_iters: 120, ..Default::default() },
            traj: TrajOptions { max_iters: 8, pga_iters: 60, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn infinite_epsilon_is_ra_only_pass() {
        let s = Scenario::randomized(21);
        let sol = baseline_straight_line(&s, 0.14).unwrap();
        assert_eq!(sol.iteration_trace.len(), 2);
        // trajectory pass ran once but from a single RA round; the returned
        // trajectory may differ from the straight line, the trace may not dip
        assert!(sol.iteration_trace[1] >= sol.iteration_trace[0] - 1e-9);
    }

    #[test]
    fn single_user_single_slot_matches_waterfill() {
        let mut s = Scenario::randomized(22).without_irs();
        s.users.truncate(1);
        s.users[0].r_min = 0.0;
        s.flight.n_slots = 1;
        s.flight.dt = 1000.0;
        let sol = alternate(&s, 0.125, &fast_opts()).unwrap();
        // closed-form single-user water-filling at the slot geometry
        let part = mode_partition(0.125, s.ofdm.n_f).unwrap();
        let model =
            RateModel::build(sol.trajectory.slot_positions(), &part, &s, false).unwrap();
        let gains: Vec<f64> = (1..=s.ofdm.n_f).map(|i| model.gain(0, 0, i, 0)).collect();
        // without the IRS the gain is flat: uniform power split is optimal
        let g = gains[0];
        let p = s.ofdm.p_max / s.ofdm.n_f as f64;
        let oracle = s.ofdm.n_f as f64 * (1.0 + p * g / s.ofdm.sigma2()).log2();
        assert_relative_eq!(sol.lb_sum_rate, oracle, max_relative = 1e-6);
    }

    #[test]
    fn desk_default_trace_monotone() {
        let s = Scenario::randomized(23);
        let sol = alternate(&s, 0.14, &fast_opts()).unwrap();
        assert!(sol.feasible);
        for w in sol.iteration_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace dipped: {:?}", sol.iteration_trace);
        }
        assert!(sol.iteration_trace.len() <= 2 * fast_opts().iter_max);
        assert_relative_eq!(
            sol.normalized_sum_rate,
            sol.lb_sum_rate / s.ofdm.n_f as f64,
            max_relative = 1e-12
        );
    }

    #[test]
    fn proposed_beats_baselines() {
        let s = Scenario::randomized(24);
        let opts = fast_opts();
        let proposed = alternate(&s, 0.14, &opts).unwrap().lb_sum_rate;
        let b1 = baseline_straight_line(&s, 0.14).unwrap().lb_sum_rate;
        let b2 = baseline_no_irs(&s, &opts).unwrap().lb_sum_rate;
        assert!(proposed >= b1 - 1e-9, "proposed {proposed} b1 {b1}");
        // the lower bound scores non-assisted users at the destructive trough,
        // below the plain direct gain the no-IRS run uses, so when the IRS has
        // little geometric leverage the bound (not the true rate) can dip
        // marginally below baseline 2
        assert!(proposed >= 0.995 * b2, "proposed {proposed} b2 {b2}");
        assert!(b1 >= 0.0);
    }

    #[test]
    fn no_irs_baseline_equals_zero_amplitude_run() {
        let s = Scenario::randomized(25);
        let opts = fast_opts();
        let b2 = baseline_no_irs(&s, &opts).unwrap();
        let zero = alternate(&s.without_irs(), 0.14, &opts).unwrap();
        assert_relative_eq!(b2.lb_sum_rate, zero.lb_sum_rate, max_relative = 1e-9);
    }

    #[test]
    fn tdma_feasible_and_dominated() {
        let mut s = Scenario::randomized(26);
        for u in &mut s.users {
            u.r_min = 0.1;
        }
        let tdma = baseline_tdma(&s, 0.14).unwrap();
        assert!(tdma.feasible);
        let proposed = alternate(&s, 0.14, &fast_opts()).unwrap();
        assert!(proposed.lb_sum_rate >= tdma.lb_sum_rate - 1e-9);
        // slot exclusivity: every served subcarrier belongs to the slot user
        let a = &tdma.allocation;
        for n in 0..a.n_slots {
            for i in 1..=a.n_f {
                if let Some(k) = a.assigned(i, n) {
                    assert_eq!(k, a.irs_user[n]);
                }
            }
        }
    }

    #[test]
    fn sweep_singleton_returns_it() {
        let s = Scenario::randomized(27);
        let (best, curve) = sweep_alpha(&s, &[0.1], &fast_opts()).unwrap();
        assert_eq!(best, 0.1);
        assert_eq!(curve.len(), 1);
        assert!(curve[0].2 >= curve[0].1 - 1e-9, "ub below lb");
    }

    #[test]
    fn placement_single_candidate_returned() {
        let s = Scenario::randomized(28);
        let c = Vec3::new(0.0, 250.0, 30.0);
        let (best, map) = irs_placement_search(&s, &[c], 0.14, &fast_opts()).unwrap();
        assert_eq!(best, c);
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn bootstrap_relaxes_then_reports_infeasible_flag_or_recovers() {
        // targets around the achievable edge: bootstrap must not panic and
        // the outcome must be flagged coherently
        let mut s = Scenario::randomized(29);
        for u in &mut s.users {
            u.r_min = 40.0; // demanding but possibly reachable on 32 subcarriers
        }
        match alternate(&s, 0.14, &fast_opts()) {
            Ok(sol) => {
                let ok = sol
                    .per_user_rates
                    .iter()
                    .zip(&s.users)
                    .all(|(r, u)| *r >= u.r_min - 1e-6);
                assert_eq!(sol.feasible, ok);
            }
            Err(Error::Infeasible(_)) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
}
