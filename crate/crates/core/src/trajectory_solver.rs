//! UAV trajectory design for a fixed allocation: slack reformulation and
//! successive convex approximation (SCA).
//!
//! The rate lower bound is rewritten in the slack variables v_ug = d_ug^alpha
//! and v_ur = d_ur^2 and Taylor-expanded to first order around the incumbent.
//! The resulting linear surrogate is maximized over the waypoints (slacks
//! eliminated at equality) by projected gradient ascent; minimum-rate
//! constraints enter through an exact penalty. A true-objective safeguard
//! backtracks toward the anchor so every accepted step improves the real
//! penalized rate, keeping the outer trace monotone.

use crate::bounds::{gain_from_slacks, link_coeffs, LinkCoeffs, ModePartition};
use crate::geometry::{dist, Vec3};
use crate::ra_solver::Allocation;
use crate::scenario::Scenario;
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// UAV path: N+1 waypoints including both fixed endpoints. Slot n (1-based)
/// transmits from positions[n].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec3>,
    pub dt: f64,
    pub v_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Trajectory {
    /// Straight-line interpolation between the scenario endpoints.
    pub fn straight_line(scenario: &Scenario) -> Trajectory {
        let f = &scenario.flight;
        let n = f.n_slots;
        let positions = (0..=n)
            .map(|i| f.q_initial.lerp(f.q_final, i as f64 / n as f64))
            .collect();
        Trajectory { positions, dt: f.dt, v_max: f.v_max, z_min: f.z_min, z_max: f.z_max }
    }

    pub fn n_slots(&self) -> usize {
        self.positions.len() - 1
    }

    /// Transmit positions per slot (slot n maps to waypoint n).
    pub fn slot_positions(&self) -> &[Vec3] {
        &self.positions[1..]
    }

    /// Largest violation of the speed, altitude, or endpoint conditions.
    pub fn feasibility_residual(&self, scenario: &Scenario) -> f64 {
        let f = &scenario.flight;
        let mut r: f64 = 0.0;
        r = r.max(dist(self.positions[0], f.q_initial));
        r = r.max(dist(*self.positions.last().unwrap(), f.q_final));
        for w in self.positions.windows(2) {
            r = r.max(dist(w[0], w[1]) - self.dt * self.v_max);
        }
        for p in &self.positions {
            r = r.max(self.z_min - p.z).max(p.z - self.z_max);
        }
        r
    }
}

/// Slack variables: v_ug[k][n] >= d_ug^alpha and v_ur[n] >= d_ur^2.
/// Stored flat; v_ug index is n*K + k.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackPoint {
    pub n_users: usize,
    pub n_slots: usize,
    pub v_ug: Vec<f64>,
    pub v_ur: Vec<f64>,
}

impl SlackPoint {
    pub fn ug(&self, k: usize, n: usize) -> f64 {
        self.v_ug[n * self.n_users + k]
    }

    pub fn ur(&self, n: usize) -> f64 {
        self.v_ur[n]
    }
}

/// One scheduled transmission: user k, fading mode j, power p (W).
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub k: usize,
    pub j: usize,
    pub p: f64,
}

/// Allocation-dependent data needed to evaluate rates as a function of the
/// trajectory alone: per-pair bound coefficients plus the active terms.
#[derive(Debug, Clone)]
pub struct TrajContext {
    pub n_users: usize,
    pub n_slots: usize,
    pub sigma2: f64,
    pub r_min: Vec<f64>,
    coeffs: Vec<LinkCoeffs>,
    irs_user: Vec<usize>,
    terms: Vec<Vec<Term>>,
    alpha_ug: Vec<f64>,
    user_locs: Vec<Vec3>,
    irs_loc: Vec3,
    /// true = lower-bound gains (default); false = upper-bound companion.
    lower: bool,
}

impl TrajContext {
    pub fn build(
        allocation: &Allocation,
        partition: &ModePartition,
        scenario: &Scenario,
    ) -> Result<TrajContext> {
        Self::build_with_bound(allocation, partition, scenario, false)
    }

    /// Same context on the upper-bound gain staircase.
    pub fn build_upper(
        allocation: &Allocation,
        partition: &ModePartition,
        scenario: &Scenario,
    ) -> Result<TrajContext> {
        Self::build_with_bound(allocation, partition, scenario, true)
    }

    fn build_with_bound(
        allocation: &Allocation,
        partition: &ModePartition,
        scenario: &Scenario,
        upper: bool,
    ) -> Result<TrajContext> {
        let kn = scenario.n_users();
        let mut coeffs = Vec::with_capacity(kn * kn);
        for k in 0..kn {
            for kp in 0..kn {
                coeffs.push(link_coeffs(k, kp, partition.alpha, scenario)?);
            }
        }
        let mut terms = vec![Vec::new(); allocation.n_slots];
        for n in 0..allocation.n_slots {
            for i in 1..=allocation.n_f {
                if let Some(k) = allocation.assigned(i, n) {
                    let p = allocation.power[n * allocation.n_f + (i - 1)];
                    if p > 0.0 {
                        terms[n].push(Term { k, j: partition.mode_of(i), p });
                    }
                }
            }
        }
        Ok(TrajContext {
            n_users: kn,
            n_slots: allocation.n_slots,
            sigma2: scenario.ofdm.sigma2(),
            r_min: scenario.users.iter().map(|u| u.r_min).collect(),
            coeffs,
            irs_user: allocation.irs_user.clone(),
            terms,
            alpha_ug: scenario.users.iter().map(|u| u.alpha_ug).collect(),
            user_locs: scenario.users.iter().map(|u| u.location).collect(),
            irs_loc: scenario.irs.location,
            lower: !upper,
        })
    }

    pub fn has_power(&self) -> bool {
        self.terms.iter().any(|t| !t.is_empty())
    }

    /// Slacks at equality for the given per-slot transmit positions.
    pub fn equality_slacks(&self, slot_positions: &[Vec3]) -> SlackPoint {
        let kn = self.n_users;
        let mut v_ug = vec![0.0; slot_positions.len() * kn];
        let mut v_ur = vec![0.0; slot_positions.len()];
        for (n, &q) in slot_positions.iter().enumerate() {
            for k in 0..kn {
                v_ug[n * kn + k] = dist(q, self.user_locs[k]).max(1e-6).powf(self.alpha_ug[k]);
            }
            v_ur[n] = dist(q, self.irs_loc).max(1e-6).powi(2);
        }
        SlackPoint { n_users: kn, n_slots: slot_positions.len(), v_ug, v_ur }
    }

    /// Time-averaged per-user rates at a slack point (true lower bound).
    pub fn true_user_rates(&self, v: &SlackPoint) -> Vec<f64> {
        let mut r = vec![0.0; self.n_users];
        for n in 0..self.n_slots {
            let kp = self.irs_user[n];
            for t in &self.terms[n] {
                let c = &self.coeffs[t.k * self.n_users + kp];
                let g = gain_from_slacks(c, t.j, v.ug(t.k, n), v.ur(n), self.lower);
                r[t.k] += (1.0 + t.p * g / self.sigma2).log2();
            }
        }
        let inv_n = 1.0 / self.n_slots as f64;
        r.iter_mut().for_each(|x| *x *= inv_n);
        r
    }
}

/// First-order expansion of the per-user rates around an anchor slack point:
/// R_k(v) ~ anchor_rates[k] + sum_n c_ug[k,n](v_ug - anchor) + c_ur[k,n](v_ur - anchor).
#[derive(Debug, Clone)]
pub struct SurrogateCoeffs {
    pub anchor: SlackPoint,
    pub anchor_rates: Vec<f64>,
    /// d R_k / d v_ug[k,n], flat index n*K + k.
    pub c_ug: Vec<f64>,
    /// Per-user share of d R / d v_ur[n], flat index n*K + k.
    pub c_ur: Vec<f64>,
}

pub fn surrogate_coeffs(ctx: &TrajContext, anchor: &SlackPoint) -> SurrogateCoeffs {
    let kn = ctx.n_users;
    let inv_n = 1.0 / ctx.n_slots as f64;
    let mut anchor_rates = vec![0.0; kn];
    let mut c_ug = vec![0.0; ctx.n_slots * kn];
    let mut c_ur = vec![0.0; ctx.n_slots * kn];
    for n in 0..ctx.n_slots {
        let kp = ctx.irs_user[n];
        for t in &ctx.terms[n] {
            let c = &ctx.coeffs[t.k * kn + kp];
            let v1 = anchor.ug(t.k, n);
            let v2 = anchor.ur(n);
            let d = if ctx.lower { c.d_lb[t.j - 1] } else { c.d_ub[t.j - 1] };
            let g = gain_from_slacks(c, t.j, v1, v2, ctx.lower);
            let rho = t.p / ctx.sigma2;
            anchor_rates[t.k] += inv_n * (1.0 + rho * g).log2();
            let scale = rho / ((1.0 + rho * g) * LN2) * inv_n;
            c_ug[n * kn + t.k] +=
                scale * (-c.a / (v1 * v1) - 0.5 * d / (v1.powf(1.5) * v2.sqrt()));
            c_ur[n * kn + t.k] +=
                scale * (-c.b / (v2 * v2) - 0.5 * d / (v1.sqrt() * v2.powf(1.5)));
        }
    }
    SurrogateCoeffs { anchor: anchor.clone(), anchor_rates, c_ug, c_ur }
}

/// Surrogate rate of user k at slack point v.
pub fn surrogate_rate(k: usize, v: &SlackPoint, c: &SurrogateCoeffs) -> f64 {
    let kn = c.anchor.n_users;
    let mut r = c.anchor_rates[k];
    for n in 0..c.anchor.n_slots {
        r += c.c_ug[n * kn + k] * (v.ug(k, n) - c.anchor.ug(k, n));
        r += c.c_ur[n * kn + k] * (v.ur(n) - c.anchor.ur(n));
    }
    r
}

fn surrogate_user_rates(v: &SlackPoint, c: &SurrogateCoeffs) -> Vec<f64> {
    (0..c.anchor.n_users).map(|k| surrogate_rate(k, v, c)).collect()
}

/// Sum rate minus the exact penalty on minimum-rate violations.
fn penalized(rates: &[f64], r_min: &[f64], mu: f64) -> f64 {
    let sum: f64 = rates.iter().sum();
    let viol: f64 = rates.iter().zip(r_min).map(|(r, m)| (m - r).max(0.0)).sum();
    sum - mu * viol
}

fn total_violation(rates: &[f64], r_min: &[f64]) -> f64 {
    rates.iter().zip(r_min).map(|(r, m)| (m - r).max(0.0)).sum()
}

#[derive(Debug, Clone)]
pub struct TrajOptions {
    pub max_iters: usize,
    /// Relative objective tolerance across SCA iterations.
    pub tol: f64,
    /// Projected gradient iterations per SCA step.
    pub pga_iters: usize,
    /// Keep the altitude pinned at z_min.
    pub freeze_altitude: bool,
    /// Optimize the upper-bound companion objective instead.
    pub upper: bool,
}

impl Default for TrajOptions {
    fn default() -> Self {
        TrajOptions {
            max_iters: 30,
            tol: 1e-4,
            pga_iters: 200,
            freeze_altitude: false,
            upper: false,
        }
    }
}

/// Cyclic projection onto the segment chain (C8), altitude box (C11), and
/// fixed endpoints (C9/C10). Iterates until the residual falls below 1e-10.
fn project(traj: &mut Trajectory, freeze_altitude: bool) {
    let last = traj.positions.len() - 1;
    let limit = traj.dt * traj.v_max;
    for pass in 0..2000 {
        let mut viol: f64 = 0.0;
        for m in 1..=last {
            if freeze_altitude {
                if m < last {
                    traj.positions[m].z = traj.z_min;
                }
            } else if m < last {
                traj.positions[m].z = traj.positions[m].z.clamp(traj.z_min, traj.z_max);
            }
            let a = traj.positions[m - 1];
            let b = traj.positions[m];
            let d = dist(a, b);
            if d <= limit + 1e-12 {
                continue;
            }
            viol = viol.max(d - limit);
            let u = b.sub(a).scale(1.0 / d);
            let prev_fixed = m - 1 == 0;
            let next_fixed = m == last;
            if prev_fixed && next_fixed {
                continue; // endpoints themselves too far apart: scenario issue
            } else if prev_fixed {
                traj.positions[m] = a.add(u.scale(limit));
            } else if next_fixed {
                traj.positions[m - 1] = b.sub(u.scale(limit));
            } else {
                let c = a.lerp(b, 0.5);
                traj.positions[m - 1] = c.sub(u.scale(limit / 2.0));
                traj.positions[m] = c.add(u.scale(limit / 2.0));
            }
        }
        if viol < 1e-10 && pass > 0 {
            break;
        }
    }
}

/// One SCA step: maximize the penalized linear surrogate over the free
/// waypoints, then backtrack toward the anchor until the true penalized
/// objective improves (or return the anchor unchanged at a fixed point).
pub fn solve_sca_step(
    anchor: &Trajectory,
    ctx: &TrajContext,
    opts: &TrajOptions,
) -> Result<(Trajectory, SlackPoint)> {
    let v_anchor = ctx.equality_slacks(anchor.slot_positions());
    let coeffs = surrogate_coeffs(ctx, &v_anchor);
    let scale: f64 = coeffs.anchor_rates.iter().sum::<f64>().max(1.0);
    let mut mu = 10.0 * scale;

    let anchor_rates = ctx.true_user_rates(&v_anchor);
    let anchor_viol = total_violation(&anchor_rates, &ctx.r_min);
    let anchor_obj = penalized(&anchor_rates, &ctx.r_min, mu);

    let mut best = anchor.clone();
    let mut improved = false;
    for _round in 0..12 {
        let cand = ascend_surrogate(anchor, ctx, &coeffs, mu, opts);
        // safeguard on the true objective: geometric backtracking
        let mut theta = 1.0f64;
        while theta > 1e-6 {
            let mut q = anchor.clone();
            for m in 1..q.positions.len() - 1 {
                q.positions[m] = anchor.positions[m].lerp(cand.positions[m], theta);
            }
            project(&mut q, opts.freeze_altitude);
            let rates = ctx.true_user_rates(&ctx.equality_slacks(q.slot_positions()));
            let viol = total_violation(&rates, &ctx.r_min);
            let obj = penalized(&rates, &ctx.r_min, mu);
            let viol_ok = if anchor_viol <= 1e-9 { viol <= 1e-9 } else { viol <= anchor_viol };
            if viol_ok && obj > anchor_obj + 1e-12 {
                best = q;
                improved = true;
                break;
            }
            theta *= 0.5;
        }
        if improved || anchor_viol <= 1e-9 {
            break;
        }
        mu *= 2.0; // anchor infeasible and no progress: push harder on C7
    }

    if !improved && anchor_viol > 1e-9 {
        let rates = ctx.true_user_rates(&ctx.equality_slacks(best.slot_positions()));
        if total_violation(&rates, &ctx.r_min) > anchor_viol + 1e-9 {
            return Err(Error::SubproblemInfeasible(
                "minimum-rate surrogate constraints could not be met".into(),
            ));
        }
    }
    let slacks = ctx.equality_slacks(best.slot_positions());
    Ok((best, slacks))
}

/// Projected gradient ascent on the penalized surrogate, slacks at equality.
fn ascend_surrogate(
    anchor: &Trajectory,
    ctx: &TrajContext,
    coeffs: &SurrogateCoeffs,
    mu: f64,
    opts: &TrajOptions,
) -> Trajectory {
    let kn = ctx.n_users;
    let mut traj = anchor.clone();
    project(&mut traj, opts.freeze_altitude);
    let eval = |t: &Trajectory| -> f64 {
        let v = ctx.equality_slacks(t.slot_positions());
        penalized(&surrogate_user_rates(&v, coeffs), &ctx.r_min, mu)
    };
    let mut obj = eval(&traj);
    let mut step = (traj.dt * traj.v_max).max(1.0);
    let free_last = traj.positions.len() - 2; // waypoints 1..=free_last move

    for _ in 0..opts.pga_iters {
        // penalty subgradient weights per user at the current point
        let v = ctx.equality_slacks(traj.slot_positions());
        let s_rates = surrogate_user_rates(&v, coeffs);
        let w: Vec<f64> = s_rates
            .iter()
            .zip(&ctx.r_min)
            .map(|(r, m)| if r < m { 1.0 + mu } else { 1.0 })
            .collect();

        let mut grad = vec![Vec3::new(0.0, 0.0, 0.0); traj.positions.len()];
        for n in 0..ctx.n_slots {
            let m = n + 1;
            if m > free_last {
                continue;
            }
            let q = traj.positions[m];
            let mut g = Vec3::new(0.0, 0.0, 0.0);
            for k in 0..kn {
                let dk = dist(q, ctx.user_locs[k]).max(1e-6);
                let a = ctx.alpha_ug[k];
                let gug = q.sub(ctx.user_locs[k]).scale(a * dk.powf(a - 2.0));
                let gur = q.sub(ctx.irs_loc).scale(2.0);
                g = g
                    .add(gug.scale(w[k] * coeffs.c_ug[n * kn + k]))
                    .add(gur.scale(w[k] * coeffs.c_ur[n * kn + k]));
            }
            grad[m] = g;
        }
        let gmax = grad.iter().map(|g| g.norm()).fold(0.0, f64::max);
        if gmax < 1e-15 {
            break;
        }

        let mut advanced = false;
        while step > 1e-10 {
            let mut cand = traj.clone();
            for m in 1..=free_last {
                cand.positions[m] = traj.positions[m].add(grad[m].scale(step / gmax));
            }
            project(&mut cand, opts.freeze_altitude);
            let cobj = eval(&cand);
            if cobj > obj + 1e-12 {
                traj = cand;
                obj = cobj;
                step *= 1.5;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    traj
}

#[derive(Debug, Clone)]
pub struct TrajSolution {
    pub trajectory: Trajectory,
    /// True penalized lower-bound sum rate after each SCA iteration.
    pub trace: Vec<f64>,
    pub per_user_rates: Vec<f64>,
    pub sum_rate: f64,
}

pub fn solve_subproblem2(
    allocation: &Allocation,
    q_init: &Trajectory,
    partition: &ModePartition,
    scenario: &Scenario,
    opts: &TrajOptions,
) -> Result<TrajSolution> {
    let ctx = TrajContext::build_with_bound(allocation, partition, scenario, opts.upper)?;
    let rates0 = ctx.true_user_rates(&ctx.equality_slacks(q_init.slot_positions()));
    if !ctx.has_power() {
        return Ok(TrajSolution {
            trajectory: q_init.clone(),
            trace: vec![0.0],
            per_user_rates: rates0,
            sum_rate: 0.0,
        });
    }

    let mut traj = q_init.clone();
    let mut trace = vec![rates0.iter().sum::<f64>()];
    for _ in 0..opts.max_iters {
        let (next, slacks) = solve_sca_step(&traj, &ctx, opts)?;
        let obj: f64 = ctx.true_user_rates(&slacks).iter().sum();
        let prev = *trace.last().unwrap();
        trace.push(obj.max(prev));
        if next == traj || obj - prev <= opts.tol * prev.abs().max(1e-9) {
            traj = next;
            break;
        }
        traj = next;
    }
    let per_user_rates = ctx.true_user_rates(&ctx.equality_slacks(traj.slot_positions()));
    let sum_rate = per_user_rates.iter().sum();
    Ok(TrajSolution { trajectory: traj, trace, per_user_rates, sum_rate })
}
