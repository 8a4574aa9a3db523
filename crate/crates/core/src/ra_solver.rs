//! Joint power allocation, subcarrier scheduling, and IRS user scheduling
//! for a fixed trajectory, by Lagrangian dual decomposition.
//!
//! The binary scheduling variables are recovered by argmax at every inner
//! iteration (the time-sharing relaxation is tight), so the allocation never
//! stores fractional schedules: p_tilde holds t*p directly.

use crate::bounds::{gain_from_slacks, link_coeffs, LinkCoeffs, ModePartition};
use crate::geometry::{dist, Vec3};
use crate::scenario::Scenario;
use crate::trajectory_solver::Trajectory;
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;
/// Keeps the water level finite when the power constraint goes slack.
const VARRHO_FLOOR: f64 = 1e-12;

/// Precomputed lower (or upper) bound channel gains for a fixed trajectory.
/// Gains depend on the subcarrier only through its fading mode, so they are
/// stored per (slot, user, assisted user, mode).
#[derive(Debug, Clone)]
pub struct RateModel {
    pub n_users: usize,
    pub n_f: usize,
    pub n_slots: usize,
    pub sigma2: f64,
    pub p_max: f64,
    pub r_min: Vec<f64>,
    pub partition: ModePartition,
    gains: Vec<f64>,
}

impl RateModel {
    /// Build from the per-slot transmit positions (length N).
    pub fn build(
        slot_positions: &[Vec3],
        partition: &ModePartition,
        scenario: &Scenario,
        upper: bool,
    ) -> Result<RateModel> {
        let k_n = scenario.n_users();
        let n = slot_positions.len();
        let mut coeffs: Vec<LinkCoeffs> = Vec::with_capacity(k_n * k_n);
        for k in 0..k_n {
            for kp in 0..k_n {
                coeffs.push(link_coeffs(k, kp, partition.alpha, scenario)?);
            }
        }
        let mut gains = vec![0.0; n * k_n * k_n * 4];
        for (slot, &q) in slot_positions.iter().enumerate() {
            for k in 0..k_n {
                let u = &scenario.users[k];
                let v_ug = dist(q, u.location).powf(u.alpha_ug);
                let v_ur = dist(q, scenario.irs.location).powi(2);
                for kp in 0..k_n {
                    let c = &coeffs[k * k_n + kp];
                    for j in 1..=4 {
                        gains[((slot * k_n + k) * k_n + kp) * 4 + (j - 1)] =
                            gain_from_slacks(c, j, v_ug, v_ur, !upper);
                    }
                }
            }
        }
        Ok(RateModel {
            n_users: k_n,
            n_f: scenario.ofdm.n_f,
            n_slots: n,
            sigma2: scenario.ofdm.sigma2(),
            p_max: scenario.ofdm.p_max,
            r_min: scenario.users.iter().map(|u| u.r_min).collect(),
            partition: *partition,
            gains,
        })
    }

    /// Gain of user k on subcarrier i (1-based) in slot n (0-based) when the
    /// IRS serves user kp.
    pub fn gain(&self, k: usize, kp: usize, i: usize, n: usize) -> f64 {
        self.gain_by_mode(k, kp, self.partition.mode_of(i), n)
    }

    pub fn gain_by_mode(&self, k: usize, kp: usize, j: usize, n: usize) -> f64 {
        self.gains[((n * self.n_users + k) * self.n_users + kp) * 4 + (j - 1)]
    }

    /// Flattened index of a (k, k', i, n) tensor entry.
    pub fn idx4(&self, k: usize, kp: usize, i: usize, n: usize) -> usize {
        ((n * self.n_users + k) * self.n_users + kp) * self.n_f + (i - 1)
    }
}

/// Binary schedules plus per-subcarrier powers; one slot-level IRS user and
/// at most one served user per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub n_users: usize,
    pub n_f: usize,
    pub n_slots: usize,
    /// IRS-assisted user per slot.
    pub irs_user: Vec<usize>,
    /// Served user per (slot, subcarrier); None leaves the subcarrier idle.
    pub user: Vec<Option<usize>>,
    /// Transmit power per (slot, subcarrier) in W; zero wherever idle.
    pub power: Vec<f64>,
}

impl Allocation {
    pub fn empty(n_users: usize, n_f: usize, n_slots: usize) -> Allocation {
        Allocation {
            n_users,
            n_f,
            n_slots,
            irs_user: vec![0; n_slots],
            user: vec![None; n_slots * n_f],
            power: vec![0.0; n_slots * n_f],
        }
    }

    fn cell(&self, i: usize, n: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n_f && n < self.n_slots);
        n * self.n_f + (i - 1)
    }

    pub fn assigned(&self, i: usize, n: usize) -> Option<usize> {
        self.user[self.cell(i, n)]
    }

    /// Subcarrier schedule u_{k,i,n}.
    pub fn u(&self, k: usize, i: usize, n: usize) -> f64 {
        if self.assigned(i, n) == Some(k) {
            1.0
        } else {
            0.0
        }
    }

    /// IRS schedule s_{k,n}.
    pub fn s(&self, k: usize, n: usize) -> f64 {
        if self.irs_user[n] == k {
            1.0
        } else {
            0.0
        }
    }

    /// Product schedule t_{k,k',i,n} = u_{k,i,n} s_{k',n}.
    pub fn t(&self, k: usize, kp: usize, i: usize, n: usize) -> f64 {
        self.u(k, i, n) * self.s(kp, n)
    }

    /// Scheduled power p̃_{k,k',i,n} = t·p.
    pub fn p_tilde(&self, k: usize, kp: usize, i: usize, n: usize) -> f64 {
        self.t(k, kp, i, n) * self.power[self.cell(i, n)]
    }

    pub fn slot_power(&self, n: usize) -> f64 {
        self.power[n * self.n_f..(n + 1) * self.n_f].iter().sum()
    }
}

/// Time-averaged per-user rates of an allocation under a rate model.
pub fn user_rates(alloc: &Allocation, model: &RateModel) -> Vec<f64> {
    let mut r = vec![0.0; model.n_users];
    for n in 0..alloc.n_slots {
        let kp = alloc.irs_user[n];
        for i in 1..=alloc.n_f {
            if let Some(k) = alloc.assigned(i, n) {
                let p = alloc.power[n * alloc.n_f + (i - 1)];
                if p > 0.0 {
                    let g = model.gain(k, kp, i, n);
                    r[k] += (1.0 + p * g / model.sigma2).log2();
                }
            }
        }
    }
    let inv_n = 1.0 / alloc.n_slots as f64;
    r.iter_mut().for_each(|x| *x *= inv_n);
    r
}

/// Lagrange multipliers. Entry-level vectors (zeta, varsigma, varpi, xi) may
/// be left empty to mean identically zero — the binary recovery satisfies
/// their constraints with equality so they never move off zero.
#[derive(Debug, Clone)]
pub struct DualState {
    /// Minimum-rate multipliers, one per user.
    pub nu: Vec<f64>,
    /// Per-slot power budget multipliers.
    pub varrho: Vec<f64>,
    /// Per (subcarrier, slot) exclusive-scheduling multipliers (fixed).
    pub zeta: Vec<f64>,
    /// Per-slot IRS-exclusivity multipliers (fixed).
    pub gamma: Vec<f64>,
    /// Per (k,k',i,n) product-linearization multipliers.
    pub varsigma: Vec<f64>,
    pub varpi: Vec<f64>,
    pub xi: Vec<f64>,
}

impl DualState {
    pub fn init(model: &RateModel) -> DualState {
        let rho0 = if model.p_max > 0.0 {
            model.n_users as f64 * model.n_f as f64 / (model.p_max * LN2)
        } else {
            1.0
        };
        DualState {
            nu: vec![0.0; model.n_users],
            varrho: vec![rho0; model.n_slots],
            zeta: vec![0.0; model.n_f * model.n_slots],
            gamma: vec![0.0; model.n_slots],
            varsigma: Vec::new(),
            varpi: Vec::new(),
            xi: Vec::new(),
        }
    }

    fn entry(v: &[f64], idx: usize) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v[idx]
        }
    }
}

/// Multi-level water-filling power for one (user, subcarrier, slot) cell.
pub fn waterfill_power(
    nu_k: f64,
    varrho_n: f64,
    gain: f64,
    sigma2: f64,
    n_slots: usize,
) -> Result<f64> {
    if varrho_n == 0.0 {
        return Err(Error::ZeroDual);
    }
    if gain <= 0.0 {
        return Ok(0.0);
    }
    let level = (nu_k + 1.0) / (varrho_n * LN2 * n_slots as f64);
    Ok((level - sigma2 / gain).max(0.0))
}

/// log2(1+x) - x/((1+x) ln2); nonnegative and increasing for x >= 0.
fn rate_bracket(x: f64) -> f64 {
    (1.0 + x).ln() / LN2 - x / ((1.0 + x) * LN2)
}

/// Marginal benefits of switching each binary variable on, at fixed duals.
/// The rate part of M_t depends on the subcarrier only through its fading
/// mode, so it is stored mode-grouped; entry-level dual corrections are
/// added on access.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub n_users: usize,
    pub n_f: usize,
    pub n_slots: usize,
    pub partition: ModePartition,
    /// (nu_k+1)/N * bracket(p* g/sigma2) per (n, k, k', mode).
    pub base_t: Vec<f64>,
    /// -varsigma - varpi + xi per (k,k',i,n); empty means zero.
    pub t_corr: Vec<f64>,
    /// M_u per (n, k, i).
    pub m_u_v: Vec<f64>,
    /// M_s per (n, k').
    pub m_s_v: Vec<f64>,
}

impl Marginals {
    pub fn m_t(&self, k: usize, kp: usize, i: usize, n: usize) -> f64 {
        let j = self.partition.mode_of(i);
        let base = self.base_t[((n * self.n_users + k) * self.n_users + kp) * 4 + (j - 1)];
        if self.t_corr.is_empty() {
            base
        } else {
            base + self.t_corr[((n * self.n_users + k) * self.n_users + kp) * self.n_f + (i - 1)]
        }
    }

    pub fn m_u(&self, k: usize, i: usize, n: usize) -> f64 {
        self.m_u_v[(n * self.n_users + k) * self.n_f + (i - 1)]
    }

    pub fn m_s(&self, kp: usize, n: usize) -> f64 {
        self.m_s_v[n * self.n_users + kp]
    }
}

pub fn marginals(dual: &DualState, model: &RateModel) -> Result<Marginals> {
    let kn = model.n_users;
    let nf = model.n_f;
    let ns = model.n_slots;

    let mut base_t = vec![0.0; ns * kn * kn * 4];
    for n in 0..ns {
        for k in 0..kn {
            for kp in 0..kn {
                for j in 1..=4 {
                    let g = model.gain_by_mode(k, kp, j, n);
                    let p = waterfill_power(dual.nu[k], dual.varrho[n], g, model.sigma2, ns)?;
                    base_t[((n * kn + k) * kn + kp) * 4 + (j - 1)] =
                        (dual.nu[k] + 1.0) / ns as f64 * rate_bracket(p * g / model.sigma2);
                }
            }
        }
    }

    let entry_duals_zero =
        dual.varsigma.is_empty() && dual.varpi.is_empty() && dual.xi.is_empty();
    let mut t_corr = Vec::new();
    if !entry_duals_zero {
        t_corr = vec![0.0; ns * kn * kn * nf];
        for n in 0..ns {
            for k in 0..kn {
                for kp in 0..kn {
                    for i in 1..=nf {
                        let idx = model.idx4(k, kp, i, n);
                        t_corr[idx] = -DualState::entry(&dual.varsigma, idx)
                            - DualState::entry(&dual.varpi, idx)
                            + DualState::entry(&dual.xi, idx);
                    }
                }
            }
        }
    }

    let mut m_u_v = vec![0.0; ns * kn * nf];
    for n in 0..ns {
        for k in 0..kn {
            for i in 1..=nf {
                let mut v = -dual.zeta[n * nf + (i - 1)];
                if !entry_duals_zero {
                    for kp in 0..kn {
                        let idx = model.idx4(k, kp, i, n);
                        v += DualState::entry(&dual.varpi, idx) - DualState::entry(&dual.xi, idx);
                    }
                }
                m_u_v[(n * kn + k) * nf + (i - 1)] = v;
            }
        }
    }

    let mut m_s_v = vec![0.0; ns * kn];
    for n in 0..ns {
        for kp in 0..kn {
            let mut v = -dual.gamma[n];
            if !entry_duals_zero {
                for k in 0..kn {
                    for i in 1..=nf {
                        let idx = model.idx4(k, kp, i, n);
                        v += DualState::entry(&dual.varsigma, idx)
                            - DualState::entry(&dual.xi, idx);
                    }
                }
            }
            m_s_v[n * kn + kp] = v;
        }
    }

    Ok(Marginals {
        n_users: kn,
        n_f: nf,
        n_slots: ns,
        partition: model.partition,
        base_t,
        t_corr,
        m_u_v,
        m_s_v,
    })
}

/// Binary schedules recovered from the marginals: per slot, the IRS user
/// maximizing the slot total; per subcarrier, the user maximizing M_u + M_t.
/// Ties break toward the lowest user index.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub irs_user: Vec<usize>,
    pub user: Vec<Option<usize>>,
}

pub fn binary_update(m: &Marginals) -> Assignment {
    let kn = m.n_users;
    let nf = m.n_f;
    let mut irs_user = vec![0usize; m.n_slots];
    let mut user = vec![None; m.n_slots * nf];
    for n in 0..m.n_slots {
        let mut best_kp = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for kp in 0..kn {
            let mut score = m.m_s(kp, n);
            for i in 1..=nf {
                let mut cell: f64 = 0.0; // idle subcarrier contributes nothing
                for k in 0..kn {
                    cell = cell.max(m.m_u(k, i, n) + m.m_t(k, kp, i, n));
                }
                score += cell;
            }
            if score > best_score {
                best_score = score;
                best_kp = kp;
            }
        }
        irs_user[n] = best_kp;
        for i in 1..=nf {
            let mut best_k = None;
            let mut best_val = 0.0;
            for k in 0..kn {
                let v = m.m_u(k, i, n) + m.m_t(k, best_kp, i, n);
                if v > best_val {
                    best_val = v;
                    best_k = Some(k);
                }
            }
            user[n * nf + (i - 1)] = best_k;
        }
    }
    Assignment { irs_user, user }
}

/// Per-slot exact water level: bisect the power multiplier so the slot
/// budget binds, making stationarity and complementary slackness exact.
/// Returns the allocation and the per-slot multipliers that produced it.
pub fn fill_powers(
    assign: &Assignment,
    nu: &[f64],
    model: &RateModel,
) -> Result<(Allocation, Vec<f64>)> {
    let nf = model.n_f;
    let ns = model.n_slots;
    let mut alloc = Allocation {
        n_users: model.n_users,
        n_f: nf,
        n_slots: ns,
        irs_user: assign.irs_user.clone(),
        user: assign.user.clone(),
        power: vec![0.0; ns * nf],
    };
    let mut rho_star = vec![VARRHO_FLOOR; ns];

    for n in 0..ns {
        let kp = assign.irs_user[n];
        let cells: Vec<(usize, usize, f64)> = (1..=nf)
            .filter_map(|i| {
                assign.user[n * nf + (i - 1)].map(|k| (i, k, model.gain(k, kp, i, n)))
            })
            .filter(|&(_, _, g)| g > 0.0)
            .collect();
        if cells.is_empty() || model.p_max == 0.0 {
            continue;
        }
        let total = |rho: f64| -> Result<f64> {
            let mut s = 0.0;
            for &(_, k, g) in &cells {
                s += waterfill_power(nu[k], rho, g, model.sigma2, ns)?;
            }
            Ok(s)
        };
        // bracket the root of total(rho) = p_max (total is decreasing in rho)
        let mut lo = VARRHO_FLOOR;
        let mut hi = 1.0;
        while total(hi)? > model.p_max {
            hi *= 4.0;
            if hi > 1e30 {
                return Err(Error::Config("power multiplier bracket diverged".into()));
            }
        }
        if total(lo)? <= model.p_max {
            // even the floor level cannot exhaust the budget (pathological);
            // keep the floor and accept slack
            hi = lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid)? > model.p_max {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 1e-15 * hi {
                break;
            }
        }
        rho_star[n] = hi;
        for &(i, k, g) in &cells {
            alloc.power[n * nf + (i - 1)] = waterfill_power(nu[k], hi, g, model.sigma2, ns)?;
        }
        // drop assignments that ended below the water level
        for &(i, _, _) in &cells {
            if alloc.power[n * nf + (i - 1)] == 0.0 {
                alloc.user[n * nf + (i - 1)] = None;
            }
        }
    }
    Ok((alloc, rho_star))
}

/// Projected subgradient step. zeta and gamma stay fixed: the binary
/// recovery satisfies their constraints with equality. Entry-level
/// multipliers only move if they were materialized.
pub fn dual_update(
    dual: &mut DualState,
    alloc: &Allocation,
    rates: &[f64],
    model: &RateModel,
    tau: f64,
) {
    for k in 0..model.n_users {
        // rates can exceed r_min by orders of magnitude; clip the subgradient
        // per multiplier family so surpluses decay nu smoothly instead of
        // zeroing it in one step (prevents winner-take-all oscillation)
        let clip = 1.0 + model.r_min[k];
        let sub = (rates[k] - model.r_min[k]).clamp(-clip, clip);
        dual.nu[k] = (dual.nu[k] - tau * sub).max(0.0);
    }
    for n in 0..model.n_slots {
        dual.varrho[n] =
            (dual.varrho[n] - tau * (model.p_max - alloc.slot_power(n))).max(VARRHO_FLOOR);
    }
    if !(dual.varsigma.is_empty() && dual.varpi.is_empty() && dual.xi.is_empty()) {
        for n in 0..model.n_slots {
            for k in 0..model.n_users {
                for kp in 0..model.n_users {
                    for i in 1..=model.n_f {
                        let idx = model.idx4(k, kp, i, n);
                        let (u, s, t) =
                            (alloc.u(k, i, n), alloc.s(kp, n), alloc.t(k, kp, i, n));
                        if !dual.varsigma.is_empty() {
                            dual.varsigma[idx] = (dual.varsigma[idx] - tau * (u - t)).max(0.0);
                        }
                        if !dual.varpi.is_empty() {
                            dual.varpi[idx] = (dual.varpi[idx] - tau * (s - t)).max(0.0);
                        }
                        if !dual.xi.is_empty() {
                            dual.xi[idx] =
                                (dual.xi[idx] - tau * (t - u - s + 1.0)).max(0.0);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RaOptions {
    pub max_iters: usize,
    /// Relative objective tolerance for early stopping.
    pub tol: f64,
    /// Base subgradient step; decays as tau0/sqrt(l).
    pub tau0: f64,
    /// Divergence cap on the minimum-rate multipliers.
    pub nu_cap: f64,
    /// Solve the upper-bound companion problem instead.
    pub upper: bool,
}

impl Default for RaOptions {
    fn default() -> Self {
        RaOptions { max_iters: 300, tol: 1e-6, tau0: 1.0, nu_cap: 1e4, upper: false }
    }
}

#[derive(Debug, Clone)]
pub struct RaSolution {
    pub allocation: Allocation,
    pub duals: DualState,
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    /// Best dual bound seen; sum_rate <= dual_value up to subgradient noise.
    pub dual_value: f64,
    /// Relative primal-dual gap at termination.
    pub gap: f64,
    pub iterations: usize,
}

/// Quick certificate of infeasibility: even granting user k every subcarrier,
/// the IRS, and the full budget on each subcarrier simultaneously, the rate
/// cannot reach r_min.
fn check_rate_reachability(model: &RateModel) -> Result<()> {
    for k in 0..model.n_users {
        if model.r_min[k] == 0.0 {
            continue;
        }
        let mut best = 0.0;
        for n in 0..model.n_slots {
            let mut slot = 0.0;
            for j in 1..=4 {
                let g = (0..model.n_users)
                    .map(|kp| model.gain_by_mode(k, kp, j, n))
                    .fold(0.0, f64::max);
                let count = model.partition.sizes()[j - 1] as f64;
                slot += count * (1.0 + model.p_max * g / model.sigma2).log2();
            }
            best += slot;
        }
        best /= model.n_slots as f64;
        if best < model.r_min[k] {
            return Err(Error::Infeasible(format!(
                "user {k}: even the full budget on every subcarrier reaches only \
                 {best:.6} < r_min = {}",
                model.r_min[k]
            )));
        }
    }
    Ok(())
}

/// Primal repair: the subgradient iterates can orbit a dual vertex where
/// several users tie (e.g. identical slots) without ever emitting a jointly
/// feasible schedule. Reassign the best cells to deficient users one at a
/// time, donated by the highest-surplus owner, re-water-filling after each
/// move so stationarity is preserved by construction.
fn repair_feasibility(
    mut assign: Assignment,
    dual: &DualState,
    model: &RateModel,
) -> Result<(Allocation, Vec<f64>, Vec<f64>)> {
    let nf = model.n_f;
    for _ in 0..model.n_slots * nf {
        let (alloc, rho) = fill_powers(&assign, &dual.nu, model)?;
        let rates = user_rates(&alloc, model);
        let deficits: Vec<f64> =
            rates.iter().zip(&model.r_min).map(|(r, m)| (m - r).max(0.0)).collect();
        let Some((k, _)) = deficits
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 1e-9)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        else {
            return Ok((alloc, rho, rates));
        };
        // donate the cell where k's gain is highest, from an idle slot cell
        // or from the owner with the largest surplus
        let mut best_cell: Option<(usize, usize)> = None;
        let mut best_gain = 0.0;
        for n in 0..model.n_slots {
            let kp = alloc.irs_user[n];
            for i in 1..=nf {
                let owner = assign.user[n * nf + (i - 1)];
                let donatable = match owner {
                    None => true,
                    Some(d) => d != k && rates[d] - model.r_min[d] > model.r_min[d] + 1.0,
                };
                if donatable {
                    let g = model.gain(k, kp, i, n);
                    if g > best_gain {
                        best_gain = g;
                        best_cell = Some((n, i));
                    }
                }
            }
        }
        match best_cell {
            Some((n, i)) => assign.user[n * nf + (i - 1)] = Some(k),
            None => break,
        }
    }
    Err(Error::Infeasible("primal repair could not satisfy all minimum rates".into()))
}

pub fn solve_subproblem1(
    trajectory: &Trajectory,
    partition: &ModePartition,
    scenario: &Scenario,
    opts: &RaOptions,
) -> Result<RaSolution> {
    let model = RateModel::build(trajectory.slot_positions(), partition, scenario, opts.upper)?;
    solve_with_model(&model, opts)
}

/// Dual loop on a prebuilt rate model (shared with the trajectory solver).
pub fn solve_with_model(model: &RateModel, opts: &RaOptions) -> Result<RaSolution> {
    check_rate_reachability(model)?;
    let mut dual = DualState::init(model);
    // incumbent: allocation, rates, objective, and the (nu, varrho) that
    // produced it, so the returned duals certify the returned allocation
    let mut best: Option<(Allocation, Vec<f64>, f64, Vec<f64>, Vec<f64>)> = None;
    let mut best_dual = f64::INFINITY;
    let mut prev_assign: Option<Assignment> = None;
    let mut iterations = 0;

    for l in 1..=opts.max_iters {
        iterations = l;
        let m = marginals(&dual, model)?;
        let assign = binary_update(&m);
        let (alloc, rho_star) = fill_powers(&assign, &dual.nu, model)?;
        dual.varrho = rho_star;
        let rates = user_rates(&alloc, model);
        let obj: f64 = rates.iter().sum();
        let feasible = rates
            .iter()
            .zip(&model.r_min)
            .all(|(r, rm)| *r >= rm - 1e-9);

        // dual value at these multipliers (power terms vanish by bisection)
        let dv: f64 = rates
            .iter()
            .zip(&dual.nu)
            .zip(&model.r_min)
            .map(|((r, nu), rm)| (1.0 + nu) * r - nu * rm)
            .sum();
        best_dual = best_dual.min(dv);

        let improved = match &best {
            Some((_, _, b, _, _)) => feasible && obj > *b,
            None => feasible,
        };
        if improved {
            best = Some((alloc.clone(), rates.clone(), obj, dual.nu.clone(), dual.varrho.clone()));
        }

        // fixed point: same schedule twice in a row while feasible
        let stable = prev_assign.as_ref() == Some(&assign);
        if feasible && stable && best.is_some() {
            break;
        }
        // converged within tolerance while feasible
        if let Some((_, _, b, _, _)) = &best {
            if feasible && stable_enough(obj, *b, opts.tol) && l > 10 {
                break;
            }
        }
        prev_assign = Some(assign);

        dual_update(&mut dual, &alloc, &rates, model, opts.tau0 / (l as f64).sqrt());
        if dual.nu.iter().any(|&v| v > opts.nu_cap) {
            return Err(Error::Infeasible(
                "minimum-rate multiplier diverged; rate constraints unattainable".into(),
            ));
        }
    }

    let (allocation, per_user_rates, sum_rate) = match best {
        Some((alloc, rates, obj, nu, rho)) => {
            dual.nu = nu;
            dual.varrho = rho;
            (alloc, rates, obj)
        }
        None => {
            let assign = prev_assign.ok_or_else(|| {
                Error::Infeasible("dual loop produced no schedule".into())
            })?;
            let (alloc, rho, rates) = repair_feasibility(assign, &dual, model)?;
            dual.varrho = rho;
            let obj = rates.iter().sum();
            (alloc, rates, obj)
        }
    };
    let gap = if sum_rate > 0.0 {
        ((best_dual - sum_rate) / sum_rate).max(0.0)
    } else {
        0.0
    };
    Ok(RaSolution {
        allocation,
        duals: dual,
        sum_rate,
        per_user_rates,
        dual_value: best_dual,
        gap,
        iterations,
    })
}

fn stable_enough(obj: f64, best: f64, tol: f64) -> bool {
    (obj - best).abs() <= tol * best.abs().max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::mode_partition;
    use approx::assert_relative_eq;

    #[test]
    fn waterfill_plugin() {
        let p = waterfill_power(0.0, 1.0 / LN2, 2.0, 1.0, 1).unwrap();
        assert_relative_eq!(p, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn waterfill_clamps_below_floor() {
        // level = 1, floor = sigma2/g = 10
        assert_eq!(waterfill_power(0.0, 1.0 / LN2, 0.1, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn waterfill_zero_dual_errors() {
        assert!(matches!(waterfill_power(0.0, 0.0, 1.0, 1.0, 1), Err(Error::ZeroDual)));
    }

    #[test]
    fn rate_bracket_zero_at_zero() {
        assert_eq!(rate_bracket(0.0), 0.0);
    }

    #[test]
    fn rate_bracket_plugin_at_one() {
        // log2(2) - 1/(2 ln2)
        assert_relative_eq!(rate_bracket(1.0), 1.0 - 1.0 / (2.0 * LN2), max_relative = 1e-12);
    }

    #[test]
    fn rate_bracket_nonnegative_sweep() {
        let mut x = 0.0;
        while x < 1e6 {
            assert!(rate_bracket(x) >= 0.0, "bracket negative at {x}");
            x = (x + 1e-3) * 1.3;
        }
    }

    fn toy_marginals(base: Vec<f64>, kn: usize, nf: usize, ns: usize) -> Marginals {
        Marginals {
            n_users: kn,
            n_f: nf,
            n_slots: ns,
            partition: mode_partition(0.125, nf.max(4)).unwrap(),
            base_t: base,
            t_corr: Vec::new(),
            m_u_v: vec![0.0; ns * kn * nf],
            m_s_v: vec![0.0; ns * kn],
        }
    }

    #[test]
    fn binary_update_dominant_pair_everywhere() {
        // K=2, one slot; pair (k=1, kp=0) strictly dominates on all modes
        let kn = 2;
        let mut base = vec![0.1; kn * kn * 4];
        for j in 0..4 {
            base[((0 * kn + 1) * kn + 0) * 4 + j] = 5.0;
        }
        let m = toy_marginals(base, kn, 4, 1);
        let a = binary_update(&m);
        assert_eq!(a.irs_user, vec![0]);
        assert!(a.user.iter().all(|&u| u == Some(1)));
    }

    #[test]
    fn binary_update_tie_breaks_to_lowest_index() {
        let kn = 2;
        let base = vec![1.0; kn * kn * 4]; // everything tied
        let m = toy_marginals(base, kn, 4, 1);
        let a = binary_update(&m);
        assert_eq!(a.irs_user, vec![0]);
        assert!(a.user.iter().all(|&u| u == Some(0)));
    }

    #[test]
    fn binary_update_leaves_worthless_subcarriers_idle() {
        let m = toy_marginals(vec![0.0; 4], 1, 4, 1);
        let a = binary_update(&m);
        assert!(a.user.iter().all(|u| u.is_none()));
    }

    fn small_scenario(n_users: usize, n_f: usize, n_slots: usize) -> Scenario {
        let mut s = Scenario::desk_default();
        s.users.truncate(n_users);
        for u in &mut s.users {
            u.r_min = 0.0;
        }
        s.ofdm.n_f = n_f;
        s.flight.n_slots = n_slots;
        s.flight.dt = 1000.0; // kinematics irrelevant for RA-only tests
        s
    }

    /// Exact water-filling over a fixed set of gains: maximize sum log2(1+p g/s2)
    /// subject to sum p = p_max.
    fn oracle_waterfill(gains: &[f64], p_max: f64, sigma2: f64) -> f64 {
        let mut floors: Vec<f64> = gains.iter().map(|g| sigma2 / g).collect();
        floors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = 0.0f64;
        for m in 1..=floors.len() {
            let level = (p_max + floors[..m].iter().sum::<f64>()) / m as f64;
            if level <= floors[m - 1] && m < floors.len() {
                continue;
            }
            if m < floors.len() && level > floors[m] {
                continue;
            }
            let obj: f64 = floors[..m].iter().map(|f| (level / f).log2()).sum();
            best = best.max(obj);
        }
        best
    }

    #[test]
    fn single_user_matches_waterfill_oracle() {
        let s = small_scenario(1, 8, 2);
        let part = mode_partition(0.125, 8).unwrap();
        let traj = Trajectory::straight_line(&s);
        let sol = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
        let model = RateModel::build(traj.slot_positions(), &part, &s, false).unwrap();
        let mut oracle = 0.0;
        for n in 0..2 {
            let gains: Vec<f64> = (1..=8).map(|i| model.gain(0, 0, i, n)).collect();
            oracle += oracle_waterfill(&gains, s.ofdm.p_max, s.ofdm.sigma2());
        }
        oracle /= 2.0;
        assert_relative_eq!(sol.sum_rate, oracle, max_relative = 1e-6);
    }

    #[test]
    fn two_user_enumeration_oracle() {
        // 2 users x 4 subcarriers x 1 slot vs exhaustive binary schedules
        for seed in [3u64, 11, 42] {
            let mut s = Scenario::randomized(seed);
            s.users.truncate(2);
            for u in &mut s.users {
                u.r_min = 0.0;
            }
            s.ofdm.n_f = 4;
            s.flight.n_slots = 1;
            s.flight.dt = 1000.0;
            let part = mode_partition(0.125, 4).unwrap();
            let traj = Trajectory::straight_line(&s);
            let model = RateModel::build(traj.slot_positions(), &part, &s, false).unwrap();

            let mut best = 0.0f64;
            for kp in 0..2usize {
                // 3 choices per subcarrier: user 0, user 1, idle
                for code in 0..81usize {
                    let mut c = code;
                    let mut gains = Vec::new();
                    for i in 1..=4 {
                        let choice = c % 3;
                        c /= 3;
                        if choice < 2 {
                            gains.push(model.gain(choice, kp, i, 0));
                        }
                    }
                    if gains.is_empty() {
                        continue;
                    }
                    best = best.max(oracle_waterfill(&gains, s.ofdm.p_max, s.ofdm.sigma2()));
                }
            }
            let sol = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
            assert!(
                sol.sum_rate >= best * 0.98 && sol.sum_rate <= best * 1.0 + 1e-9,
                "seed {seed}: solver {} vs oracle {best}",
                sol.sum_rate
            );
        }
    }

    #[test]
    fn zero_budget_zero_objective() {
        let mut s = small_scenario(2, 4, 1);
        s.ofdm.p_max = 0.0;
        let part = mode_partition(0.125, 4).unwrap();
        let traj = Trajectory::straight_line(&s);
        let sol = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
        assert_eq!(sol.sum_rate, 0.0);
    }

    #[test]
    fn zero_budget_infeasible_with_rate_floor() {
        let mut s = small_scenario(2, 4, 1);
        s.ofdm.p_max = 0.0;
        s.users[0].r_min = 0.5;
        let part = mode_partition(0.125, 4).unwrap();
        let traj = Trajectory::straight_line(&s);
        let res = solve_subproblem1(&traj, &part, &s, &RaOptions::default());
        assert!(matches!(res, Err(Error::Infeasible(_))));
    }

    #[test]
    fn kkt_residuals_on_desk_solve() {
        let mut s = Scenario::desk_default();
        s.ofdm.n_f = 16;
        s.flight.n_slots = 5;
        s.flight.dt = 10.0;
        let part = mode_partition(0.14, 16).unwrap();
        let traj = Trajectory::straight_line(&s);
        let sol = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
        let model = RateModel::build(traj.slot_positions(), &part, &s, false).unwrap();
        let a = &sol.allocation;
        for n in 0..a.n_slots {
            let kp = a.irs_user[n];
            for i in 1..=a.n_f {
                if let Some(k) = a.assigned(i, n) {
                    let p = a.power[n * a.n_f + (i - 1)];
                    if p > 0.0 {
                        let g = model.gain(k, kp, i, n);
                        let level = (sol.duals.nu[k] + 1.0)
                            / (sol.duals.varrho[n] * LN2 * a.n_slots as f64);
                        assert!((level - model.sigma2 / g - p).abs() < 1e-9);
                    }
                }
            }
            // budget binds (complementary slackness)
            assert_relative_eq!(a.slot_power(n), s.ofdm.p_max, max_relative = 1e-9);
        }
    }

    #[test]
    fn allocation_constraint_bits() {
        let s = Scenario::randomized(5);
        let part = mode_partition(0.14, s.ofdm.n_f).unwrap();
        let traj = Trajectory::straight_line(&s);
        let sol = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
        let a = &sol.allocation;
        for n in 0..a.n_slots {
            let su: f64 = (0..a.n_users).map(|k| a.s(k, n)).sum();
            assert_eq!(su, 1.0);
            for i in 1..=a.n_f {
                let uu: f64 = (0..a.n_users).map(|k| a.u(k, i, n)).sum();
                assert!(uu <= 1.0);
                for k in 0..a.n_users {
                    for kp in 0..a.n_users {
                        assert_eq!(a.t(k, kp, i, n), a.u(k, i, n) * a.s(kp, n));
                        if a.t(k, kp, i, n) == 0.0 {
                            assert_eq!(a.p_tilde(k, kp, i, n), 0.0);
                        }
                    }
                }
            }
            assert!(a.slot_power(n) <= s.ofdm.p_max * (1.0 + 1e-9));
        }
        // minimum rates honored
        for (r, u) in sol.per_user_rates.iter().zip(&s.users) {
            assert!(*r >= u.r_min - 1e-9);
        }
    }

    #[test]
    fn dual_update_directions() {
        let s = small_scenario(2, 4, 1);
        let part = mode_partition(0.125, 4).unwrap();
        let traj = Trajectory::straight_line(&s);
        let model = RateModel::build(traj.slot_positions(), &part, &s, false).unwrap();
        let mut dual = DualState::init(&model);
        dual.nu = vec![1.0, 1.0];
        let alloc = Allocation::empty(2, 4, 1);
        // user 0 has surplus, user 1 has deficit (r_min = 0 here, so force it)
        let mut m = model.clone();
        m.r_min = vec![0.0, 2.0];
        dual_update(&mut dual, &alloc, &[1.0, 1.0], &m, 0.5);
        assert_relative_eq!(dual.nu[0], 0.5); // surplus: decreases toward 0
        assert_relative_eq!(dual.nu[1], 1.5); // deficit: increases by tau*(r_min - r)
        // slack power constraint: multiplier decreases to the floor
        assert_eq!(dual.varrho[0], (DualState::init(&m).varrho[0] - 0.5 * m.p_max).max(VARRHO_FLOOR));
    }

    #[test]
    fn dual_update_entry_multipliers_decay() {
        let s = small_scenario(2, 4, 1);
        let part = mode_partition(0.125, 4).unwrap();
        let traj = Trajectory::straight_line(&s);
        let model = RateModel::build(traj.slot_positions(), &part, &s, false).unwrap();
        let mut dual = DualState::init(&model);
        let len = 2 * 2 * 4;
        dual.varsigma = vec![1.0; len];
        let mut alloc = Allocation::empty(2, 4, 1);
        alloc.user[0] = Some(0); // u=1, t=1 for kp=0 => slack u-t = 0 for that kp
        dual_update(&mut dual, &alloc, &[0.0, 0.0], &model, 0.25);
        // entries with u=1, s=0 (kp=1): slack 1, multiplier drops by tau
        let idx = model.idx4(0, 1, 1, 0);
        assert_relative_eq!(dual.varsigma[idx], 0.75);
        // entries with u=1, s=1 (kp=0): slack 0, unchanged
        let idx0 = model.idx4(0, 0, 1, 0);
        assert_relative_eq!(dual.varsigma[idx0], 1.0);
    }

    #[test]
    fn upper_bound_dominates_lower_bound() {
        let s = Scenario::randomized(9);
        let part = mode_partition(0.14, s.ofdm.n_f).unwrap();
        let traj = Trajectory::straight_line(&s);
        let lb = solve_subproblem1(&traj, &part, &s, &RaOptions::default()).unwrap();
        let ub = solve_subproblem1(
            &traj,
            &part,
            &s,
            &RaOptions { upper: true, ..Default::default() },
        )
        .unwrap();
        assert!(ub.sum_rate >= lb.sum_rate - 1e-9);
    }
}
