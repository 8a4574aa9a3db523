//! Rician-fading Monte Carlo evaluation: instantaneous composite channels,
//! subcarrier-level and user-level outage, and the average system outage
//! rate of a solved plan.

use crate::channel::{composite_parts, irs_phase_control};
use crate::geometry::{dist, Vec3};
use crate::ra_solver::Allocation;
use crate::scenario::Scenario;
use crate::Result;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::FRAC_1_SQRT_2;

/// Above this PRU count the reflected scatter is drawn in aggregate as
/// CN(0, M_r·M_c) instead of materializing per-element draws.
const PER_PRU_LIMIT: usize = 10_000;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Counter-style key: draws depend only on (seed, k, i, n), never on the
/// order in which cells are visited.
pub fn draw_key(seed: u64, k: usize, i: usize, n: usize) -> u64 {
    let mut h = splitmix(seed);
    for w in [k as u64, i as u64, n as u64] {
        h = splitmix(h ^ w.wrapping_mul(0xd1b54a32d192ed03));
    }
    h
}

fn cn01(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Scattering components of one (k, i, n) cell.
#[derive(Debug, Clone)]
pub struct FadingDraw {
    /// Direct-link scatter, CN(0, 1).
    pub scatter_ug: Complex64,
    /// Per-PRU IRS-user scatter, each CN(0, 1); empty when aggregated.
    pub scatter_rg: Vec<Complex64>,
    /// Aggregated reflected scatter, CN(0, M_r·M_c); set when `scatter_rg`
    /// is empty.
    pub scatter_rg_agg: Complex64,
    pub rng_seed: u64,
}

impl FadingDraw {
    pub fn generate(seed: u64, k: usize, i: usize, n: usize, m_total: usize) -> FadingDraw {
        let key = draw_key(seed, k, i, n);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let scatter_ug = cn01(&mut rng);
        if m_total > PER_PRU_LIMIT {
            let agg = cn01(&mut rng) * (m_total as f64).sqrt();
            FadingDraw { scatter_ug, scatter_rg: Vec::new(), scatter_rg_agg: agg, rng_seed: key }
        } else {
            let scatter_rg = (0..m_total).map(|_| cn01(&mut rng)).collect();
            FadingDraw {
                scatter_ug,
                scatter_rg,
                scatter_rg_agg: Complex64::new(0.0, 0.0),
                rng_seed: key,
            }
        }
    }

    /// Reflected scatter after the unimodular phase matrix: the per-PRU path
    /// rotates each draw, the aggregated path is already CN(0, M_r·M_c).
    pub fn reflected_scatter(&self, phases: &[f64]) -> Complex64 {
        if self.scatter_rg.is_empty() {
            self.scatter_rg_agg
        } else {
            self.scatter_rg
                .iter()
                .zip(phases)
                .map(|(h, phi)| h * Complex64::from_polar(1.0, *phi))
                .sum()
        }
    }
}

/// Instantaneous complex composite channel of user `k` on subcarrier `i`
/// (1-based): deterministic LoS plus the drawn scattering parts.
pub fn sample_composite_channel(
    draw: &FadingDraw,
    k: usize,
    irs_user: usize,
    i: usize,
    q: Vec3,
    scenario: &Scenario,
) -> Result<Complex64> {
    let user = &scenario.users[k];
    let irs = &scenario.irs;
    let o = &scenario.ofdm;
    let p = composite_parts(scenario, k, irs_user, q)?;
    let theta = 2.0 * std::f64::consts::PI * i as f64 * o.delta_f * p.delta_d
        / crate::SPEED_OF_LIGHT
        + p.phase_offset;
    let g_los = Complex64::new(p.direct_amp, 0.0)
        + Complex64::from_polar(p.reflected_amp, theta);

    let d_ug = dist(q, user.location);
    let d_ur = dist(q, irs.location);
    let d_rg = dist(irs.location, user.location);
    let c_ug = (o.beta0 / (d_ug.powf(user.alpha_ug) * (user.kappa_ug + 1.0))).sqrt();
    let c_rg = irs.amplitude_a * o.beta0 / (d_ur * d_rg.powf(user.alpha_rg / 2.0))
        / (user.kappa_rg + 1.0).sqrt();

    let reflected = if c_rg == 0.0 {
        Complex64::new(0.0, 0.0)
    } else if draw.scatter_rg.is_empty() {
        draw.reflected_scatter(&[])
    } else {
        let phases = irs_phase_control(q, irs, o.f_c, &scenario.users[irs_user])?;
        draw.reflected_scatter(&phases)
    };
    Ok(g_los + draw.scatter_ug * c_ug + reflected * c_rg)
}

/// Time-averaged allocated rate counted only on subcarrier-slots whose
/// instantaneous channel supports the backed-off target:
/// (1/N) Σ η·R_LoS·1{R_Rician ≥ η·R_LoS}.
pub fn individual_outage_rate(
    eta: f64,
    los_rates: &[f64],
    rician_rates: &[f64],
    n_slots: usize,
) -> f64 {
    debug_assert_eq!(los_rates.len(), rician_rates.len());
    los_rates
        .iter()
        .zip(rician_rates)
        .map(|(los, ric)| {
            let target = eta * los;
            if *ric >= target {
                target
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n_slots as f64
}

/// User-level indicator on top of the per-run outage rates:
/// (1/L) Σ_l Σ_k R_k·1{R_k ≥ R_min,k}.
pub fn avg_system_outage_rate(per_run_user_rates: &[Vec<f64>], r_min: &[f64]) -> f64 {
    let l_mc = per_run_user_rates.len().max(1);
    per_run_user_rates
        .iter()
        .map(|run| {
            run.iter()
                .zip(r_min)
                .map(|(r, t)| if r >= t { *r } else { 0.0 })
                .sum::<f64>()
        })
        .sum::<f64>()
        / l_mc as f64
}

#[derive(Debug, Clone)]
pub struct McOptions {
    /// Rate back-off control in (0, 1).
    pub eta: f64,
    pub l_mc: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { eta: 0.8, l_mc: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct OutageReport {
    pub eta: f64,
    /// Individual outage rates, one row of K entries per MC run.
    pub per_run_user_rates: Vec<Vec<f64>>,
    pub avg_system_outage_rate: f64,
    /// LoS per-user rates of the evaluated plan (outage-free reference).
    pub los_user_rates: Vec<f64>,
}

/// One active subcarrier-slot of the plan, with its LoS state precomputed.
struct Cell {
    k: usize,
    irs_user: usize,
    i: usize,
    n: usize,
    q: Vec3,
    snr_scale: f64, // p / sigma^2
    los_rate: f64,
}

/// Monte Carlo outage evaluation of a solved plan under Rician fading.
pub fn evaluate_outage(
    alloc: &Allocation,
    slot_positions: &[Vec3],
    scenario: &Scenario,
    opts: &McOptions,
) -> Result<OutageReport> {
    assert!(opts.eta > 0.0 && opts.eta < 1.0, "eta must lie in (0, 1)");
    let sigma2 = scenario.ofdm.sigma2();
    let kn = scenario.n_users();
    let m_total = scenario.irs.m_r * scenario.irs.m_c;

    let mut cells: Vec<Cell> = Vec::new();
    for n in 0..alloc.n_slots {
        let q = slot_positions[n];
        for i in 1..=alloc.n_f {
            if let Some(k) = alloc.assigned(i, n) {
                let p = alloc.power[n * alloc.n_f + (i - 1)];
                if p <= 0.0 {
                    continue;
                }
                let g = crate::channel::los_composite_gain(k, alloc.irs_user[n], i, q, scenario)?;
                cells.push(Cell {
                    k,
                    irs_user: alloc.irs_user[n],
                    i,
                    n,
                    q,
                    snr_scale: p / sigma2,
                    los_rate: (1.0 + p * g / sigma2).log2(),
                });
            }
        }
    }

    let mut los_user_rates = vec![0.0; kn];
    for c in &cells {
        los_user_rates[c.k] += c.los_rate / alloc.n_slots as f64;
    }

    let per_run_user_rates: Result<Vec<Vec<f64>>> = (0..opts.l_mc)
        .into_par_iter()
        .map(|l| {
            let run_seed = splitmix(opts.seed ^ (l as u64).wrapping_mul(0xa0761d6478bd642f));
            let mut los = vec![Vec::new(); kn];
            let mut ric = vec![Vec::new(); kn];
            for c in &cells {
                let draw = FadingDraw::generate(run_seed, c.k, c.i, c.n, m_total);
                let g = sample_composite_channel(&draw, c.k, c.irs_user, c.i, c.q, scenario)?;
                los[c.k].push(c.los_rate);
                ric[c.k].push((1.0 + c.snr_scale * g.norm_sqr()).log2());
            }
            Ok((0..kn)
                .map(|k| individual_outage_rate(opts.eta, &los[k], &ric[k], alloc.n_slots))
                .collect())
        })
        .collect();
    let per_run_user_rates = per_run_user_rates?;

    let r_min: Vec<f64> = scenario.users.iter().map(|u| u.r_min).collect();
    let avg = avg_system_outage_rate(&per_run_user_rates, &r_min);
    Ok(OutageReport {
        eta: opts.eta,
        per_run_user_rates,
        avg_system_outage_rate: avg,
        los_user_rates,
    })
}
