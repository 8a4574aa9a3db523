//! Parametric four-mode approximation of the cosine fading pattern:
//! lower/upper bound channel gains and the time-shared rate function used by
//! both the resource allocation and trajectory subproblems.

use crate::channel::{beam_pattern, psi_offsets};
use crate::geometry::{dist, Vec3};
use crate::scenario::Scenario;
use crate::{Error, Result};

/// Fixed partition of subcarriers 1..=n_f into the four contiguous fading
/// mode index sets. |F1| = |F4| = round(2 alpha n_f); the remainder is split
/// evenly between F2 and F3 (F3 takes the odd leftover).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePartition {
    pub alpha: f64,
    pub n_f: usize,
    sizes: [usize; 4],
}

pub fn mode_partition(alpha: f64, n_f: usize) -> Result<ModePartition> {
    if !(alpha > 0.0 && alpha < 0.25) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if n_f < 4 {
        return Err(Error::Config(format!("n_f = {n_f} too small for a four-mode partition")));
    }
    let n1 = (2.0 * alpha * n_f as f64).round() as usize;
    debug_assert!(2 * n1 <= n_f);
    let rem = n_f - 2 * n1;
    let n2 = rem / 2;
    let n3 = rem - n2;
    Ok(ModePartition { alpha, n_f, sizes: [n1, n2, n3, n1] })
}

impl ModePartition {
    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    /// Fading mode (1..=4) of subcarrier `i` (1-based).
    pub fn mode_of(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.n_f);
        let [n1, n2, n3, _] = self.sizes;
        if i <= n1 {
            1
        } else if i <= n1 + n2 {
            2
        } else if i <= n1 + n2 + n3 {
            3
        } else {
            4
        }
    }

    /// Subcarrier index range (1-based, inclusive) of mode `j`.
    pub fn mode_range(&self, j: usize) -> std::ops::RangeInclusive<usize> {
        let start: usize = self.sizes[..j - 1].iter().sum::<usize>() + 1;
        let end = start + self.sizes[j - 1] - 1;
        start..=end
    }
}

/// Distance-independent coefficients of the bound gain closed form
/// a/v_ug + b/v_ur + d_j/(sqrt(v_ug) sqrt(v_ur)) for the pair
/// (user k, IRS-assisted user k').
#[derive(Debug, Clone, Copy)]
pub struct LinkCoeffs {
    pub a: f64,
    pub b: f64,
    /// Cross-term coefficient per fading mode for the lower bound.
    pub d_lb: [f64; 4],
    /// Cross-term coefficient per fading mode for the upper bound
    /// (staircase shifted one mode up, mode 0 being the peak).
    pub d_ub: [f64; 4],
}

pub fn link_coeffs(k: usize, k_prime: usize, alpha: f64, scenario: &Scenario) -> Result<LinkCoeffs> {
    let u = &scenario.users[k];
    let irs = &scenario.irs;
    let o = &scenario.ofdm;
    let a_coef = o.beta0 * u.kappa_ug / (u.kappa_ug + 1.0);

    let (psi_r, psi_c) = psi_offsets(irs, o.f_c, &scenario.users[k_prime], u)?;
    let beam = beam_pattern(irs.m_r, psi_r) * beam_pattern(irs.m_c, psi_c);
    let d_rg = dist(irs.location, u.location);
    let b_coef = irs.amplitude_a * irs.amplitude_a * o.beta0 * o.beta0 * beam * beam
        * u.kappa_rg
        / (d_rg.powf(u.alpha_rg) * (u.kappa_rg + 1.0));

    // magnitude of the cross term at full coherence (peak level)
    let base = 2.0 * irs.amplitude_a * o.beta0.powf(1.5) * beam.abs()
        * (u.kappa_ug / (u.kappa_ug + 1.0)).sqrt()
        * (u.kappa_rg / (u.kappa_rg + 1.0)).sqrt()
        / d_rg.powf(u.alpha_rg / 2.0);

    let (d_lb, d_ub) = if k_prime == k {
        let c = (2.0 * std::f64::consts::PI * alpha).cos();
        ([base * c, 0.0, -base * c, -base], [base, base * c, 0.0, -base * c])
    } else {
        // non-assisted users are frequency-flat: trough below, peak above
        ([-base; 4], [base; 4])
    };
    Ok(LinkCoeffs { a: a_coef, b: b_coef, d_lb, d_ub })
}

/// Evaluate the closed-form bound gain from the slack values
/// v_ug = d_ug^alpha and v_ur = d_ur^2 in fading mode `j`.
pub fn gain_from_slacks(c: &LinkCoeffs, j: usize, v_ug: f64, v_ur: f64, lower: bool) -> f64 {
    let d = if lower { c.d_lb[j - 1] } else { c.d_ub[j - 1] };
    let g = c.a / v_ug + c.b / v_ur + d / (v_ug.sqrt() * v_ur.sqrt());
    // the trough identity (x - y)^2 >= 0 guarantees nonnegativity
    debug_assert!(g >= -1e-12 * (c.a / v_ug + c.b / v_ur).max(f64::MIN_POSITIVE));
    g.max(0.0)
}

fn slacks(scenario: &Scenario, k: usize, q: Vec3) -> (f64, f64) {
    let d_ug = dist(q, scenario.users[k].location);
    let d_ur = dist(q, scenario.irs.location);
    (d_ug.powf(scenario.users[k].alpha_ug), d_ur * d_ur)
}

/// Lower bound composite gain of user `k` on subcarrier `i` (1-based) when
/// the IRS is assigned to user `k_prime`.
pub fn lb_gain(
    k: usize,
    k_prime: usize,
    i: usize,
    q: Vec3,
    partition: &ModePartition,
    scenario: &Scenario,
) -> Result<f64> {
    let c = link_coeffs(k, k_prime, partition.alpha, scenario)?;
    let (v_ug, v_ur) = slacks(scenario, k, q);
    Ok(gain_from_slacks(&c, partition.mode_of(i), v_ug, v_ur, true))
}

/// Upper bound counterpart of [`lb_gain`].
pub fn ub_gain(
    k: usize,
    k_prime: usize,
    i: usize,
    q: Vec3,
    partition: &ModePartition,
    scenario: &Scenario,
) -> Result<f64> {
    let c = link_coeffs(k, k_prime, partition.alpha, scenario)?;
    let (v_ug, v_ur) = slacks(scenario, k, q);
    Ok(gain_from_slacks(&c, partition.mode_of(i), v_ug, v_ur, false))
}

/// Time-shared rate t log2(1 + p g/(t sigma^2)) with the perspective
/// convention 0 at t = 0.
pub fn lb_rate(t: f64, p_tilde: f64, gain: f64, sigma2: f64) -> Result<f64> {
    debug_assert!((0.0..=1.0).contains(&t));
    debug_assert!(p_tilde >= 0.0);
    if t == 0.0 {
        if p_tilde > 0.0 {
            return Err(Error::InconsistentAllocation(p_tilde));
        }
        return Ok(0.0);
    }
    Ok(t * (1.0 + p_tilde * gain / (t * sigma2)).log2())
}
