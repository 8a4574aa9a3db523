//! LoS composite channel between the UAV and each user under IRS phase
//! control: beam patterns, per-PRU phases, composite power gain, and the
//! peak/trough/DC decomposition of the cosine fading pattern.

use crate::geometry::{angles_irs_user, angles_uav_irs, dist, Vec3};
use crate::scenario::{IrsSpec, Scenario, UserSpec};
use crate::{Result, SPEED_OF_LIGHT};

/// Peak, trough, and DC levels of the composite LoS power gain across
/// subcarriers. Invariant: 0 <= trough <= dc <= peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainLevels {
    pub peak: f64,
    pub trough: f64,
    pub dc: f64,
}

/// Beam pattern B_M(x) = sin(Mx)/sin(x) with the analytic limit +-M at the
/// singular points. The sign of the limit branch matters because the cross
/// term of the composite gain uses the unsquared product.
pub fn beam_pattern(m: usize, x: f64) -> f64 {
    let mf = m as f64;
    let s = x.sin();
    if s.abs() < 1e-9 {
        // near sin(x) = 0 the quotient tends to M cos(Mx)/cos(x) = +-M
        mf * (mf * x).cos() / x.cos()
    } else {
        (mf * x).sin() / s
    }
}

/// Per-PRU phase shifts (row-major, m_r * m_c entries) aligning the IRS
/// toward the assisted user, reduced to [-pi, pi).
pub fn irs_phase_control(
    q: Vec3,
    irs: &IrsSpec,
    f_c: f64,
    assisted: &UserSpec,
) -> Result<Vec<f64>> {
    let rg = angles_irs_user(irs.location, assisted.location)?;
    let ur = angles_uav_irs(q, irs.location)?;
    let theta = rg.theta_eff() + ur.theta_eff();
    let phi = rg.phi_eff() + ur.phi_eff();
    let scale = 2.0 * std::f64::consts::PI * f_c / SPEED_OF_LIGHT;
    let mut phases = Vec::with_capacity(irs.m_r * irs.m_c);
    for mr in 0..irs.m_r {
        for mc in 0..irs.m_c {
            let raw = scale * (irs.d_r * mr as f64 * theta + irs.d_c * mc as f64 * phi);
            phases.push(wrap_phase(raw));
        }
    }
    Ok(phases)
}

fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Row/column beam pattern arguments for the pair (assisted k', user k):
/// psi = pi f_c d (theta_assisted - theta_user)/c with theta the effective
/// user-side direction cosines of the IRS-user link.
pub fn psi_offsets(
    irs: &IrsSpec,
    f_c: f64,
    assisted: &UserSpec,
    other: &UserSpec,
) -> Result<(f64, f64)> {
    let a = angles_irs_user(irs.location, assisted.location)?;
    let o = angles_irs_user(irs.location, other.location)?;
    let scale = std::f64::consts::PI * f_c / SPEED_OF_LIGHT;
    let psi_r = scale * irs.d_r * (a.theta_eff() - o.theta_eff());
    let psi_c = scale * irs.d_c * (a.phi_eff() - o.phi_eff());
    Ok((psi_r, psi_c))
}

/// Decomposition of the composite LoS channel of user `k` when the IRS is
/// aligned toward user `irs_user`: direct amplitude, signed reflected
/// amplitude, the path length difference driving the cosine, and the
/// constant phase offset contributed by the array factors.
#[derive(Debug, Clone, Copy)]
pub struct CompositeParts {
    /// Direct link LoS amplitude sqrt(beta0 kappa/(kappa+1))/d_ug^(alpha/2).
    pub direct_amp: f64,
    /// Reflected link amplitude times the signed beam pattern product.
    pub reflected_amp: f64,
    /// d_ur + d_rg - d_ug in meters; nonnegative by the triangle inequality.
    pub delta_d: f64,
    /// -(M_r - 1) psi_r - (M_c - 1) psi_c.
    pub phase_offset: f64,
}

pub fn composite_parts(
    scenario: &Scenario,
    k: usize,
    irs_user: usize,
    q: Vec3,
) -> Result<CompositeParts> {
    let user = &scenario.users[k];
    let irs = &scenario.irs;
    let o = &scenario.ofdm;
    let d_ug = dist(q, user.location);
    let d_ur = dist(q, irs.location);
    let d_rg = dist(irs.location, user.location);

    let direct_amp =
        (o.beta0 * user.kappa_ug / (user.kappa_ug + 1.0)).sqrt() / d_ug.powf(user.alpha_ug / 2.0);

    let (psi_r, psi_c) = psi_offsets(irs, o.f_c, &scenario.users[irs_user], user)?;
    let beam = beam_pattern(irs.m_r, psi_r) * beam_pattern(irs.m_c, psi_c);
    let reflected_amp = irs.amplitude_a * o.beta0 * (user.kappa_rg / (user.kappa_rg + 1.0)).sqrt()
        / (d_ur * d_rg.powf(user.alpha_rg / 2.0))
        * beam;

    let mr = irs.m_r as f64;
    let mc = irs.m_c as f64;
    Ok(CompositeParts {
        direct_amp,
        reflected_amp,
        delta_d: d_ur + d_rg - d_ug,
        phase_offset: -(mr - 1.0) * psi_r - (mc - 1.0) * psi_c,
    })
}

/// Composite LoS channel power gain of user `k` on subcarrier `i` (1-based)
/// when the IRS phases are aligned toward user `irs_user`.
pub fn los_composite_gain(
    k: usize,
    irs_user: usize,
    i: usize,
    q: Vec3,
    scenario: &Scenario,
) -> Result<f64> {
    let p = composite_parts(scenario, k, irs_user, q)?;
    let arg = 2.0 * std::f64::consts::PI * i as f64 * scenario.ofdm.delta_f * p.delta_d
        / SPEED_OF_LIGHT
        + p.phase_offset;
    let x = p.direct_amp;
    let y = p.reflected_amp;
    Ok(x * x + y * y + 2.0 * x * y * arg.cos())
}

/// Peak, trough, and DC levels over the cosine fading pattern.
pub fn gain_levels(k: usize, irs_user: usize, q: Vec3, scenario: &Scenario) -> Result<GainLevels> {
    let p = composite_parts(scenario, k, irs_user, q)?;
    let x = p.direct_amp;
    let y = p.reflected_amp.abs();
    Ok(GainLevels {
        peak: (x + y) * (x + y),
        trough: (x - y) * (x - y),
        dc: x * x + y * y,
    })
}

/// Period of the cosine fading pattern in units of subcarrier indices:
/// c/(delta_f * (d_ur + d_rg - d_ug)). Infinite when the path difference
/// vanishes (frequency-flat composite channel).
pub fn fading_period(k: usize, q: Vec3, delta_f: f64, scenario: &Scenario) -> f64 {
    let user = &scenario.users[k];
    let delta_d =
        dist(q, scenario.irs.location) + dist(scenario.irs.location, user.location) - dist(q, user.location);
    if delta_d <= 0.0 {
        f64::INFINITY
    } else {
        SPEED_OF_LIGHT / (delta_f * delta_d)
    }
}
