//! System configuration: users, IRS, OFDM numerology, and flight limits.
//!
//! All quantities are stored in linear units (W, Hz, m). dB conversions
//! happen only at the configuration file boundary in the cli module.

use crate::geometry::Vec3;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// IRS panel: a uniform planar array of passive reflection units.
#[derive(Debug, Clone)]
pub struct IrsSpec {
    pub location: Vec3,
    pub m_r: usize,
    pub m_c: usize,
    /// Row element spacing in meters.
    pub d_r: f64,
    /// Column element spacing in meters.
    pub d_c: f64,
    /// Common reflection amplitude, in [0, 1].
    pub amplitude_a: f64,
}

impl IrsSpec {
    /// Default PRU spacing is one tenth of the carrier wavelength.
    pub fn default_spacing(f_c: f64) -> f64 {
        SPEED_OF_LIGHT / (10.0 * f_c)
    }
}

/// One ground user at z = 0.
#[derive(Debug, Clone)]
pub struct UserSpec {
    pub location: Vec3,
    /// Path loss exponent of the UAV-user link.
    pub alpha_ug: f64,
    /// Path loss exponent of the IRS-user link.
    pub alpha_rg: f64,
    /// Linear Rician factor of the UAV-user link.
    pub kappa_ug: f64,
    /// Linear Rician factor of the IRS-user link.
    pub kappa_rg: f64,
    /// Minimum required average rate in bit/s/Hz.
    pub r_min: f64,
}

/// OFDM numerology and the power budget.
#[derive(Debug, Clone)]
pub struct OfdmNumerology {
    pub n_f: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Linear channel power gain at 1 m reference distance.
    pub beta0: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Per-slot transmit power budget in W.
    pub p_max: f64,
}

impl OfdmNumerology {
    /// Noise power per subcarrier in W.
    pub fn sigma2(&self) -> f64 {
        self.noise_psd * self.delta_f
    }
}

/// UAV flight plan: fixed endpoints plus kinematic limits.
#[derive(Debug, Clone)]
pub struct FlightPlan {
    pub q_initial: Vec3,
    pub q_final: Vec3,
    /// Number of time slots N; the trajectory has N+1 waypoints.
    pub n_slots: usize,
    /// Slot duration in seconds.
    pub dt: f64,
    /// Maximum speed in m/s.
    pub v_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Full system configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub users: Vec<UserSpec>,
    pub irs: IrsSpec,
    pub ofdm: OfdmNumerology,
    pub flight: FlightPlan,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::Config("at least one user is required".into()));
        }
        for (k, u) in self.users.iter().enumerate() {
            if u.location.z != 0.0 {
                return Err(Error::Config(format!("user {k}: location.z must be 0")));
            }
            if u.alpha_ug < 2.0 || u.alpha_rg < 2.0 {
                return Err(Error::Config(format!("user {k}: path loss exponents must be >= 2")));
            }
            if u.kappa_ug < 0.0 || u.kappa_rg < 0.0 {
                return Err(Error::Config(format!("user {k}: Rician factors must be >= 0")));
            }
            if u.r_min < 0.0 {
                return Err(Error::Config(format!("user {k}: r_min must be >= 0")));
            }
        }
        let irs = &self.irs;
        if irs.m_r < 1 || irs.m_c < 1 {
            return Err(Error::Config("irs: m_r and m_c must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&irs.amplitude_a) {
            return Err(Error::Config("irs: amplitude must lie in [0, 1]".into()));
        }
        if irs.d_r <= 0.0 || irs.d_c <= 0.0 {
            return Err(Error::Config("irs: element spacings must be positive".into()));
        }
        let o = &self.ofdm;
        if o.n_f < 1 {
            return Err(Error::Config("ofdm: n_f must be >= 1".into()));
        }
        if o.delta_f <= 0.0 || o.f_c <= 0.0 || o.beta0 <= 0.0 || o.noise_psd <= 0.0 {
            return Err(Error::Config("ofdm: delta_f, f_c, beta0, noise_psd must be positive".into()));
        }
        if o.p_max < 0.0 {
            return Err(Error::Config("ofdm: p_max must be >= 0".into()));
        }
        let f = &self.flight;
        if f.n_slots < 1 {
            return Err(Error::Config("flight: n_slots must be >= 1".into()));
        }
        if f.dt <= 0.0 || f.v_max < 0.0 {
            return Err(Error::Config("flight: dt must be positive and v_max >= 0".into()));
        }
        if f.z_min > f.z_max {
            return Err(Error::Config("flight: z_min must not exceed z_max".into()));
        }
        for (name, q) in [("q_initial", f.q_initial), ("q_final", f.q_final)] {
            if !(f.z_min..=f.z_max).contains(&q.z) {
                return Err(Error::Config(format!("flight: {name}.z outside [z_min, z_max]")));
            }
        }
        Ok(())
    }

    /// Desk-scale default configuration: 3 users,
    /// 128 subcarriers, 60 slots, 64x64 PRUs. Small enough that a full solve
    /// finishes in seconds while keeping the geometry of the full setup.
    pub fn desk_default() -> Scenario {
        let f_c = 3.0e9;
        let spacing = IrsSpec::default_spacing(f_c);
        Scenario {
            users: vec![
                UserSpec {
                    location: Vec3::new(150.0, 450.0, 0.0),
                    alpha_ug: 2.5,
                    alpha_rg: 2.5,
                    kappa_ug: 10.0,
                    kappa_rg: 10.0,
                    r_min: 0.5,
                },
                UserSpec {
                    location: Vec3::new(400.0, 300.0, 0.0),
                    alpha_ug: 2.5,
                    alpha_rg: 2.5,
                    kappa_ug: 10.0,
                    kappa_rg: 10.0,
                    r_min: 0.5,
                },
                UserSpec {
                    location: Vec3::new(450.0, 420.0, 0.0),
                    alpha_ug: 2.5,
                    alpha_rg: 2.5,
                    kappa_ug: 10.0,
                    kappa_rg: 10.0,
                    r_min: 0.5,
                },
            ],
            irs: IrsSpec {
                location: Vec3::new(200.0, 500.0, 30.0),
                m_r: 64,
                m_c: 64,
                d_r: spacing,
                d_c: spacing,
                amplitude_a: 0.9,
            },
            ofdm: OfdmNumerology {
                n_f: 128,
                delta_f: 100.0e3,
                f_c,
                beta0: 1.0e-5,         // -50 dBW at 1 m
                noise_psd: 10f64.powf((-169.0 - 30.0) / 10.0), // -169 dBm/Hz
                p_max: 10f64.powf((35.0 - 30.0) / 10.0),       // 35 dBm
            },
            flight: FlightPlan {
                q_initial: Vec3::new(0.0, 0.0, 100.0),
                q_final: Vec3::new(500.0, 500.0, 100.0),
                n_slots: 60,
                dt: 1.0,
                v_max: 20.0,
                z_min: 100.0,
                z_max: 150.0,
            },
        }
    }

    /// Small randomized variant of the desk scenario for sweeps and
    /// stress tests: user positions, Rician factors, minimum rates, and the
    /// power budget are jittered deterministically from `seed`.
    pub fn randomized(seed: u64) -> Scenario {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = Scenario::desk_default();
        for u in &mut s.users {
            u.location = Vec3::new(rng.gen_range(50.0..450.0), rng.gen_range(50.0..450.0), 0.0);
            let kappa_db: f64 = rng.gen_range(2.0..14.0);
            u.kappa_ug = db_to_linear(kappa_db);
            u.kappa_rg = db_to_linear(kappa_db);
            u.r_min = rng.gen_range(0.2..0.8);
        }
        s.ofdm.n_f = 32;
        s.ofdm.p_max = dbm_to_watts(rng.gen_range(30.0..40.0));
        s.flight.n_slots = 8;
        s.flight.dt = 5.0; // straight line stays flyable in 8 slots
        s
    }

    /// Copy with the IRS disabled (zero reflection amplitude).
    pub fn without_irs(&self) -> Scenario {
        let mut s = self.clone();
        s.irs.amplitude_a = 0.0;
        s
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_valid() {
        let s = Scenario::desk_default();
        s.validate().unwrap();
        assert_eq!(s.n_users(), 3);
        // straight line between endpoints is flyable within the slot budget
        let total = crate::geometry::dist(s.flight.q_initial, s.flight.q_final);
        assert!(total <= s.flight.n_slots as f64 * s.flight.dt * s.flight.v_max);
    }

    #[test]
    fn db_conversions() {
        assert!((db_to_linear(-50.0) - 1.0e-5).abs() < 1e-17);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(35.0) - 3.16227766).abs() < 1e-6);
    }

    #[test]
    fn validate_rejects_bad_user_height() {
        let mut s = Scenario::desk_default();
        s.users[0].location.z = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn validate_rejects_endpoint_outside_altitude_band() {
        let mut s = Scenario::desk_default();
        s.flight.q_initial.z = 10.0;
        assert!(s.validate().is_err());
    }
}
