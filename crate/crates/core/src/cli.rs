//! Scenario ingestion, experiment orchestration, and result emission.
//!
//! Configuration files are TOML; dB quantities are converted to linear units
//! here and nowhere else. All result files are CSV with header rows and
//! floats printed to 9 significant digits so re-runs diff cleanly.

use crate::fading_mc::{evaluate_outage, McOptions};
use crate::geometry::Vec3;
use crate::planner::{
    alternate, baseline_no_irs, baseline_straight_line, baseline_tdma, irs_placement_search,
    solve_upper_bound, sweep_alpha, PlanOptions, Solution,
};
use crate::scenario::{db_to_linear, dbm_to_watts, FlightPlan, IrsSpec, OfdmNumerology, Scenario, UserSpec};
use crate::trajectory_solver::Trajectory;
use crate::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------- config --

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFile {
    /// Ground position [x, y] in meters (users sit at z = 0).
    pub location: [f64; 2],
    pub alpha_ug: f64,
    pub alpha_rg: f64,
    pub kappa_ug_db: f64,
    pub kappa_rg_db: f64,
    pub r_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrsFile {
    pub location: [f64; 3],
    pub m_r: usize,
    pub m_c: usize,
    /// Element spacing in meters; omitted means one tenth of the wavelength.
    pub spacing: Option<f64>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmFile {
    pub n_f: usize,
    pub delta_f_khz: f64,
    pub f_c_ghz: f64,
    /// Reference channel gain at 1 m, in dB.
    pub beta0_db: f64,
    pub noise_psd_dbm_hz: f64,
    pub p_max_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightFile {
    pub q_initial: [f64; 3],
    pub q_final: [f64; 3],
    pub n_slots: usize,
    pub dt: f64,
    pub v_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Human-editable scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub users: Vec<UserFile>,
    pub irs: IrsFile,
    pub ofdm: OfdmFile,
    pub flight: FlightFile,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let f_c = self.ofdm.f_c_ghz * 1e9;
        let spacing = self.irs.spacing.unwrap_or_else(|| IrsSpec::default_spacing(f_c));
        let s = Scenario {
            users: self
                .users
                .iter()
                .map(|u| UserSpec {
                    location: Vec3::new(u.location[0], u.location[1], 0.0),
                    alpha_ug: u.alpha_ug,
                    alpha_rg: u.alpha_rg,
                    kappa_ug: db_to_linear(u.kappa_ug_db),
                    kappa_rg: db_to_linear(u.kappa_rg_db),
                    r_min: u.r_min,
                })
                .collect(),
            irs: IrsSpec {
                location: Vec3::new(self.irs.location[0], self.irs.location[1], self.irs.location[2]),
                m_r: self.irs.m_r,
                m_c: self.irs.m_c,
                d_r: spacing,
                d_c: spacing,
                amplitude_a: self.irs.amplitude,
            },
            ofdm: OfdmNumerology {
                n_f: self.ofdm.n_f,
                delta_f: self.ofdm.delta_f_khz * 1e3,
                f_c,
                beta0: db_to_linear(self.ofdm.beta0_db),
                noise_psd: dbm_to_watts(self.ofdm.noise_psd_dbm_hz),
                p_max: dbm_to_watts(self.ofdm.p_max_dbm),
            },
            flight: FlightPlan {
                q_initial: Vec3::new(
                    self.flight.q_initial[0],
                    self.flight.q_initial[1],
                    self.flight.q_initial[2],
                ),
                q_final: Vec3::new(
                    self.flight.q_final[0],
                    self.flight.q_final[1],
                    self.flight.q_final[2],
                ),
                n_slots: self.flight.n_slots,
                dt: self.flight.dt,
                v_max: self.flight.v_max,
                z_min: self.flight.z_min,
                z_max: self.flight.z_max,
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn serialize(&self) -> String {
        toml::to_string_pretty(self).expect("scenario file serialization cannot fail")
    }
}

// --------------------------------------------------------------- results --

/// 9 significant digits; enough to make re-runs byte-comparable without
/// printing noise beyond double precision.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.8e}")
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(path)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_metadata(dir: &Path, seed: u64, alpha: f64, wall: std::time::Duration) -> Result<()> {
    let rows = vec![
        format!("seed,{seed}"),
        format!("alpha,{}", fmt_f(alpha)),
        format!("git_describe,{}", git_describe()),
        format!("wall_time_s,{}", fmt_f(wall.as_secs_f64())),
    ];
    write_csv(dir, "metadata.csv", "key,value", &rows)?;
    Ok(())
}

fn write_solution(dir: &Path, sol: &Solution) -> Result<()> {
    let traj_rows: Vec<String> = sol
        .trajectory
        .positions
        .iter()
        .enumerate()
        .map(|(n, q)| format!("{n},{},{},{}", fmt_f(q.x), fmt_f(q.y), fmt_f(q.z)))
        .collect();
    write_csv(dir, "trajectory.csv", "n,x,y,z", &traj_rows)?;

    let a = &sol.allocation;
    let mut alloc_rows = Vec::new();
    for n in 0..a.n_slots {
        for i in 1..=a.n_f {
            if let Some(k) = a.assigned(i, n) {
                let p = a.power[n * a.n_f + (i - 1)];
                alloc_rows.push(format!("{n},{i},{k},{},{}", a.irs_user[n], fmt_f(p)));
            }
        }
    }
    write_csv(dir, "allocation.csv", "n,i,k,k_prime,p", &alloc_rows)?;

    let trace_rows: Vec<String> = sol
        .iteration_trace
        .iter()
        .enumerate()
        .map(|(h, v)| format!("{},{}", h + 1, fmt_f(*v)))
        .collect();
    write_csv(dir, "trace.csv", "half_iteration,lb_sum_rate", &trace_rows)?;

    let user_rows: Vec<String> = sol
        .per_user_rates
        .iter()
        .enumerate()
        .map(|(k, r)| format!("{k},{}", fmt_f(*r)))
        .collect();
    write_csv(dir, "user_rates.csv", "k,rate", &user_rows)?;
    Ok(())
}

// ------------------------------------------------------------------- cli --

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    #[value(name = "1")]
    StraightLine,
    #[value(name = "2")]
    NoIrs,
    Tdma,
}

#[derive(Debug, Parser)]
#[command(name = "irs-uav", about = "IRS-assisted UAV OFDMA planning toolkit")]
pub struct Cli {
    /// Scenario TOML; the built-in desk-scale default is used when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Pin the UAV altitude to z_min instead of optimizing it.
    #[arg(long, global = true)]
    pub freeze_altitude: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full alternating optimization at a fixed approximation parameter.
    Solve {
        #[arg(long, default_value_t = 0.14)]
        alpha: f64,
    },
    /// Lower/upper bound sum rates over a grid of approximation parameters.
    SweepAlpha,
    /// Proposed design against the comparison schemes.
    Baselines {
        #[arg(long, default_value_t = 0.14)]
        alpha: f64,
        /// Run a single baseline instead of all of them.
        #[arg(long)]
        baseline: Option<BaselineKind>,
    },
    /// Monte Carlo outage evaluation of a conservative (rate-backed-off) plan.
    Outage {
        #[arg(long, default_value_t = 0.14)]
        alpha: f64,
        #[arg(long, default_value_t = 0.8)]
        eta: f64,
        #[arg(long, default_value_t = 200)]
        mc_runs: usize,
    },
    /// Exhaustive IRS placement over a horizontal grid.
    PlaceIrs {
        #[arg(long, default_value_t = 0.14)]
        alpha: f64,
        /// Grid step in meters over the [0, 500]^2 ground square.
        #[arg(long, default_value_t = 125.0)]
        grid_step: f64,
    },
    /// Dump composite LoS gains over subcarriers and slots.
    ChannelProbe,
}

fn plan_options(freeze_altitude: bool) -> PlanOptions {
    let mut opts = PlanOptions::default();
    opts.traj.freeze_altitude = freeze_altitude;
    opts
}

fn load(cli_scenario: &Option<PathBuf>) -> Result<Scenario> {
    match cli_scenario {
        Some(path) => ScenarioFile::load(path)?.to_scenario(),
        None => Ok(Scenario::desk_default()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let t0 = std::time::Instant::now();
    let scenario = load(&cli.scenario)?;
    let opts = plan_options(cli.freeze_altitude);
    let dir = cli.out.as_path();

    let alpha_used = match &cli.command {
        Command::Solve { alpha } => {
            let sol = alternate(&scenario, *alpha, &opts)?;
            write_solution(dir, &sol)?;
            println!(
                "lb sum rate {} bit/s/Hz over {} subcarriers (normalized {}), feasible: {}",
                fmt_f(sol.lb_sum_rate),
                scenario.ofdm.n_f,
                fmt_f(sol.normalized_sum_rate),
                sol.feasible
            );
            *alpha
        }
        Command::SweepAlpha => {
            let grid: Vec<f64> = (1..=12).map(|j| 0.02 * j as f64).collect();
            let (best, curve) = sweep_alpha(&scenario, &grid, &opts)?;
            let rows: Vec<String> = curve
                .iter()
                .map(|(a, lb, ub)| format!("{},{},{}", fmt_f(*a), fmt_f(*lb), fmt_f(*ub)))
                .collect();
            write_csv(dir, "alpha_sweep.csv", "alpha,lb_sum_rate,ub_sum_rate", &rows)?;
            println!("best alpha {}", fmt_f(best));
            best
        }
        Command::Baselines { alpha, baseline } => {
            let mut rows = Vec::new();
            let mut emit = |name: &str, sol: Result<Solution>| -> Result<()> {
                let sol = sol?;
                rows.push(format!("{name},{},{}", fmt_f(sol.lb_sum_rate), sol.feasible));
                Ok(())
            };
            match baseline {
                None => {
                    emit("proposed", alternate(&scenario, *alpha, &opts))?;
                    emit("upper_bound", solve_upper_bound(&scenario, *alpha, &opts))?;
                    emit("straight_line", baseline_straight_line(&scenario, *alpha))?;
                    emit("no_irs", baseline_no_irs(&scenario, &opts))?;
                    emit("tdma", baseline_tdma(&scenario, *alpha))?;
                }
                Some(BaselineKind::StraightLine) => {
                    emit("straight_line", baseline_straight_line(&scenario, *alpha))?
                }
                Some(BaselineKind::NoIrs) => emit("no_irs", baseline_no_irs(&scenario, &opts))?,
                Some(BaselineKind::Tdma) => emit("tdma", baseline_tdma(&scenario, *alpha))?,
            }
            write_csv(dir, "baselines.csv", "method,lb_sum_rate,feasible", &rows)?;
            *alpha
        }
        Command::Outage { alpha, eta, mc_runs } => {
            if !(0.0 < *eta && *eta < 1.0) {
                return Err(Error::Config("eta must lie in (0, 1)".into()));
            }
            // conservative design: plan against inflated targets R_min/eta,
            // evaluate outage against the original targets
            let mut inflated = scenario.clone();
            for u in &mut inflated.users {
                u.r_min /= eta;
            }
            let sol = alternate(&inflated, *alpha, &opts)?;
            let mc = McOptions { eta: *eta, l_mc: *mc_runs, seed: cli.seed };
            let report =
                evaluate_outage(&sol.allocation, sol.trajectory.slot_positions(), &scenario, &mc)?;
            let mut rows = Vec::new();
            for (l, run) in report.per_run_user_rates.iter().enumerate() {
                for (k, r) in run.iter().enumerate() {
                    rows.push(format!("{l},{k},{}", fmt_f(*r)));
                }
            }
            write_csv(dir, "outage_runs.csv", "run,k,outage_rate", &rows)?;
            let summary = vec![format!(
                "{},{},{}",
                fmt_f(report.avg_system_outage_rate),
                fmt_f(*eta),
                fmt_f(report.los_user_rates.iter().sum::<f64>())
            )];
            write_csv(dir, "outage.csv", "avg_system_outage_rate,eta,los_sum_rate", &summary)?;
            println!("avg system outage rate {}", fmt_f(report.avg_system_outage_rate));
            *alpha
        }
        Command::PlaceIrs { alpha, grid_step } => {
            if *grid_step <= 0.0 {
                return Err(Error::Config("grid_step must be positive".into()));
            }
            let z = scenario.irs.location.z;
            let mut candidates = Vec::new();
            let steps = (500.0 / grid_step).floor() as usize;
            for ix in 0..=steps {
                for iy in 0..=steps {
                    candidates.push(Vec3::new(ix as f64 * grid_step, iy as f64 * grid_step, z));
                }
            }
            let (best, map) = irs_placement_search(&scenario, &candidates, *alpha, &opts)?;
            let rows: Vec<String> = map
                .iter()
                .map(|(c, v)| format!("{},{},{},{}", fmt_f(c.x), fmt_f(c.y), fmt_f(c.z), fmt_f(*v)))
                .collect();
            write_csv(dir, "placement.csv", "x,y,z,lb_sum_rate", &rows)?;
            println!("best IRS location ({}, {}, {})", fmt_f(best.x), fmt_f(best.y), fmt_f(best.z));
            *alpha
        }
        Command::ChannelProbe => {
            let traj = Trajectory::straight_line(&scenario);
            let mut rows = Vec::new();
            for k in 0..scenario.n_users() {
                for (n, q) in traj.slot_positions().iter().enumerate() {
                    for i in 1..=scenario.ofdm.n_f {
                        let g = crate::channel::los_composite_gain(k, k, i, *q, &scenario)?;
                        rows.push(format!("{k},{n},{i},{}", fmt_f(g)));
                    }
                }
            }
            write_csv(dir, "channel_probe.csv", "k,n,i,gain", &rows)?;
            0.0
        }
    };
    write_metadata(dir, cli.seed, alpha_used, t0.elapsed())?;
    Ok(())
}

/// Process exit code policy: 0 success, 2 infeasible, 1 anything else.
pub fn exit_code(r: &Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(Error::Infeasible(_)) | Err(Error::SubproblemInfeasible(_)) => 2,
        Err(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(amplitude: f64) -> String {
        format!(
            r#"
[[users]]
location = [150.0, 450.0]
alpha_ug = 2.5
alpha_rg = 2.5
kappa_ug_db = 10.0
kappa_rg_db = 10.0
r_min = 0.2

[[users]]
location = [400.0, 300.0]
alpha_ug = 2.5
alpha_rg = 2.5
kappa_ug_db = 10.0
kappa_rg_db = 10.0
r_min = 0.2

[irs]
location = [200.0, 500.0, 30.0]
m_r = 8
m_c = 8
amplitude = {amplitude}

[ofdm]
n_f = 16
delta_f_khz = 100.0
f_c_ghz = 3.0
beta0_db = -50.0
noise_psd_dbm_hz = -169.0
p_max_dbm = 35.0

[flight]
q_initial = [0.0, 0.0, 100.0]
q_final = [500.0, 500.0, 100.0]
n_slots = 4
dt = 10.0
v_max = 20.0
z_min = 100.0
z_max = 150.0
"#
        )
    }

    fn write_tmp(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("scenario.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), &tiny_config(0.9));
        let loaded = ScenarioFile::load(&path).unwrap();
        let re_loaded: ScenarioFile = toml::from_str(&loaded.serialize()).unwrap();
        assert_eq!(loaded, re_loaded);
        loaded.to_scenario().unwrap().validate().unwrap();
    }

    #[test]
    fn missing_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let broken = tiny_config(0.9).replace("p_max_dbm = 35.0\n", "");
        let path = write_tmp(dir.path(), &broken);
        let err = ScenarioFile::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p_max_dbm"), "field not named: {msg}");
        let cli = Cli {
            scenario: Some(path),
            out: dir.path().join("out"),
            seed: 0,
            freeze_altitude: false,
            command: Command::ChannelProbe,
        };
        assert_eq!(exit_code(&run(&cli)), 1);
    }

    #[test]
    fn channel_probe_flat_without_irs() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), &tiny_config(0.0));
        let out = dir.path().join("out");
        let cli = Cli {
            scenario: Some(path),
            out: out.clone(),
            seed: 0,
            freeze_altitude: false,
            command: Command::ChannelProbe,
        };
        assert_eq!(exit_code(&run(&cli)), 0);
        let text = std::fs::read_to_string(out.join("channel_probe.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,n,i,gain");
        // per (k, n) the gain column is constant across subcarriers
        let mut by_kn: std::collections::HashMap<(String, String), Vec<String>> =
            std::collections::HashMap::new();
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            by_kn
                .entry((cols[0].into(), cols[1].into()))
                .or_default()
                .push(cols[3].into());
        }
        assert_eq!(by_kn.len(), 2 * 4);
        for gains in by_kn.values() {
            assert_eq!(gains.len(), 16);
            assert!(gains.iter().all(|g| g == &gains[0]), "gain not flat: {gains:?}");
        }
    }

    #[test]
    fn solve_writes_monotone_trace_and_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(dir.path(), &tiny_config(0.9));
        let run_once = |out: PathBuf| {
            let cli = Cli {
                scenario: Some(path.clone()),
                out,
                seed: 3,
                freeze_altitude: false,
                command: Command::Solve { alpha: 0.14 },
            };
            assert_eq!(exit_code(&run(&cli)), 0);
        };
        let out1 = dir.path().join("o1");
        let out2 = dir.path().join("o2");
        run_once(out1.clone());
        run_once(out2.clone());
        let trace = std::fs::read_to_string(out1.join("trace.csv")).unwrap();
        let vals: Vec<f64> = trace
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(!vals.is_empty());
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace dipped: {vals:?}");
        }
        for name in ["trajectory.csv", "allocation.csv", "trace.csv", "user_rates.csv"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let broken = tiny_config(0.9) + "\n[solver]\nbogus = 1\n";
        let path = write_tmp(dir.path(), &broken);
        assert!(ScenarioFile::load(&path).is_err());
    }
}
