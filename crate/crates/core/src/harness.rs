//! Scenario presets, the fair-comparison protocol, savings metrics, table
//! emitters and seeded random instances.

use std::fmt::Write as _;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{optimize_bmop_rounds, xen_evaluate, XenPolicy};
use crate::error::{Error, Result};
use crate::model::{
    min_feasible_rounds, simulate, PowerModel, QosConstraints, RateSchedule, StageConstants, WirelessScenario, Workload,
};
use crate::solver::{optimize_rounds, QRule, SolverOptions};
use crate::tracker::ParameterTimeline;

/// Iterations at which the tracking profiles switch parameters.
pub const CHANGE_POINTS: [usize; 2] = [30, 60];
pub const TRACK_HORIZON: usize = 90;
/// Largest dirty-rate to cap ratio at which Xen comparisons are meaningful.
pub const MEANINGFUL_RATIO: f64 = 0.33;

/// Built-in wireless scenario with its tracking-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPreset {
    pub key: String,
    pub scenario: WirelessScenario,
    pub qos: QosConstraints,
    pub m0: f64,
    /// Dirty-rate steps of the time-varying-workload profile.
    pub dirty_rate_steps: [f64; 3],
    /// Power-constant steps of the time-varying-channel profile.
    pub k0_steps: [f64; 3],
}

pub const PRESET_KEYS: [&str; 3] = ["3g", "4g", "wifi"];

pub fn preset(key: &str) -> Result<ScenarioPreset> {
    let (name, r_max, e_setup, k0, qos, steps, k0_steps) = match key.to_ascii_lowercase().as_str() {
        "3g" => (
            "3G",
            0.9 * 2.0,
            3.25,
            0.18,
            QosConstraints::new(1460.0, 0.14, 2.0, true)?,
            [0.8, 1.5, 0.8],
            // literal caption values: a x100 jump where the others jump x10
            [0.18, 18.0, 0.18],
        ),
        "4g" => (
            "4G",
            0.9 * 50.0,
            5.1,
            0.09,
            QosConstraints::new(58.6, 5.61e-3, 2.33, true)?,
            [11.25, 24.0, 11.25],
            [0.09, 0.9, 0.09],
        ),
        "wifi" => (
            "WiFi",
            0.9 * 11.0,
            5.9,
            0.05,
            QosConstraints::new(266.0, 2.55e-2, 2.33, true)?,
            [4.0, 8.0, 4.0],
            [0.05, 0.5, 0.05],
        ),
        other => {
            return Err(Error::param(
                "preset",
                format!("unknown preset {other:?}, expected one of 3g, 4g, wifi"),
            ))
        }
    };
    Ok(ScenarioPreset {
        key: key.to_ascii_lowercase(),
        scenario: WirelessScenario::new(name, r_max, e_setup, PowerModel::new(k0, 2.0)?)?,
        qos,
        m0: 256.0,
        dirty_rate_steps: steps,
        k0_steps,
    })
}

pub fn all_presets() -> Vec<ScenarioPreset> {
    PRESET_KEYS
        .iter()
        .map(|k| preset(k).expect("built-in preset"))
        .collect()
}

impl ScenarioPreset {
    /// Workload of the first tracking segment.
    pub fn base_workload(&self) -> Workload {
        Workload {
            m0: self.m0,
            dirty_rate: self.dirty_rate_steps[0],
        }
    }

    /// Time-varying dirty rate, power constant fixed.
    pub fn dirty_rate_timeline(&self) -> ParameterTimeline {
        ParameterTimeline::steps(&CHANGE_POINTS, &self.dirty_rate_steps, &[self.scenario.power.k0])
            .expect("preset values are positive")
    }

    /// Time-varying power constant, dirty rate fixed.
    pub fn k0_timeline(&self) -> ParameterTimeline {
        ParameterTimeline::steps(&CHANGE_POINTS, &[self.dirty_rate_steps[0]], &self.k0_steps)
            .expect("preset values are positive")
    }
}

/// Named tracking profiles: `fig45a..c` vary the dirty rate of the 3G, 4G
/// and WiFi presets, `fig46a..c` vary their power constant.
pub fn tracking_profile(name: &str) -> Result<(ScenarioPreset, ParameterTimeline)> {
    let key = match &name[name.len().saturating_sub(1)..] {
        "a" => "3g",
        "b" => "4g",
        "c" => "wifi",
        _ => "",
    };
    let p = preset(key).map_err(|_| Error::param("profile", format!("unknown profile {name:?}")))?;
    match &name[..name.len().saturating_sub(1)] {
        "fig45" => {
            let t = p.dirty_rate_timeline();
            Ok((p, t))
        }
        "fig46" => {
            let t = p.k0_timeline();
            Ok((p, t))
        }
        _ => Err(Error::param("profile", format!("unknown profile {name:?}"))),
    }
}

/// Application workload with a fixed mean dirty rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPreset {
    pub name: String,
    pub dirty_rate: f64,
}

/// Dirty rates of the application workloads as fractions of a maximum rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub bzip2: f64,
    pub mcf: f64,
    pub memcached: f64,
    /// The maximum rate as a fraction of the Xen rate cap.
    pub max_ratio: f64,
}

impl Default for AppProfile {
    fn default() -> Self {
        AppProfile {
            bzip2: 0.25,
            mcf: 0.5,
            memcached: 0.9,
            max_ratio: MEANINGFUL_RATIO,
        }
    }
}

impl AppProfile {
    pub fn workloads(&self, r_max_xen: f64) -> Result<Vec<WorkloadPreset>> {
        if !(self.bzip2 < self.mcf && self.mcf < self.memcached) {
            return Err(Error::param("app_profile", "need bzip2 < mcf < memcached"));
        }
        if !(self.bzip2 > 0.0 && self.max_ratio > 0.0) {
            return Err(Error::param("app_profile", "fractions must be positive"));
        }
        let w_max = self.max_ratio * r_max_xen;
        Ok(
            [("bzip2", self.bzip2), ("mcf", self.mcf), ("memcached", self.memcached)]
                .into_iter()
                .map(|(name, f)| WorkloadPreset {
                    name: name.to_string(),
                    dirty_rate: f * w_max,
                })
                .collect(),
        )
    }
}

/// Percent saving `100 (1 - e_star / e_ref)`.
pub fn savings(e_star: f64, e_ref: f64) -> Result<f64> {
    if !(e_ref > 0.0) {
        return Err(Error::NonPositiveReference(e_ref));
    }
    Ok(100.0 * (1.0 - e_star / e_ref))
}

/// Settings of the four-step comparison protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub r_max_xen: f64,
    /// Rate cap for the optimised managers; `None` uses `r_max_xen`.
    pub r_hat: Option<f64>,
    pub q_rule: QRule,
    pub stages: StageConstants,
    pub solver: SolverOptions,
}

impl ProtocolConfig {
    pub fn new(r_max_xen: f64, q_rule: QRule) -> Self {
        ProtocolConfig {
            r_max_xen,
            r_hat: None,
            q_rule,
            stages: StageConstants::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn cap(&self) -> f64 {
        self.r_hat.unwrap_or(self.r_max_xen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub i_max_xen: usize,
    pub delta_dt: f64,
    pub delta_tm: f64,
    pub beta: f64,
    pub e_xen: f64,
    pub e_bmop: Option<f64>,
    /// `Q` of the chosen TCBM partition.
    pub q: Option<usize>,
    pub i_max_tcbm: Option<usize>,
    pub e_tcbm: Option<f64>,
    pub save_vs_xen: Option<f64>,
    pub save_vs_bmop: Option<f64>,
    pub notes: Vec<String>,
}

/// Steps i-iv: run Xen, inherit its achieved times and speed-up as the QoS
/// limits, and solve BMOP and TCBM under them.
pub fn compare_protocol(
    scenario: &WirelessScenario,
    workload: &Workload,
    xen_rounds: &[usize],
    config: &ProtocolConfig,
) -> Result<Vec<ComparisonRow>> {
    let xen_scenario = scenario.with_r_hat(config.r_max_xen);
    let opt_scenario = scenario.with_r_hat(config.cap());
    xen_rounds
        .par_iter()
        .map(|&i_xen| {
            let xen = xen_evaluate(
                workload,
                &xen_scenario,
                &config.stages,
                &XenPolicy::new(config.r_max_xen, i_xen),
            )?;
            let qos = QosConstraints {
                delta_tm: xen.outcome.t_tm,
                delta_dt: xen.outcome.t_dt,
                beta: xen.beta_achieved,
                theta: true,
            };
            let mut notes = Vec::new();
            let ratio = workload.dirty_rate / config.cap();
            if ratio > MEANINGFUL_RATIO + 1e-12 {
                notes.push(format!("w/r_hat = {ratio:.3} exceeds {MEANINGFUL_RATIO}"));
            }
            let mut row = ComparisonRow {
                scenario: scenario.name.clone(),
                i_max_xen: i_xen,
                delta_dt: qos.delta_dt,
                delta_tm: qos.delta_tm,
                beta: qos.beta,
                e_xen: xen.outcome.e_tot,
                e_bmop: None,
                q: None,
                i_max_tcbm: None,
                e_tcbm: None,
                save_vs_xen: None,
                save_vs_bmop: None,
                notes,
            };
            if let Err(e) = qos.validate() {
                row.notes.push(format!("Xen constraints unusable: {e}"));
                return Ok(row);
            }
            match optimize_bmop_rounds(&opt_scenario, workload, &qos, &config.stages, &config.solver) {
                Ok((_, r)) => row.e_bmop = Some(r.energy()),
                Err(e) => row.notes.push(format!("BMOP: {e}")),
            }
            match optimize_rounds(
                &opt_scenario,
                workload,
                &qos,
                &config.stages,
                config.q_rule,
                &config.solver,
            ) {
                Ok((i, r)) => {
                    row.i_max_tcbm = Some(i);
                    row.q = Some(r.partition.q());
                    row.e_tcbm = Some(r.energy());
                }
                Err(e) => row.notes.push(format!("TCBM: {e}")),
            }
            if let Some(e) = row.e_tcbm {
                row.save_vs_xen = savings(e, row.e_xen).ok();
                row.save_vs_bmop = row.e_bmop.and_then(|b| savings(e, b).ok());
            }
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Manager {
    Xen,
    Bmop,
    Tcbm,
}

impl Manager {
    pub const ALL: [Manager; 3] = [Manager::Xen, Manager::Bmop, Manager::Tcbm];

    pub fn label(&self) -> &'static str {
        match self {
            Manager::Xen => "xen",
            Manager::Bmop => "bmop",
            Manager::Tcbm => "tcbm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub scenario: String,
    pub workload: String,
    pub manager: Manager,
    /// `None` when the manager found no feasible schedule.
    pub energy: Option<f64>,
}

/// Energies of every manager on every application workload, with the
/// optimised managers solved under the Xen-matched constraints at `Q = I_MAX`.
pub fn workload_sweep(
    preset: &ScenarioPreset,
    profile: &AppProfile,
    i_max_xen: usize,
    solver: &SolverOptions,
) -> Result<Vec<SweepCell>> {
    let r_max = preset.scenario.r_hat;
    let mut config = ProtocolConfig::new(r_max, QRule::Full);
    config.solver = *solver;
    let apps = profile.workloads(r_max)?;
    let rows: Vec<(String, ComparisonRow)> = apps
        .par_iter()
        .map(|app| {
            let wl = Workload::new(preset.m0, app.dirty_rate)?;
            let row = compare_protocol(&preset.scenario, &wl, &[i_max_xen], &config)?
                .pop()
                .expect("one row per policy");
            Ok((app.name.clone(), row))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(9);
    for (name, row) in rows {
        for m in Manager::ALL {
            cells.push(SweepCell {
                scenario: preset.scenario.name.clone(),
                workload: name.clone(),
                manager: m,
                energy: match m {
                    Manager::Xen => Some(row.e_xen),
                    Manager::Bmop => row.e_bmop,
                    Manager::Tcbm => row.e_tcbm,
                },
            });
        }
    }
    Ok(cells)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_comparison_csv<W: io::Write>(rows: &[ComparisonRow], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "scenario",
        "i_max_xen",
        "delta_dt_s",
        "delta_tm_s",
        "beta",
        "E_xen_J",
        "E_bmop_J",
        "Q",
        "E_tcbm_J",
        "save_vs_xen_pct",
        "save_vs_bmop_pct",
    ])?;
    for r in rows {
        wtr.write_record([
            r.scenario.clone(),
            r.i_max_xen.to_string(),
            r.delta_dt.to_string(),
            r.delta_tm.to_string(),
            r.beta.to_string(),
            r.e_xen.to_string(),
            opt_cell(r.e_bmop),
            r.q.map_or_else(String::new, |q| q.to_string()),
            opt_cell(r.e_tcbm),
            opt_cell(r.save_vs_xen),
            opt_cell(r.save_vs_bmop),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: io::Write>(cells: &[SweepCell], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["scenario", "workload", "manager", "E_J"])?;
    for c in cells {
        wtr.write_record([
            c.scenario.as_str(),
            c.workload.as_str(),
            c.manager.label(),
            &opt_cell(c.energy),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn sig(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn md_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), sig)
}

/// Comparison rows transposed into one column per Xen round count.
pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "| I_MAX^XEN |");
    for r in rows {
        let _ = write!(s, " {} |", r.i_max_xen);
    }
    s.push('\n');
    s.push_str("|---|");
    s.push_str(&"---|".repeat(rows.len()));
    s.push('\n');
    type Cell = fn(&ComparisonRow) -> String;
    let lines: [(&str, Cell); 9] = [
        ("T_DT^XEN = Delta_DT (s)", |r| sig(r.delta_dt)),
        ("T_TM^XEN = Delta_TM (s)", |r| sig(r.delta_tm)),
        ("beta", |r| sig(r.beta)),
        ("E^XEN (J)", |r| sig(r.e_xen)),
        ("E^BMOP (J)", |r| md_opt(r.e_bmop)),
        ("Q", |r| r.q.map_or_else(|| "-".into(), |q| q.to_string())),
        ("E^TCBM (J)", |r| md_opt(r.e_tcbm)),
        ("saving vs Xen (%)", |r| {
            r.save_vs_xen.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
        }),
        ("saving vs BMOP (%)", |r| {
            r.save_vs_bmop.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
        }),
    ];
    for (label, f) in lines.iter() {
        let _ = write!(s, "| {label} |");
        for r in rows {
            let _ = write!(s, " {} |", f(r));
        }
        s.push('\n');
    }
    s
}

/// Per-scenario savings of TCBM over Xen and BMOP for each workload.
pub fn savings_markdown(cells: &[SweepCell]) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    let mut workloads: Vec<&str> = Vec::new();
    for c in cells {
        if !scenarios.contains(&c.scenario.as_str()) {
            scenarios.push(&c.scenario);
        }
        if !workloads.contains(&c.workload.as_str()) {
            workloads.push(&c.workload);
        }
    }
    let energy = |sc: &str, wl: &str, m: Manager| {
        cells
            .iter()
            .find(|c| c.scenario == sc && c.workload == wl && c.manager == m)
            .and_then(|c| c.energy)
    };
    let mut s = String::from("| scenario | workload | saving vs Xen (%) | saving vs BMOP (%) |\n|---|---|---|---|\n");
    for sc in &scenarios {
        for wl in &workloads {
            let t = energy(sc, wl, Manager::Tcbm);
            let pct = |m| match (t, energy(sc, wl, m)) {
                (Some(t), Some(r)) => savings(t, r).map_or_else(|_| "-".into(), |v| format!("{v:.1}")),
                _ => "-".into(),
            };
            let _ = writeln!(s, "| {sc} | {wl} | {} | {} |", pct(Manager::Xen), pct(Manager::Bmop));
        }
    }
    s
}

/// Deterministic generator for [`random_instance`].
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A complete, feasible problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub scenario: WirelessScenario,
    pub workload: Workload,
    pub qos: QosConstraints,
    pub stages: StageConstants,
}

/// Random instance whose limits admit a schedule with `i_max` pre-copy rounds
/// and whose feasible set has an interior: the limits are the all-`r_hat`
/// times scaled up by random slack factors.
pub fn random_instance<R: Rng>(rng: &mut R, i_max: usize) -> Instance {
    let r_hat = rng.gen_range(2.0..50.0);
    let ratio: f64 = rng.gen_range(0.05..0.4);
    let w = ratio * r_hat;
    let beta = rng.gen_range(1.2..(0.9 / ratio).min(3.0));
    let m0 = rng.gen_range(50.0..500.0);
    let power = PowerModel {
        k0: rng.gen_range(0.05..1.0),
        alpha: rng.gen_range(1.5..3.0),
    };
    let scenario = WirelessScenario {
        name: "random".into(),
        r_hat,
        e_setup: rng.gen_range(0.0..10.0),
        power,
    };
    let workload = Workload { m0, dirty_rate: w };
    let top = RateSchedule::constant(i_max, r_hat).expect("positive cap");
    let bare = simulate(&top, &workload, &scenario, &StageConstants::default()).expect("valid instance");
    let stages = StageConstants {
        t_pm: rng.gen_range(0.0..0.1) * bare.t_mmt,
        t_re: rng.gen_range(0.0..0.1) * bare.t_mmt,
        t_cm: rng.gen_range(0.0..0.2) * bare.t_sc,
        t_at: rng.gen_range(0.0..0.2) * bare.t_sc,
    };
    let qos = QosConstraints {
        delta_tm: (bare.t_mmt + stages.fixed_total()) * rng.gen_range(1.2..4.0),
        delta_dt: (bare.t_sc + stages.downtime_overhead()) * rng.gen_range(1.2..5.0),
        beta,
        theta: true,
    };
    Instance {
        scenario,
        workload,
        qos,
        stages,
    }
}

impl Instance {
    pub fn min_rounds(&self) -> Result<usize> {
        min_feasible_rounds(&self.workload, &self.scenario, &self.qos, &self.stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn savings_examples() {
        assert!((savings(1366.0, 1880.0).unwrap() - 27.34).abs() < 0.005);
        assert!((savings(531.7, 1170.0).unwrap() - 54.56).abs() < 0.005);
        assert_eq!(savings(7.0, 7.0).unwrap(), 0.0);
        assert!(savings(3.0, 2.0).unwrap() < 0.0);
        assert_eq!(savings(1.0, 0.0), Err(Error::NonPositiveReference(0.0)));
    }

    #[test]
    fn preset_constants() {
        let p = preset("3g").unwrap();
        assert_eq!(p.scenario.r_hat, 1.8);
        assert_eq!(p.scenario.e_setup, 3.25);
        assert_eq!(p.scenario.power.k0, 0.18);
        let p = preset("4G").unwrap();
        assert_eq!(p.scenario.r_hat, 45.0);
        assert_eq!(p.qos.delta_dt, 5.61e-3);
        let p = preset("wifi").unwrap();
        assert!((p.scenario.r_hat - 9.9).abs() < 1e-12);
        assert_eq!(p.scenario.power.alpha, 2.0);
        assert!(preset("5g").is_err());
    }

    #[test]
    fn profiles() {
        let (p, t) = tracking_profile("fig45a").unwrap();
        assert_eq!(p.key, "3g");
        assert_eq!(t.at(45).dirty_rate, 1.5);
        let (p, t) = tracking_profile("fig46b").unwrap();
        assert_eq!(p.key, "4g");
        assert_eq!(t.at(45).k0, 0.9);
        assert_eq!(t.at(45).dirty_rate, 11.25);
        assert!(tracking_profile("fig47a").is_err());
        assert!(tracking_profile("").is_err());
    }

    #[test]
    fn app_workloads_are_ordered() {
        let apps = AppProfile::default().workloads(45.0).unwrap();
        let names: Vec<&str> = apps.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["bzip2", "mcf", "memcached"]);
        assert!(apps.windows(2).all(|p| p[0].dirty_rate < p[1].dirty_rate));
        let bad = AppProfile {
            mcf: 0.1,
            ..Default::default()
        };
        assert!(bad.workloads(45.0).is_err());
    }

    #[test]
    fn random_instances_are_feasible() {
        let mut rng = seeded_rng(7);
        for i in 0..4 {
            let inst = random_instance(&mut rng, i);
            assert!(inst.min_rounds().unwrap() <= i);
        }
    }

    #[test]
    fn comparison_csv_header() {
        let mut buf = Vec::new();
        write_comparison_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            "scenario,i_max_xen,delta_dt_s,delta_tm_s,beta,E_xen_J,E_bmop_J,Q,E_tcbm_J,save_vs_xen_pct,save_vs_bmop_pct"
        );
    }

    #[test]
    fn xen_table_numbers_with_cap_at_xen_maximum() {
        // w = 0.33 * 45 with both Xen and the optimisers capped at 45 Mb/s
        let p = preset("4g").unwrap();
        let wl = Workload::new(256.0, 0.33 * 45.0).unwrap();
        let rows = compare_protocol(&p.scenario, &wl, &[6], &ProtocolConfig::new(45.0, QRule::Fixed(1))).unwrap();
        let r = &rows[0];
        assert!((r.e_xen - 1880.0).abs() / 1880.0 < 0.01, "{}", r.e_xen);
        assert!((r.delta_tm - 46.9).abs() / 46.9 < 0.01, "{}", r.delta_tm);
    }
}
