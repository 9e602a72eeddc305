//! TOML run configuration, flag overrides and resolution into core types.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use migband_core::harness::{self, AppProfile, TRACK_HORIZON};
use migband_core::solver::XEN_DEFAULT_ROUND_CAP;
use migband_core::tracker::{ParameterTimeline, TrackerConfig};
use migband_core::{PowerModel, QRule, QosConstraints, SolverOptions, StageConstants, WirelessScenario, Workload};
use serde::{Deserialize, Serialize};

/// Either a block count or `"full"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QSetting {
    Count(usize),
    Named(String),
}

impl QSetting {
    pub fn parse_flag(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(QSetting::Named(s.into()));
        }
        s.parse()
            .map(QSetting::Count)
            .map_err(|_| anyhow!("--q expects a count or \"full\", got {s:?}"))
    }

    fn rule(&self) -> Result<QRule> {
        match self {
            QSetting::Count(q) => Ok(QRule::Fixed(*q)),
            QSetting::Named(s) if s == "full" => Ok(QRule::Full),
            QSetting::Named(s) => bail!("partition.q must be a count or \"full\", got {s:?}"),
        }
    }

    fn from_rule(rule: QRule) -> Self {
        match rule {
            QRule::Fixed(q) => QSetting::Count(q),
            QRule::Full => QSetting::Named("full".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_setup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirty_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_tm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_pm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_cm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_at: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// Omitted: search the round count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<QSetting>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    /// `fig45a..c` or `fig46a..c`; takes precedence over the explicit steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub change_points: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirty_rates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xen_rounds: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max_xen: Option<f64>,
    /// Cap for the optimised managers; defaults to `r_max_xen`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    /// Sets the dirty rate to `ratio * r_hat`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Scenario presets to sweep; defaults to `preset`, else all three.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub presets: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max_xen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bzip2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memcached: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Number of seeded random instances; 0 checks the configured instance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub qos: QosSection,
    #[serde(default)]
    pub stages: StageSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn need<T: Copy>(v: Option<T>, fallback: Option<T>, key: &str) -> Result<T> {
    v.or(fallback).ok_or_else(|| anyhow!("{key} required"))
}

/// Every setting with defaults applied, in core types.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub preset: Option<String>,
    pub scenario: WirelessScenario,
    pub workload: Workload,
    pub qos: QosConstraints,
    pub stages: StageConstants,
    pub i_max: Option<usize>,
    pub q_rule: QRule,
    pub solver: SolverOptions,
    pub tracker: TrackerConfig,
    pub tracker_profile: Option<String>,
    pub timeline: ParameterTimeline,
    pub xen_rounds: Vec<usize>,
    pub r_max_xen: f64,
    pub compare_r_hat: Option<f64>,
    pub compare_ratio: Option<f64>,
    pub sweep_i_max_xen: usize,
    pub app_profile: AppProfile,
    pub grid_points: usize,
    pub random: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved> {
        // a named tracking profile implies its scenario preset
        let key = match (&self.preset, &self.tracker.profile) {
            (Some(k), _) => Some(k.to_ascii_lowercase()),
            (None, Some(name)) => Some(harness::tracking_profile(name)?.0.key),
            (None, None) => None,
        };
        let preset = match &key {
            Some(k) => Some(harness::preset(k)?),
            None => None,
        };
        let ps = preset.as_ref();

        let s = &self.scenario;
        let scenario = WirelessScenario::new(
            s.name
                .clone()
                .or_else(|| ps.map(|p| p.scenario.name.clone()))
                .unwrap_or_else(|| "custom".into()),
            need(s.r_hat, ps.map(|p| p.scenario.r_hat), "scenario.r_hat")?,
            s.e_setup.or(ps.map(|p| p.scenario.e_setup)).unwrap_or(0.0),
            PowerModel::new(
                need(s.k0, ps.map(|p| p.scenario.power.k0), "scenario.k0")?,
                s.alpha.or(ps.map(|p| p.scenario.power.alpha)).unwrap_or(2.0),
            )
            .context("scenario")?,
        )
        .context("scenario")?;

        let workload = Workload::new(
            need(self.workload.m0, ps.map(|p| p.m0), "workload.m0")?,
            need(
                self.workload.dirty_rate,
                ps.map(|p| p.dirty_rate_steps[0]),
                "workload.dirty_rate",
            )?,
        )
        .context("workload")?;

        let q = &self.qos;
        let qos = QosConstraints::new(
            need(q.delta_tm, ps.map(|p| p.qos.delta_tm), "qos.delta_tm")?,
            need(q.delta_dt, ps.map(|p| p.qos.delta_dt), "qos.delta_dt")?,
            need(q.beta, ps.map(|p| p.qos.beta), "qos.beta")?,
            q.theta.unwrap_or(true),
        )
        .context("qos")?;

        let st = &self.stages;
        let stages = StageConstants {
            t_pm: st.t_pm.unwrap_or(0.0),
            t_re: st.t_re.unwrap_or(0.0),
            t_cm: st.t_cm.unwrap_or(0.0),
            t_at: st.t_at.unwrap_or(0.0),
        };
        stages.validate().context("stages")?;

        let q_rule = match &self.partition.q {
            Some(q) => q.rule()?,
            None => QRule::Fixed(1),
        };

        let solver = self.solver_options()?;

        let td = TrackerConfig::default();
        let t = &self.tracker;
        let tracker = TrackerConfig {
            a_max: t.a_max.unwrap_or(td.a_max),
            horizon: t.horizon.unwrap_or(TRACK_HORIZON),
            settle_tolerance: t.settle_tolerance.unwrap_or(td.settle_tolerance),
            penalty: t.penalty.unwrap_or(td.penalty),
        };
        tracker.validate().context("tracker")?;
        let (tracker_profile, timeline) = match &t.profile {
            Some(name) => {
                let (_, tl) = harness::tracking_profile(name)?;
                (Some(name.clone()), tl)
            }
            None => {
                let cps = t.change_points.clone().unwrap_or_default();
                let ws = t.dirty_rates.clone().unwrap_or_else(|| vec![workload.dirty_rate]);
                let ks = t.k0s.clone().unwrap_or_else(|| vec![scenario.power.k0]);
                let tl = ParameterTimeline::steps(&cps, &ws, &ks).context("tracker")?;
                (None, tl)
            }
        };

        let sd = AppProfile::default();
        let sw = &self.sweep;
        let app_profile = AppProfile {
            bzip2: sw.bzip2.unwrap_or(sd.bzip2),
            mcf: sw.mcf.unwrap_or(sd.mcf),
            memcached: sw.memcached.unwrap_or(sd.memcached),
            max_ratio: sw.max_ratio.unwrap_or(sd.max_ratio),
        };
        app_profile.workloads(1.0).context("sweep")?;

        let c = &self.compare;
        let r_max_xen = c.r_max_xen.unwrap_or(scenario.r_hat);
        if r_max_xen.is_nan() || r_max_xen <= 0.0 {
            bail!("compare.r_max_xen must be > 0");
        }

        let grid_points = self.grid_points()?;
        if self.run.jobs == Some(0) {
            bail!("run.jobs must be positive");
        }

        Ok(Resolved {
            preset: key,
            scenario,
            workload,
            qos,
            stages,
            i_max: self.partition.i_max,
            q_rule,
            solver,
            tracker,
            tracker_profile,
            timeline,
            xen_rounds: c.xen_rounds.clone().unwrap_or_else(|| vec![6, 14, 25]),
            r_max_xen,
            compare_r_hat: c.r_hat,
            compare_ratio: c.ratio,
            sweep_i_max_xen: sw.i_max_xen.unwrap_or(6),
            app_profile,
            grid_points,
            random: self.oracle.random.unwrap_or(0),
            seed: self.run.seed.unwrap_or(0),
            jobs: self.run.jobs,
            out: self.out_dir(),
        })
    }

    fn solver_options(&self) -> Result<SolverOptions> {
        let d = SolverOptions::default();
        let so = &self.solver;
        let solver = SolverOptions {
            max_iterations: so.max_iterations.unwrap_or(d.max_iterations),
            tolerance: so.tolerance.unwrap_or(d.tolerance),
            step_init: so.step_init.unwrap_or(d.step_init),
            round_cap: so.round_cap.unwrap_or(XEN_DEFAULT_ROUND_CAP),
            rate_floor: so.rate_floor.unwrap_or(d.rate_floor),
        };
        solver.validate().context("solver")?;
        Ok(solver)
    }

    fn grid_points(&self) -> Result<usize> {
        match self.oracle.grid_points.unwrap_or(200) {
            0 => bail!("oracle.grid_points must be positive"),
            n => Ok(n),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.run.out.clone().unwrap_or_else(|| PathBuf::from("migband-out"))
    }

    /// Settings of the random-instance oracle check, which draws its own
    /// scenarios and ignores the scenario sections.
    pub fn random_oracle(&self) -> Result<RandomOracle> {
        let oracle = RandomOracle {
            i_max: self.partition.i_max,
            solver: self.solver_options()?,
            grid_points: self.grid_points()?,
            count: self.oracle.random.unwrap_or(0),
            seed: self.run.seed.unwrap_or(0),
            out: self.out_dir(),
        };
        Ok(oracle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomOracle {
    /// Fixed round count; `None` cycles through 0..=3.
    pub i_max: Option<usize>,
    pub solver: SolverOptions,
    pub grid_points: usize,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl RandomOracle {
    /// Explicit config holding only the keys this check reads.
    pub fn to_config(&self, jobs: Option<usize>) -> RunConfig {
        let s = &self.solver;
        RunConfig {
            partition: PartitionSection {
                i_max: self.i_max,
                q: None,
            },
            solver: SolverSection {
                max_iterations: Some(s.max_iterations),
                tolerance: Some(s.tolerance),
                step_init: Some(s.step_init),
                round_cap: Some(s.round_cap),
                rate_floor: Some(s.rate_floor),
            },
            oracle: OracleSection {
                grid_points: Some(self.grid_points),
                random: Some(self.count),
            },
            run: RunSection {
                seed: Some(self.seed),
                jobs,
                out: Some(self.out.clone()),
            },
            ..Default::default()
        }
    }
}

impl Resolved {
    /// Fully explicit config that resolves back to `self`.
    pub fn to_config(&self) -> RunConfig {
        let segs = self.timeline.segments();
        RunConfig {
            preset: self.preset.clone(),
            scenario: ScenarioSection {
                name: Some(self.scenario.name.clone()),
                r_hat: Some(self.scenario.r_hat),
                e_setup: Some(self.scenario.e_setup),
                k0: Some(self.scenario.power.k0),
                alpha: Some(self.scenario.power.alpha),
            },
            workload: WorkloadSection {
                m0: Some(self.workload.m0),
                dirty_rate: Some(self.workload.dirty_rate),
            },
            qos: QosSection {
                delta_tm: Some(self.qos.delta_tm),
                delta_dt: Some(self.qos.delta_dt),
                beta: Some(self.qos.beta),
                theta: Some(self.qos.theta),
            },
            stages: StageSection {
                t_pm: Some(self.stages.t_pm),
                t_re: Some(self.stages.t_re),
                t_cm: Some(self.stages.t_cm),
                t_at: Some(self.stages.t_at),
            },
            partition: PartitionSection {
                i_max: self.i_max,
                q: Some(QSetting::from_rule(self.q_rule)),
            },
            solver: SolverSection {
                max_iterations: Some(self.solver.max_iterations),
                tolerance: Some(self.solver.tolerance),
                step_init: Some(self.solver.step_init),
                round_cap: Some(self.solver.round_cap),
                rate_floor: Some(self.solver.rate_floor),
            },
            tracker: TrackerSection {
                profile: None,
                change_points: Some(segs[1..].iter().map(|s| s.start).collect()),
                dirty_rates: Some(segs.iter().map(|s| s.dirty_rate).collect()),
                k0s: Some(segs.iter().map(|s| s.k0).collect()),
                a_max: Some(self.tracker.a_max),
                horizon: Some(self.tracker.horizon),
                settle_tolerance: Some(self.tracker.settle_tolerance),
                penalty: Some(self.tracker.penalty),
            },
            compare: CompareSection {
                xen_rounds: Some(self.xen_rounds.clone()),
                r_max_xen: Some(self.r_max_xen),
                r_hat: self.compare_r_hat,
                ratio: self.compare_ratio,
            },
            sweep: SweepSection {
                presets: None,
                i_max_xen: Some(self.sweep_i_max_xen),
                bzip2: Some(self.app_profile.bzip2),
                mcf: Some(self.app_profile.mcf),
                memcached: Some(self.app_profile.memcached),
                max_ratio: Some(self.app_profile.max_ratio),
            },
            oracle: OracleSection {
                grid_points: Some(self.grid_points),
                random: Some(self.random),
            },
            run: RunSection {
                seed: Some(self.seed),
                jobs: self.jobs,
                out: Some(self.out.clone()),
            },
        }
    }
}
