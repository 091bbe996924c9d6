//! Evaluation metrics, experiment presets, the SVO sweep and preset suites.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeMetrics, HighwayEnv, ScenarioConfig};
use crate::error::{Error, Result};
use crate::qnet::Network;
use crate::reward::SvoParams;
use crate::sim::Autonomy;
use crate::plot::TrajectoryLine;
use crate::trainer::{evaluate_policies, evaluate_policies_with, train, AgentRegistry, Checkpoint, PolicySnapshot, TrainConfig, TrainOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub episodes: usize,
    pub failed_merges: usize,
    pub crashed: usize,
    pub independent_crashes: usize,
    pub f_mf: f64,
    pub f_c: f64,
    pub f_independent_crash: f64,
    pub dist_hv_mean: f64,
    pub dist_hv_se: f64,
    pub dist_av_mean: f64,
    pub dist_av_se: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl AggregateMetrics {
    pub fn from_episodes(episodes: &[EpisodeMetrics]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Config("metrics need at least one episode".into()));
        }
        let n = episodes.len();
        let failed_merges = episodes.iter().filter(|e| !e.merge_success).count();
        let crashed = episodes.iter().filter(|e| e.crashed).count();
        let independent_crashes = episodes.iter().filter(|e| e.independent_crash).count();
        let hv: Vec<f64> = episodes.iter().map(|e| e.avg_distance_hv).collect();
        let av: Vec<f64> = episodes.iter().map(|e| e.avg_distance_av).collect();
        let (dist_hv_mean, dist_hv_se) = mean_and_se(&hv);
        let (dist_av_mean, dist_av_se) = mean_and_se(&av);
        Ok(Self {
            episodes: n,
            failed_merges,
            crashed,
            independent_crashes,
            f_mf: failed_merges as f64 / n as f64,
            f_c: crashed as f64 / n as f64,
            f_independent_crash: independent_crashes as f64 / n as f64,
            dist_hv_mean,
            dist_hv_se,
            dist_av_mean,
            dist_av_se,
        })
    }

    pub fn merge_rate(&self) -> f64 {
        1.0 - self.f_mf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetName {
    #[serde(rename = "HV+E")]
    HvE,
    #[serde(rename = "HV+C")]
    HvC,
    #[serde(rename = "HV+SC")]
    HvSc,
    #[serde(rename = "AV+E")]
    AvE,
    #[serde(rename = "AV+C")]
    AvC,
    #[serde(rename = "AV+SC")]
    AvSc,
    #[serde(rename = "HV+1SC")]
    HvOneSc,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::HvE,
        PresetName::HvC,
        PresetName::HvSc,
        PresetName::AvE,
        PresetName::AvC,
        PresetName::AvSc,
        PresetName::HvOneSc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::HvE => "HV+E",
            PresetName::HvC => "HV+C",
            PresetName::HvSc => "HV+SC",
            PresetName::AvE => "AV+E",
            PresetName::AvC => "AV+C",
            PresetName::AvSc => "AV+SC",
            PresetName::HvOneSc => "HV+1SC",
        }
    }

    pub fn mission(self) -> Autonomy {
        match self {
            PresetName::AvE | PresetName::AvC | PresetName::AvSc => Autonomy::Autonomous,
            _ => Autonomy::Human,
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// Mission type and per-agent social preferences of one experiment setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub mission: Autonomy,
    pub agent_svo: Vec<SvoParams>,
}

impl ExperimentPreset {
    /// `guide` is the single altruistic agent of the one-SC setting.
    pub fn new(name: PresetName, agents: usize, phi_star: f64, guide: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::Config("a preset needs at least one agent".into()));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&phi_star) {
            return Err(Error::Config(format!("SVO angle {phi_star} outside [0, pi/2]")));
        }
        let ego = SvoParams::egoistic();
        let agent_svo = match name {
            PresetName::HvE | PresetName::AvE => vec![ego; agents],
            PresetName::HvC | PresetName::AvC => vec![SvoParams::cooperative(phi_star); agents],
            PresetName::HvSc | PresetName::AvSc => vec![SvoParams::sympathetic_cooperative(phi_star); agents],
            PresetName::HvOneSc => {
                if guide >= agents {
                    return Err(Error::Config(format!("guide agent {guide} out of {agents}")));
                }
                let mut v = vec![ego; agents];
                v[guide] = SvoParams::sympathetic_cooperative(phi_star);
                v
            }
        };
        Ok(Self { name, mission: name.mission(), agent_svo })
    }

    pub fn scenario(&self, base: &ScenarioConfig) -> ScenarioConfig {
        ScenarioConfig { mission: self.mission, agents: self.agent_svo.len(), ..base.clone() }
    }

    pub fn environment(&self, base: &ScenarioConfig) -> Result<HighwayEnv> {
        HighwayEnv::new(self.scenario(base), self.agent_svo.clone())
    }
}

/// The middle agent of the platoon acts as the guide in the one-SC setting.
pub fn default_guide(agents: usize) -> usize {
    agents / 2
}

pub fn train_preset(
    preset: &ExperimentPreset,
    base: &ScenarioConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(Checkpoint<'_>) -> Result<()>,
) -> Result<TrainOutput<EpisodeMetrics>> {
    train(preset.environment(base)?, cfg, seed, on_checkpoint)
}

/// Greedy episodes on the broadened test initialisation; `policies` holds
/// one network per policy group of the preset.
pub fn evaluate(
    preset: &ExperimentPreset,
    base: &ScenarioConfig,
    policies: &[Network<f32>],
    episodes: usize,
    seed: u64,
) -> Result<(AggregateMetrics, Vec<EpisodeMetrics>)> {
    let mut env = preset.environment(base)?;
    let registry = registry_for(&env, policies)?;
    let log = evaluate_policies(&mut env, &registry, episodes, seed)?;
    Ok((AggregateMetrics::from_episodes(&log)?, log))
}

/// As [`evaluate`], also returning the trajectory logs of the first
/// `recorded` episodes.
pub fn evaluate_recorded(
    preset: &ExperimentPreset,
    base: &ScenarioConfig,
    policies: &[Network<f32>],
    episodes: usize,
    seed: u64,
    recorded: usize,
) -> Result<(AggregateMetrics, Vec<EpisodeMetrics>, Vec<TrajectoryLine>)> {
    let mut env = preset.environment(base)?;
    let registry = registry_for(&env, policies)?;
    env.set_recording(recorded > 0);
    let mut lines = Vec::new();
    let log = evaluate_policies_with(&mut env, &registry, episodes, seed, |e, env| {
        if e < recorded {
            lines.extend(env.trajectory().iter().map(|r| TrajectoryLine {
                preset: preset.name.to_string(),
                episode: e,
                record: r.clone(),
            }));
        }
        Ok(())
    })?;
    Ok((AggregateMetrics::from_episodes(&log)?, log, lines))
}

fn registry_for(env: &HighwayEnv, policies: &[Network<f32>]) -> Result<AgentRegistry> {
    use crate::env::Environment;
    if policies.len() != env.group_count() {
        return Err(Error::Config(format!("{} policies for {} policy groups", policies.len(), env.group_count())));
    }
    let width = env.observation_width();
    if let Some(p) = policies.iter().find(|p| p.input_width() != width) {
        return Err(Error::WidthMismatch { expected: width, got: p.input_width() });
    }
    let snaps: Vec<Arc<PolicySnapshot>> = policies
        .iter()
        .map(|w| Arc::new(PolicySnapshot { weights: w.clone(), version: 0, frame: 0, last_agent: None }))
        .collect();
    Ok(AgentRegistry::new((0..env.agent_count()).map(|a| env.policy_group(a)).collect(), &snaps))
}

/// Greedy evaluation with an explicit registry, for callers that keep
/// snapshots around.
pub fn evaluate_registry(
    preset: &ExperimentPreset,
    base: &ScenarioConfig,
    registry: &AgentRegistry,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let mut env = preset.environment(base)?;
    evaluate_policies(&mut env, registry, episodes, seed)
}

/// `xi * f_c + (1 - xi) * f_mf` evaluated exactly on the binary values of the inputs.
pub fn sweep_objective(f_c: f64, f_mf: f64, xi: f64) -> Result<BigRational> {
    let exact = |x: f64| {
        BigRational::from_float(x).ok_or_else(|| Error::NonFinite { what: "sweep metric", value: x })
    };
    let xi = exact(xi)?;
    if xi < BigRational::zero() || xi > BigRational::one() {
        return Err(Error::Config("sweep weight must lie in [0, 1]".into()));
    }
    Ok(&xi * exact(f_c)? + (BigRational::one() - &xi) * exact(f_mf)?)
}

/// Index of the grid point minimising the sweep objective; ties go to the
/// smallest angle.
pub fn svo_argmin(phis: &[f64], f_c: &[f64], f_mf: &[f64], xi: f64) -> Result<usize> {
    if phis.is_empty() || phis.len() != f_c.len() || phis.len() != f_mf.len() {
        return Err(Error::Config("sweep table columns must be non-empty and of equal length".into()));
    }
    let mut best: Option<(usize, BigRational)> = None;
    for i in 0..phis.len() {
        let v = sweep_objective(f_c[i], f_mf[i], xi)?;
        let better = match &best {
            None => true,
            Some((b, bv)) => v < *bv || (v == *bv && phis[i] < phis[*b]),
        };
        if better {
            best = Some((i, v));
        }
    }
    Ok(best.expect("non-empty grid").0)
}

/// Evenly spaced angles from 0 to pi/2 inclusive.
pub fn phi_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub phi: f64,
    pub metrics: AggregateMetrics,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub xi: f64,
    pub points: Vec<SweepPoint>,
    pub phi_star: f64,
}

/// Trains and evaluates one sympathetic-cooperative policy per angle and
/// seed; every angle reuses the same seeds.
pub fn svo_sweep(
    grid: &[f64],
    xi: f64,
    base: &ScenarioConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    eval_episodes: usize,
    mut progress: impl FnMut(f64, u64, &AggregateMetrics),
) -> Result<SweepResult> {
    if grid.iter().any(|p| !(0.0..=std::f64::consts::FRAC_PI_2).contains(p)) {
        return Err(Error::Config("sweep angles must lie in [0, pi/2]".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &phi in grid {
        let preset = ExperimentPreset {
            name: PresetName::HvSc,
            mission: Autonomy::Human,
            agent_svo: vec![SvoParams::sympathetic_cooperative(phi); base.agents],
        };
        let mut pooled = Vec::new();
        for &seed in seeds {
            let out = train_preset(&preset, base, cfg, seed, &mut |_| Ok(()))?;
            let nets: Vec<Network<f32>> = out.policies.iter().map(|p| p.weights.clone()).collect();
            let (m, log) = evaluate(&preset, base, &nets, eval_episodes, seed)?;
            progress(phi, seed, &m);
            pooled.extend(log);
        }
        let metrics = AggregateMetrics::from_episodes(&pooled)?;
        let objective = xi * metrics.f_c + (1.0 - xi) * metrics.f_mf;
        points.push(SweepPoint { phi, metrics, objective });
    }
    let phis: Vec<f64> = points.iter().map(|p| p.phi).collect();
    let f_c: Vec<f64> = points.iter().map(|p| p.metrics.f_c).collect();
    let f_mf: Vec<f64> = points.iter().map(|p| p.metrics.f_mf).collect();
    let best = svo_argmin(&phis, &f_c, &f_mf, xi)?;
    Ok(SweepResult { xi, phi_star: phis[best], points })
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub preset: String,
    pub seed: u64,
    pub episodes: usize,
    #[serde(rename = "f_MF")]
    pub f_mf: f64,
    #[serde(rename = "f_C")]
    pub f_c: f64,
    pub f_independent_crash: f64,
    pub dist_hv_mean: f64,
    pub dist_av_mean: f64,
}

impl MetricsRow {
    pub fn new(preset: impl Into<String>, seed: u64, m: &AggregateMetrics) -> Self {
        Self {
            preset: preset.into(),
            seed,
            episodes: m.episodes,
            f_mf: m.f_mf,
            f_c: m.f_c,
            f_independent_crash: m.f_independent_crash,
            dist_hv_mean: m.dist_hv_mean,
            dist_av_mean: m.dist_av_mean,
        }
    }
}

pub const METRICS_HEADER: [&str; 8] =
    ["preset", "seed", "episodes", "f_MF", "f_C", "f_independent_crash", "dist_hv_mean", "dist_av_mean"];

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(csv_error)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub preset: PresetName,
    pub seed: u64,
    pub metrics: AggregateMetrics,
}

/// Trains and evaluates every preset under every seed. All presets share the
/// per-seed episode streams, so their initial states are paired.
pub fn run_preset_suite(
    presets: &[ExperimentPreset],
    base: &ScenarioConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    eval_episodes: usize,
    mut progress: impl FnMut(&SuiteRow, &[Arc<PolicySnapshot>]),
) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::with_capacity(presets.len() * seeds.len());
    for preset in presets {
        for &seed in seeds {
            let out = train_preset(preset, base, cfg, seed, &mut |_| Ok(()))?;
            let nets: Vec<Network<f32>> = out.policies.iter().map(|p| p.weights.clone()).collect();
            let (metrics, _) = evaluate(preset, base, &nets, eval_episodes, seed)?;
            let row = SuiteRow { preset: preset.name, seed, metrics };
            progress(&row, &out.policies);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean merge-success rate of `preset` over the suite rows.
pub fn mean_merge_rate(rows: &[SuiteRow], preset: PresetName) -> Option<f64> {
    let r: Vec<f64> = rows.iter().filter(|r| r.preset == preset).map(|r| r.metrics.merge_rate()).collect();
    (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use crate::trainer::evaluation_episode_rng;
    use proptest::prelude::*;

    fn episode(merge: bool, crash: bool, independent: bool, hv: f64, av: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            merge_success: merge,
            crashed: crash,
            independent_crash: independent,
            avg_distance_hv: hv,
            avg_distance_av: av,
        }
    }

    #[test]
    fn aggregate_counts_and_errors() {
        let eps = [
            episode(true, false, false, 400.0, 410.0),
            episode(false, true, false, 380.0, 390.0),
            episode(false, true, true, 360.0, 420.0),
            episode(true, true, true, 420.0, 400.0),
        ];
        let m = AggregateMetrics::from_episodes(&eps).unwrap();
        assert_eq!((m.f_mf, m.f_c, m.f_independent_crash), (0.5, 0.75, 0.5));
        assert_eq!(m.dist_hv_mean, 390.0);
        let sd = ((100.0f64 + 100.0 + 900.0 + 900.0) / 3.0).sqrt();
        assert!((m.dist_hv_se - sd / 2.0).abs() < 1e-12);
        assert!(AggregateMetrics::from_episodes(&[]).is_err());
    }

    #[test]
    fn preset_parsing_round_trip() {
        for p in PresetName::ALL {
            assert_eq!(p.as_str().parse::<PresetName>().unwrap(), p);
        }
        assert!("HV+X".parse::<PresetName>().is_err());
    }

    #[test]
    fn preset_definitions() {
        let phi = 0.6;
        let e = ExperimentPreset::new(PresetName::HvE, 3, phi, 1).unwrap();
        assert!(e.agent_svo.iter().all(|p| p.phi == 0.0));
        let c = ExperimentPreset::new(PresetName::AvC, 3, phi, 1).unwrap();
        assert_eq!(c.mission, Autonomy::Autonomous);
        assert!(c.agent_svo.iter().all(|p| p.phi == phi && p.theta == std::f64::consts::FRAC_PI_2));
        let sc = ExperimentPreset::new(PresetName::HvSc, 3, phi, 1).unwrap();
        assert!(sc.agent_svo.iter().all(|p| p.phi == phi && p.theta == std::f64::consts::FRAC_PI_4));
        let one = ExperimentPreset::new(PresetName::HvOneSc, 3, phi, 1).unwrap();
        let altruists: Vec<usize> = (0..3).filter(|&i| one.agent_svo[i].phi > 0.0).collect();
        assert_eq!(altruists, vec![1]);
        assert!(ExperimentPreset::new(PresetName::HvOneSc, 3, phi, 3).is_err());
        assert!(ExperimentPreset::new(PresetName::HvSc, 3, 2.0, 0).is_err());
    }

    #[test]
    fn one_sc_setting_has_two_policy_groups() {
        let one = ExperimentPreset::new(PresetName::HvOneSc, 3, 0.7, default_guide(3)).unwrap();
        let env = one.environment(&ScenarioConfig::default()).unwrap();
        assert_eq!(env.group_count(), 2);
        assert_eq!((0..3).map(|a| env.policy_group(a)).collect::<Vec<_>>(), vec![0, 1, 0]);
    }

    #[test]
    fn paired_presets_share_initial_states() {
        let base = ScenarioConfig::default();
        let mut envs: Vec<HighwayEnv> = [PresetName::HvE, PresetName::HvSc, PresetName::HvOneSc]
            .into_iter()
            .map(|p| ExperimentPreset::new(p, 3, 0.7, 1).unwrap().environment(&base).unwrap())
            .collect();
        for e in 0..20 {
            let states: Vec<_> = envs
                .iter_mut()
                .map(|env| {
                    env.reset(&mut crate::trainer::training_episode_rng(5, e)).unwrap();
                    env.states().to_vec()
                })
                .collect();
            assert_eq!(states[0], states[1]);
            assert_eq!(states[0], states[2]);
        }
    }

    #[test]
    fn sweep_example_table() {
        let phis = phi_grid(3);
        assert_eq!(svo_argmin(&phis, &[0.3, 0.12, 0.2], &[0.4, 0.14, 0.3], 0.5).unwrap(), 1);
        let f_c = [0.1, 0.5, 0.3];
        let f_mf = [0.9, 0.2, 0.4];
        assert_eq!(svo_argmin(&phis, &f_c, &f_mf, 1.0).unwrap(), 0);
        assert_eq!(svo_argmin(&phis, &f_c, &f_mf, 0.0).unwrap(), 1);
        assert_eq!(svo_argmin(&phis, &[0.2, 0.2, 0.2], &[0.1, 0.1, 0.1], 0.5).unwrap(), 0);
    }

    #[test]
    fn default_grid_is_sixteenths_of_pi() {
        let g = phi_grid(9);
        assert_eq!(g.len(), 9);
        for (i, p) in g.iter().enumerate() {
            assert!((p - i as f64 * std::f64::consts::PI / 16.0).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn argmin_matches_integer_brute_force(
            counts in prop::collection::vec((0u32..=256, 0u32..=256), 1..12),
            xi_num in 0u32..=8,
        ) {
            // metrics k/256 and weight j/8 are exact doubles, so 8*256 times the
            // objective is an integer
            let n = 256.0;
            let phis = phi_grid(counts.len());
            let f_c: Vec<f64> = counts.iter().map(|c| c.0 as f64 / n).collect();
            let f_mf: Vec<f64> = counts.iter().map(|c| c.1 as f64 / n).collect();
            let xi = xi_num as f64 / 8.0;
            let scaled: Vec<u64> = counts
                .iter()
                .map(|&(c, m)| xi_num as u64 * c as u64 + (8 - xi_num) as u64 * m as u64)
                .collect();
            let min = *scaled.iter().min().unwrap();
            let brute = scaled.iter().position(|&v| v == min).unwrap();
            prop_assert_eq!(svo_argmin(&phis, &f_c, &f_mf, xi).unwrap(), brute);
        }

        #[test]
        fn argmin_matches_exhaustive_scan(
            table in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..12),
            xi in 0.0f64..=1.0,
        ) {
            let phis = phi_grid(table.len());
            let f_c: Vec<f64> = table.iter().map(|t| t.0).collect();
            let f_mf: Vec<f64> = table.iter().map(|t| t.1).collect();
            let got = svo_argmin(&phis, &f_c, &f_mf, xi).unwrap();
            for i in 0..table.len() {
                let gi = sweep_objective(f_c[got], f_mf[got], xi).unwrap();
                let oi = sweep_objective(f_c[i], f_mf[i], xi).unwrap();
                prop_assert!(gi < oi || (gi == oi && got <= i));
            }
        }
    }

    #[test]
    fn metrics_csv_schema_and_round_trip() {
        let m = AggregateMetrics::from_episodes(&[episode(true, false, false, 1.5, 2.5)]).unwrap();
        let rows = vec![MetricsRow::new("HV+SC", 3, &m), MetricsRow::new("HV+E", 4, &m)];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), "HV+SC,3,1,0.0,0.0,0.0,1.5,2.5");
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn aggregate_matches_per_episode_log() {
        let preset = ExperimentPreset::new(PresetName::HvSc, 2, 0.7, 1).unwrap();
        let base = ScenarioConfig { humans: 4, ..ScenarioConfig::default() };
        let env = preset.environment(&base).unwrap();
        let net = Network::he(env.observation_width(), &[16], 5, &mut evaluation_episode_rng(0, 0));
        let (m, log) = evaluate(&preset, &base, &[net.clone()], 12, 3).unwrap();
        assert_eq!(m, AggregateMetrics::from_episodes(&log).unwrap());
        assert_eq!(log.len(), 12);
        let (again, _) = evaluate(&preset, &base, &[net], 12, 3).unwrap();
        assert_eq!(m, again);
    }
}
