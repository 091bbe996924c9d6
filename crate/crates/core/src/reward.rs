//! Decentralised SVO reward: egoistic utility, cooperation towards other
//! autonomous agents, sympathy towards human drivers and the sparse mission
//! bonus. Everything except the crash and merge events is computed from the
//! agent's own observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{ObservationConfig, ObservationMatrix};
use crate::real::Real;
use crate::sim::{Autonomy, MetaAction};

/// `(sin x, cos x)` with the endpoints `0` and `π/2` mapped to exact zeros
/// and ones so that the pure settings switch channels off bit-exactly.
pub fn exact_sin_cos<T: Real>(x: T) -> (T, T) {
    if x == T::zero() {
        (T::zero(), T::one())
    } else if x == T::FRAC_PI_2() {
        (T::one(), T::zero())
    } else {
        x.sin_cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvoParams<T = f64> {
    /// SVO angle: 0 is egoistic, π/2 fully altruistic.
    pub phi: T,
    /// Split of the altruistic share: π/2 is cooperation only, 0 sympathy only.
    pub theta: T,
    pub eta: T,
    pub psi: T,
}

impl<T: Real> Default for SvoParams<T> {
    fn default() -> Self {
        Self { phi: T::zero(), theta: T::FRAC_PI_4(), eta: T::one(), psi: T::one() }
    }
}

impl<T: Real> SvoParams<T> {
    pub fn egoistic() -> Self {
        Self::default()
    }

    pub fn cooperative(phi: T) -> Self {
        Self { phi, theta: T::FRAC_PI_2(), ..Self::default() }
    }

    pub fn sympathetic_cooperative(phi: T) -> Self {
        Self { phi, theta: T::FRAC_PI_4(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let in_quadrant = |x: T| x >= T::zero() && x <= T::FRAC_PI_2();
        if in_quadrant(self.phi) && in_quadrant(self.theta) && self.eta > T::zero() && self.psi >= T::zero() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SVO parameters: {self:?}")))
        }
    }

    /// Coefficients of the egoistic, cooperation and sympathy channels.
    pub fn channel_weights(&self) -> [T; 3] {
        let (sp, cp) = exact_sin_cos(self.phi);
        let (st, ct) = exact_sin_cos(self.theta);
        [cp, st * sp, ct * sp]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoisticWeights {
    pub w_distance: f64,
    pub w_speed: f64,
    pub w_accel_cost: f64,
    pub w_lane_change_cost: f64,
}

impl Default for EgoisticWeights {
    fn default() -> Self {
        Self { w_distance: 0.05, w_speed: 0.05, w_accel_cost: 0.005, w_lane_change_cost: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: EgoisticWeights,
    /// Speeds mapped linearly onto `[0, 1]`, m/s.
    pub v_min: f64,
    pub v_max: f64,
    /// Time between decisions, s.
    pub decision_period: f64,
    pub crash_penalty: f64,
    pub mission_bonus: f64,
    /// Extra factor on the mission bonus when it enters a social channel.
    pub mission_gain: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: EgoisticWeights::default(),
            v_min: 15.0,
            v_max: 30.0,
            decision_period: 1.0,
            crash_penalty: -1.0,
            mission_bonus: 0.5,
            mission_gain: 20.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ok = [w.w_distance, w.w_speed, w.w_accel_cost, w.w_lane_change_cost].iter().all(|&x| x >= 0.0)
            && self.v_min < self.v_max
            && self.decision_period > 0.0
            && self.crash_penalty.is_finite()
            && self.mission_bonus.is_finite()
            && self.mission_gain >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reward configuration: {self:?}")))
        }
    }

    pub fn normalized_speed(&self, v: f64) -> f64 {
        ((v - self.v_min) / (self.v_max - self.v_min)).clamp(0.0, 1.0)
    }

    /// Longitudinal progress over one decision period relative to the
    /// distance covered at `v_max`.
    pub fn normalized_progress(&self, dl: f64) -> f64 {
        (dl / (self.v_max * self.decision_period)).clamp(0.0, 1.0)
    }
}

/// What the ego did during one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoStep {
    pub speed: f64,
    pub progress: f64,
    /// Change of longitudinal intent, normalised to `[0, 1]`.
    pub accel_change: f64,
    pub lane_change: bool,
    pub crashed: bool,
}

fn longitudinal_intent(a: MetaAction) -> f64 {
    match a {
        MetaAction::Accelerate => 1.0,
        MetaAction::Decelerate => -1.0,
        _ => 0.0,
    }
}

impl EgoStep {
    /// Reads the step from the ego rows of consecutive observations; the
    /// most recent two history slots of `next` hold the actions involved.
    pub fn from_observations(
        prev: &ObservationMatrix,
        next: &ObservationMatrix,
        crashed: bool,
        obs: &ObservationConfig,
    ) -> Self {
        let (Some(p), Some(n)) = (prev.decode_row(0, &obs.scales), next.decode_row(0, &obs.scales)) else {
            return Self { crashed, ..Self::default() };
        };
        let now = obs.decode_history(next.row(0), 0);
        let before = obs.decode_history(next.row(0), 1);
        let accel_change = match (now, before) {
            (Some(a), Some(b)) => 0.5 * (longitudinal_intent(a) - longitudinal_intent(b)).abs(),
            _ => 0.0,
        };
        Self {
            speed: n.speed(),
            progress: n.l - p.l,
            accel_change,
            lane_change: now.is_some_and(MetaAction::is_lateral),
            crashed,
        }
    }
}

pub fn egoistic_reward(step: &EgoStep, cfg: &RewardConfig) -> f64 {
    if step.crashed {
        return cfg.crash_penalty;
    }
    let w = &cfg.weights;
    w.w_speed * cfg.normalized_speed(step.speed) + w.w_distance * cfg.normalized_progress(step.progress)
        - w.w_accel_cost * step.accel_change.clamp(0.0, 1.0)
        - if step.lane_change { w.w_lane_change_cost } else { 0.0 }
}

/// `Σ u_k / (η d_k^ψ)` over `(utility, distance)` pairs. Non-positive
/// distances are contacts, which the crash handling covers, and are skipped.
pub fn sympathy_reward<T: Real>(humans: &[(T, T)], p: &SvoParams<T>) -> T {
    humans
        .iter()
        .filter(|(_, d)| *d > T::zero())
        .fold(T::zero(), |acc, &(u, d)| acc + u / (p.eta * d.powf(p.psi)))
}

/// Sum of the other agents' utilities; the ego's own entry is ignored.
pub fn cooperation_reward<T: Real>(allies: &[(usize, T)], ego: usize) -> T {
    allies.iter().filter(|(id, _)| *id != ego).fold(T::zero(), |acc, &(_, u)| acc + u)
}

/// Utility of another vehicle as far as it can be observed: speed and the
/// progress implied by its longitudinal speed.
pub fn observed_utility(speed: f64, longitudinal_speed: f64, cfg: &RewardConfig) -> f64 {
    cfg.weights.w_speed * cfg.normalized_speed(speed)
        + cfg.weights.w_distance * cfg.normalized_progress(longitudinal_speed * cfg.decision_period)
}

/// Cooperation and sympathy sums over the populated non-ego rows of `obs`.
pub fn social_terms(obs: &ObservationMatrix, p: &SvoParams, obs_cfg: &ObservationConfig, cfg: &RewardConfig) -> (f64, f64) {
    let Some(ego) = obs.decode_row(0, &obs_cfg.scales) else {
        return (0.0, 0.0);
    };
    let mut allies = Vec::new();
    let mut humans = Vec::new();
    for i in 1..obs.rows {
        let Some(r) = obs.decode_row(i, &obs_cfg.scales) else { continue };
        let (vl, vd) = (ego.vl + r.vl, ego.vd + r.vd);
        let speed = vl.hypot(vd);
        if r.autonomous {
            allies.push((i, observed_utility(speed, vl, cfg)));
        } else {
            humans.push((cfg.normalized_speed(speed), r.l.hypot(r.d)));
        }
    }
    (cooperation_reward(&allies, 0), sympathy_reward(&humans, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissionEvent {
    None,
    MergeSuccess { mission_autonomy: Autonomy },
}

/// Mission bonus split into `(direct, cooperation, sympathy)` before the SVO
/// weighting. The merging agent gets the bonus directly; every other agent
/// receives it, amplified by `mission_gain`, in the channel matching the
/// mission vehicle's type.
pub fn mission_reward(event: MissionEvent, ego_is_mission: bool, cfg: &RewardConfig) -> (f64, f64, f64) {
    match event {
        MissionEvent::None => (0.0, 0.0, 0.0),
        MissionEvent::MergeSuccess { .. } if ego_is_mission => (cfg.mission_bonus, 0.0, 0.0),
        MissionEvent::MergeSuccess { mission_autonomy } => {
            let social = cfg.mission_gain * cfg.mission_bonus;
            match mission_autonomy {
                Autonomy::Autonomous => (0.0, social, 0.0),
                Autonomy::Human => (0.0, 0.0, social),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown<T = f64> {
    pub egoistic: T,
    pub cooperation: T,
    pub sympathy: T,
    pub mission_direct: T,
    pub mission_cooperation: T,
    pub mission_sympathy: T,
}

impl<T: Real> RewardBreakdown<T> {
    /// Weighted egoistic, cooperation and sympathy channels. A channel with a
    /// zero coefficient is exactly +0.
    pub fn channels(&self, p: &SvoParams<T>) -> [T; 3] {
        let [we, wc, ws] = p.channel_weights();
        let weigh = |w: T, x: T| if w == T::zero() { T::zero() } else { w * x };
        [
            weigh(we, self.egoistic + self.mission_direct),
            weigh(wc, self.cooperation + self.mission_cooperation),
            weigh(ws, self.sympathy + self.mission_sympathy),
        ]
    }

    pub fn is_finite(&self) -> bool {
        [
            self.egoistic,
            self.cooperation,
            self.sympathy,
            self.mission_direct,
            self.mission_cooperation,
            self.mission_sympathy,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

pub fn total_reward<T: Real>(b: &RewardBreakdown<T>, p: &SvoParams<T>) -> T {
    let [e, c, s] = b.channels(p);
    e + c + s
}

/// Everything an agent's reward for one decision step depends on.
pub struct RewardInputs<'a> {
    pub prev: &'a ObservationMatrix,
    pub next: &'a ObservationMatrix,
    pub crashed: bool,
    pub ego_is_mission: bool,
    pub event: MissionEvent,
}

pub fn reward_breakdown(
    inputs: &RewardInputs<'_>,
    p: &SvoParams,
    obs_cfg: &ObservationConfig,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let step = EgoStep::from_observations(inputs.prev, inputs.next, inputs.crashed, obs_cfg);
    let (cooperation, sympathy) = social_terms(inputs.next, p, obs_cfg, cfg);
    let (mission_direct, mission_cooperation, mission_sympathy) =
        mission_reward(inputs.event, inputs.ego_is_mission, cfg);
    RewardBreakdown {
        egoistic: egoistic_reward(&step, cfg),
        cooperation,
        sympathy,
        mission_direct,
        mission_cooperation,
        mission_sympathy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{assemble_observation, ActionHistory};
    use crate::sim::{RoadNet, VehicleState};
    use proptest::prelude::*;
    use std::collections::BTreeSet;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn max_utility_step() {
        let cfg = RewardConfig::default();
        let step = EgoStep { speed: cfg.v_max, progress: 12.0, ..EgoStep::default() };
        let w = cfg.weights;
        assert_eq!(egoistic_reward(&step, &cfg), w.w_speed + w.w_distance * 12.0 / 30.0);
    }

    #[test]
    fn crash_overrides_motion() {
        let cfg = RewardConfig::default();
        let step = EgoStep { speed: 30.0, progress: 30.0, crashed: true, ..EgoStep::default() };
        assert_eq!(egoistic_reward(&step, &cfg), -1.0);
    }

    #[test]
    fn standing_still_earns_nothing() {
        let cfg = RewardConfig::default();
        assert_eq!(egoistic_reward(&EgoStep::default(), &cfg), 0.0);
    }

    #[test]
    fn sympathy_examples() {
        let p = SvoParams::<f64>::default();
        assert_eq!(sympathy_reward::<f64>(&[], &p), 0.0);
        assert!((sympathy_reward(&[(1.0, 10.0)], &p) - 0.1).abs() < 1e-15);
        let flat = SvoParams { psi: 0.0, eta: 2.0, ..p };
        assert_eq!(sympathy_reward(&[(1.0, 10.0), (0.5, 3.0)], &flat), 0.75);
    }

    #[test]
    fn cooperation_excludes_ego() {
        let cfg = RewardConfig::default();
        assert_eq!(cooperation_reward::<f64>(&[], 0), 0.0);
        let u = observed_utility(cfg.v_max, cfg.v_max, &cfg);
        let allies = [(1, u), (2, u)];
        let expect = 2.0 * (cfg.weights.w_speed + cfg.weights.w_distance);
        assert_eq!(cooperation_reward(&allies, 0), expect);
        let with_ego = [(0, 7.0), (1, u), (2, u)];
        assert_eq!(cooperation_reward(&with_ego, 0), expect);
    }

    #[test]
    fn mission_routing() {
        let cfg = RewardConfig::default();
        let ok_hv = MissionEvent::MergeSuccess { mission_autonomy: Autonomy::Human };
        assert_eq!(mission_reward(ok_hv, true, &cfg), (0.5, 0.0, 0.0));
        assert_eq!(mission_reward(MissionEvent::None, false, &cfg), (0.0, 0.0, 0.0));
        let (d, c, s) = mission_reward(ok_hv, false, &cfg);
        assert_eq!((d, c), (0.0, 0.0));
        assert!(s > 0.0);
        // φ = π/2, θ = 0 → only the sympathy channel carries it
        let b = RewardBreakdown { mission_sympathy: s, ..RewardBreakdown::default() };
        let p = SvoParams { phi: FRAC_PI_2, theta: 0.0, ..SvoParams::default() };
        let ch = b.channels(&p);
        assert_eq!(ch[0], 0.0);
        assert_eq!(ch[1], 0.0);
        assert_eq!(ch[2], s);
        let ok_av = MissionEvent::MergeSuccess { mission_autonomy: Autonomy::Autonomous };
        assert_eq!(mission_reward(ok_av, false, &cfg).1, s);
    }

    #[test]
    fn total_examples() {
        let b = RewardBreakdown { egoistic: 1.0, cooperation: 2.0, sympathy: 4.0, ..RewardBreakdown::default() };
        let p = SvoParams { phi: FRAC_PI_4, theta: FRAC_PI_4, ..SvoParams::default() };
        let expect = 0.5f64.sqrt() + 0.5 * 2.0 + 0.5 * 4.0;
        assert!((total_reward(&b, &p) - expect).abs() < 1e-12);
        assert!((total_reward(&b, &p) - 3.707).abs() < 1e-3);
        assert_eq!(total_reward(&b, &SvoParams::egoistic()), 1.0);
        let c = SvoParams::cooperative(0.3);
        assert_eq!(b.channels(&c)[2], 0.0);
    }

    #[test]
    fn validation() {
        assert!(SvoParams::<f64>::default().validate().is_ok());
        assert!(SvoParams { phi: -0.1, ..SvoParams::<f64>::default() }.validate().is_err());
        assert!(SvoParams { eta: 0.0, ..SvoParams::<f64>::default() }.validate().is_err());
        assert!(RewardConfig::default().validate().is_ok());
    }

    #[test]
    fn generic_over_f32() {
        let b = RewardBreakdown::<f32> { egoistic: 1.0, cooperation: 2.0, sympathy: 4.0, ..Default::default() };
        let p = SvoParams::<f32> { phi: std::f32::consts::FRAC_PI_4, ..Default::default() };
        assert!((total_reward(&b, &p) - 3.7071068).abs() < 1e-5);
    }

    fn world() -> Vec<VehicleState> {
        let road = RoadNet::default();
        let mut m = VehicleState::new(0, 100.0, 3, 24.0, Autonomy::Human, &road);
        m.is_mission = true;
        vec![
            m,
            VehicleState::new(1, 110.0, 2, 25.0, Autonomy::Autonomous, &road),
            VehicleState::new(2, 130.0, 2, 27.0, Autonomy::Autonomous, &road),
            VehicleState::new(3, 90.0, 1, 22.0, Autonomy::Human, &road),
        ]
    }

    #[test]
    fn reward_is_local_to_serialized_observations() {
        let cfg = RewardConfig::default();
        let obs_cfg = ObservationConfig::default();
        let road = RoadNet::default();
        let mut states = world();
        let mut hs: Vec<ActionHistory> = (0..4).map(|_| ActionHistory::new(10)).collect();
        let vis: BTreeSet<usize> = [0, 2, 3].into_iter().collect();
        let prev = assemble_observation(&states[1], &vis, &states, &hs, &obs_cfg, &road);
        for s in &mut states {
            s.l += s.speed;
        }
        hs[1].push(MetaAction::Accelerate);
        let next = assemble_observation(&states[1], &vis, &states, &hs, &obs_cfg, &road);
        let p = SvoParams::sympathetic_cooperative(FRAC_PI_4);
        let inputs = RewardInputs { prev: &prev, next: &next, crashed: false, ego_is_mission: false, event: MissionEvent::None };
        let b = reward_breakdown(&inputs, &p, &obs_cfg, &cfg);
        assert!(b.cooperation > 0.0 && b.sympathy > 0.0);
        let prev2 = ObservationMatrix::from_record(prev.rows, prev.cols, &prev.to_record()).unwrap();
        let next2 = ObservationMatrix::from_record(next.rows, next.cols, &next.to_record()).unwrap();
        let inputs2 = RewardInputs { prev: &prev2, next: &next2, ..inputs };
        let b2 = reward_breakdown(&inputs2, &p, &obs_cfg, &cfg);
        assert_eq!(total_reward(&b, &p).to_bits(), total_reward(&b2, &p).to_bits());
        // accel change from Idle to Accelerate is half the maximum
        let step = EgoStep::from_observations(&prev, &next, false, &obs_cfg);
        assert_eq!(step.accel_change, 0.5);
        assert!(!step.lane_change);
        assert!((step.progress - 25.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn monotone_in_each_component(
            phi in 0.0f64..=FRAC_PI_2, theta in 0.0f64..=FRAC_PI_2,
            e in -2.0f64..2.0, c in -2.0f64..2.0, s in -2.0f64..2.0, bump in 0.0f64..1.0,
        ) {
            let p = SvoParams { phi, theta, ..SvoParams::default() };
            let b = RewardBreakdown { egoistic: e, cooperation: c, sympathy: s, ..RewardBreakdown::default() };
            let base = total_reward(&b, &p);
            for k in 0..3 {
                let mut up = b;
                match k {
                    0 => up.egoistic += bump,
                    1 => up.cooperation += bump,
                    _ => up.sympathy += bump,
                }
                prop_assert!(total_reward(&up, &p) >= base - 1e-12);
            }
        }
    }
}
