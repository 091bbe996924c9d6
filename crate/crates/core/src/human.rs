//! Human driver behaviour: IDM car following, MOBIL lane changes with an
//! SVO-valued politeness, and sampling of human SVO angles.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sim::{Controller, ControlSignal, MetaAction, PidParams, RoadNet, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams<T = f64> {
    pub v_set: T,
    pub t_set: T,
    pub d0: T,
    pub acc_max: T,
    /// Comfortable deceleration; only its magnitude enters the model.
    pub acc_des: T,
    /// Lower clamp on the IDM output is `-brake_max`.
    pub brake_max: T,
    pub sigma_vel: T,
    pub dt: T,
}

impl<T: Real> Default for IdmParams<T> {
    fn default() -> Self {
        Self {
            v_set: T::of(25.0),
            t_set: T::of(0.5),
            d0: T::of(1.0),
            acc_max: T::of(3.0),
            acc_des: T::of(-5.0),
            brake_max: T::of(8.0),
            sigma_vel: T::of(0.2),
            dt: T::of(1.0 / 15.0),
        }
    }
}

impl<T: Real> IdmParams<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_set > T::zero()
            && self.t_set >= T::zero()
            && self.d0 > T::zero()
            && self.acc_max > T::zero()
            && self.acc_des.abs() > T::zero()
            && self.brake_max > T::zero()
            && self.sigma_vel >= T::zero()
            && self.dt > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid IDM parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilParams<T = f64> {
    pub acc_th: T,
    pub b_safe: T,
    /// A lane change is not started while another vehicle within this
    /// longitudinal distance is already moving into the same lane, m.
    pub conflict_range: T,
}

impl<T: Real> Default for MobilParams<T> {
    fn default() -> Self {
        Self { acc_th: T::of(0.2), b_safe: T::of(4.0), conflict_range: T::of(30.0) }
    }
}

/// Desired bumper-to-bumper gap to the leader, clamped at zero.
pub fn desired_gap<T: Real>(speed: T, approach_rate: T, p: &IdmParams<T>) -> T {
    let two = T::of(2.0);
    let interaction = speed * approach_rate / (two * (p.acc_max * p.acc_des.abs()).sqrt());
    (p.d0 + speed * p.t_set + interaction).max(T::zero())
}

/// IDM acceleration for a gap `gap` to the leader (`T::infinity()` when
/// there is none), clamped to `[-brake_max, acc_max]`.
pub fn idm_acceleration<T: Real>(speed: T, gap: T, approach_rate: T, p: &IdmParams<T>) -> Result<T> {
    if gap.is_nan() || gap <= T::zero() {
        return Err(Error::NonPositiveGap(gap.as_f64()));
    }
    let free = (speed / p.v_set).powi(4);
    let interaction = if gap.is_infinite() {
        T::zero()
    } else {
        (desired_gap(speed, approach_rate, p) / gap).powi(2)
    };
    let acc = p.acc_max * (T::one() - free - interaction);
    Ok(acc.max(-p.brake_max).min(p.acc_max))
}

/// Adds the per-step velocity noise: `accel + sigma_vel / dt * z`.
pub fn noisy_acceleration<T: Real, R: Rng + ?Sized>(accel: T, p: &IdmParams<T>, rng: &mut R) -> T {
    if p.sigma_vel == T::zero() {
        return accel;
    }
    let z: f64 = StandardNormal.sample(rng);
    accel + p.sigma_vel / p.dt * T::of(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneDecision {
    KeepLane,
    ChangeLeft,
    ChangeRight,
}

/// Accelerations before (`*_now`) and after (`*_after`) a hypothetical lane
/// change of the ego vehicle: `new_follower` trails in the target lane,
/// `old_follower` trails in the current lane. Absent followers contribute 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeAccels<T> {
    pub ego_now: T,
    pub ego_after: T,
    pub new_follower_now: T,
    pub new_follower_after: T,
    pub old_follower_now: T,
    pub old_follower_after: T,
    /// False when the ego would overlap a vehicle in the target lane.
    pub feasible: bool,
}

/// The politeness-weighted incentive, or `None` when the safety gate rejects the move.
pub fn mobil_incentive<T: Real>(acc: &LaneChangeAccels<T>, politeness: T, m: &MobilParams<T>) -> Option<T> {
    if !acc.feasible || acc.new_follower_after <= -m.b_safe {
        return None;
    }
    let others = (acc.new_follower_after - acc.new_follower_now) + (acc.old_follower_after - acc.old_follower_now);
    Some(acc.ego_after - acc.ego_now + politeness.sin() * others)
}

/// MOBIL over the (optional) left and right candidates. A direction
/// qualifies when it passes the safety gate and its incentive exceeds
/// `acc_th`; the larger incentive wins and ties go left.
pub fn mobil_decision<T: Real>(
    left: Option<&LaneChangeAccels<T>>,
    right: Option<&LaneChangeAccels<T>>,
    politeness: T,
    m: &MobilParams<T>,
) -> LaneDecision {
    let score = |c: Option<&LaneChangeAccels<T>>| {
        c.and_then(|a| mobil_incentive(a, politeness, m)).filter(|&x| x > m.acc_th)
    };
    match (score(left), score(right)) {
        (Some(l), Some(r)) if r > l => LaneDecision::ChangeRight,
        (Some(_), _) => LaneDecision::ChangeLeft,
        (None, Some(_)) => LaneDecision::ChangeRight,
        (None, None) => LaneDecision::KeepLane,
    }
}

/// A vehicle ahead of or behind the ego vehicle in some lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    /// Bumper-to-bumper gap, m. Non-positive means the footprints overlap.
    pub gap: T,
    pub speed: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors<T> {
    pub leader: Option<Neighbor<T>>,
    pub follower: Option<Neighbor<T>>,
}

fn idm_towards<T: Real>(speed: T, leader: Option<Neighbor<T>>, p: &IdmParams<T>) -> Result<T> {
    match leader {
        Some(n) => idm_acceleration(speed, n.gap, speed - n.speed, p),
        None => idm_acceleration(speed, T::infinity(), T::zero(), p),
    }
}

/// Evaluates the six MOBIL accelerations with IDM for moving from `current`
/// into `target`. All vehicles are assumed to follow `p`.
pub fn lane_change_accels<T: Real>(
    ego_speed: T,
    ego_length: T,
    current: &LaneNeighbors<T>,
    target: &LaneNeighbors<T>,
    p: &IdmParams<T>,
) -> LaneChangeAccels<T> {
    let overlaps = |n: Option<Neighbor<T>>| n.is_some_and(|n| n.gap <= T::zero());
    if overlaps(target.leader) || overlaps(target.follower) || overlaps(current.leader) || overlaps(current.follower) {
        return LaneChangeAccels {
            ego_now: T::zero(),
            ego_after: T::zero(),
            new_follower_now: T::zero(),
            new_follower_after: T::zero(),
            old_follower_now: T::zero(),
            old_follower_after: T::zero(),
            feasible: false,
        };
    }
    // gaps are positive from here on, so IDM cannot fail
    let idm = |speed, leader| idm_towards(speed, leader, p).expect("positive gap");
    let merged = |behind: Neighbor<T>, ahead: Option<Neighbor<T>>| {
        ahead.map(|a| Neighbor { gap: behind.gap + ego_length + a.gap, speed: a.speed })
    };
    let ego = Some(Neighbor { gap: T::zero(), speed: ego_speed });
    let (new_now, new_after) = match target.follower {
        Some(f) => (
            idm(f.speed, merged(f, target.leader)),
            idm(f.speed, ego.map(|e| Neighbor { gap: f.gap, speed: e.speed })),
        ),
        None => (T::zero(), T::zero()),
    };
    let (old_now, old_after) = match current.follower {
        Some(f) => (
            idm(f.speed, ego.map(|e| Neighbor { gap: f.gap, speed: e.speed })),
            idm(f.speed, merged(f, current.leader)),
        ),
        None => (T::zero(), T::zero()),
    };
    LaneChangeAccels {
        ego_now: idm(ego_speed, current.leader),
        ego_after: idm(ego_speed, target.leader),
        new_follower_now: new_now,
        new_follower_after: new_after,
        old_follower_now: old_now,
        old_follower_after: old_after,
        feasible: true,
    }
}

/// Discrete empirical distribution of human SVO angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvoDistribution {
    /// `(angle in radians, probability)` atoms.
    pub atoms: Vec<(f64, f64)>,
}

impl Default for SvoDistribution {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            atoms: vec![(-PI / 8.0, 0.05), (0.0, 0.60), (PI / 8.0, 0.10), (PI / 4.0, 0.20), (3.0 * PI / 8.0, 0.05)],
        }
    }
}

impl SvoDistribution {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.atoms.iter().map(|a| a.1).sum();
        let ok = !self.atoms.is_empty()
            && self.atoms.iter().all(|a| a.1 >= 0.0 && a.0.is_finite())
            && (total - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("SVO distribution weights must be non-negative and sum to 1".into()))
        }
    }

    /// Angle of the most probable atom.
    pub fn mode(&self) -> f64 {
        self.atoms.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|a| a.0).unwrap_or(0.0)
    }
}

pub fn sample_human_svo<R: Rng + ?Sized>(dist: &SvoDistribution, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(angle, w) in &dist.atoms {
        acc += w;
        if u < acc {
            return angle;
        }
    }
    // rounding left a sliver above the last cumulative weight
    dist.atoms.iter().rev().find(|a| a.1 > 0.0).map(|a| a.0).unwrap_or(0.0)
}

/// Lateral distance below which a vehicle is considered to occupy a lane.
fn occupies(v: &VehicleState, lane: usize, road: &RoadNet) -> bool {
    (v.d - road.lane_center(lane)).abs() < 0.5 * (road.lane_width + v.width) - 0.2
}

/// Closest leader and follower of `ego` among the vehicles occupying `lane`.
pub fn neighbors_in_lane(ego: &VehicleState, world: &[VehicleState], lane: usize, road: &RoadNet) -> LaneNeighbors<f64> {
    let mut out = LaneNeighbors::default();
    let mut best_ahead = f64::INFINITY;
    let mut best_behind = f64::INFINITY;
    for o in world.iter().filter(|o| o.id != ego.id && occupies(o, lane, road)) {
        let dl = o.l - ego.l;
        let gap = dl.abs() - 0.5 * (o.length + ego.length);
        let n = Neighbor { gap, speed: o.speed * o.yaw.cos() };
        if dl > 0.0 || (dl == 0.0 && o.id > ego.id) {
            if dl < best_ahead {
                best_ahead = dl;
                out.leader = Some(n);
            }
        } else if -dl < best_behind {
            best_behind = -dl;
            out.follower = Some(n);
        }
    }
    out
}

/// Per-vehicle state of a human driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanDriver {
    /// SVO angle used as MOBIL politeness, sampled once per episode.
    pub politeness: f64,
}

/// Outcome of one human-driver control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanStep {
    pub control: ControlSignal,
    /// Set on decision ticks.
    pub decision: Option<LaneDecision>,
    /// Noise-free IDM acceleration, used to log an equivalent meta-action.
    pub idm_acceleration: f64,
}

/// Shared parameters of the human driver model.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanModel<'a> {
    pub road: &'a RoadNet,
    pub idm: &'a IdmParams,
    pub mobil: &'a MobilParams,
    pub pid: &'a PidParams,
}

impl HumanModel<'_> {
    fn ego_leader(&self, hv: &VehicleState, world: &[VehicleState], lane: usize) -> Option<Neighbor<f64>> {
        neighbors_in_lane(hv, world, lane, self.road).leader
    }

    /// Ramp lane end seen as a stationary obstacle; only used for the lane-change incentive.
    fn with_lane_end(&self, hv: &VehicleState, mut n: LaneNeighbors<f64>) -> LaneNeighbors<f64> {
        if self.road.is_ramp(hv.lane) {
            let gap = (self.road.ramp_merge_end - hv.front()).max(1e-3);
            if n.leader.is_none_or(|l| l.gap > gap) {
                n.leader = Some(Neighbor { gap, speed: 0.0 });
            }
        }
        n
    }

    /// Runs MOBIL for `hv` against the current world.
    pub fn lane_decision(&self, hv: &VehicleState, driver: &HumanDriver, world: &[VehicleState]) -> LaneDecision {
        let current = self.with_lane_end(hv, neighbors_in_lane(hv, world, hv.lane, self.road));
        let candidate = |to: Option<usize>| {
            to.filter(|&t| self.road.lane_change_allowed(hv.lane, t, hv.l)).map(|t| {
                let target = neighbors_in_lane(hv, world, t, self.road);
                lane_change_accels(hv.speed, hv.length, &current, &target, self.idm)
            })
        };
        let left = candidate(hv.lane.checked_sub(1));
        let right = candidate(Some(hv.lane + 1));
        mobil_decision(left.as_ref(), right.as_ref(), driver.politeness, self.mobil)
    }

    /// Noise-free longitudinal acceleration: IDM towards the leader in the
    /// current lane and, while changing lanes, the leader in the target lane.
    pub fn longitudinal(&self, hv: &VehicleState, controller: &Controller, world: &[VehicleState]) -> f64 {
        let mut lanes = vec![hv.lane];
        if controller.target_lane != hv.lane {
            lanes.push(controller.target_lane);
        }
        lanes
            .into_iter()
            .map(|lane| match self.ego_leader(hv, world, lane) {
                Some(n) if n.gap > 0.0 => idm_acceleration(hv.speed, n.gap, hv.speed - n.speed, self.idm)
                    .expect("positive gap"),
                Some(_) => -self.idm.brake_max,
                None => idm_acceleration(hv.speed, f64::INFINITY, 0.0, self.idm).expect("infinite gap"),
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Whether a vehicle other than `ego` within `range` of it is already
/// moving into `target`. `setpoints` is indexed like `world`.
pub fn lane_change_conflict(
    ego: &VehicleState,
    target: usize,
    world: &[VehicleState],
    setpoints: &[Controller],
    range: f64,
) -> bool {
    world.iter().zip(setpoints).any(|(o, c)| {
        o.id != ego.id && !o.crashed && c.target_lane == target && o.lane != target && (o.l - ego.l).abs() < range
    })
}

/// One control step of a human-driven vehicle. On decision ticks MOBIL may
/// retarget the lateral controller (only once the previous lane change has
/// completed and no nearby vehicle is entering the same lane); longitudinal
/// motion is IDM plus velocity noise. `setpoints` are the current
/// controllers of all vehicles, indexed like `world`.
#[allow(clippy::too_many_arguments)]
pub fn hv_policy_step<R: Rng + ?Sized>(
    hv: &VehicleState,
    driver: &HumanDriver,
    controller: &mut Controller,
    world: &[VehicleState],
    setpoints: &[Controller],
    model: &HumanModel<'_>,
    decide: bool,
    rng: &mut R,
) -> HumanStep {
    let decision = if decide && controller.target_lane == hv.lane {
        let mut d = model.lane_decision(hv, driver, world);
        let target = match d {
            LaneDecision::ChangeLeft => Some(hv.lane - 1),
            LaneDecision::ChangeRight => Some(hv.lane + 1),
            LaneDecision::KeepLane => None,
        };
        if target.is_some_and(|t| lane_change_conflict(hv, t, world, setpoints, model.mobil.conflict_range)) {
            d = LaneDecision::KeepLane;
        }
        match d {
            LaneDecision::ChangeLeft => controller.target_lane = hv.lane - 1,
            LaneDecision::ChangeRight => controller.target_lane = hv.lane + 1,
            LaneDecision::KeepLane => {}
        }
        Some(d)
    } else if decide {
        Some(LaneDecision::KeepLane)
    } else {
        None
    };
    let idm = model.longitudinal(hv, controller, world);
    let acceleration = noisy_acceleration(idm, model.idm, rng);
    let control = ControlSignal { acceleration, steering: controller.steering(hv, model.road, model.pid) }
        .clamped(&model.pid.limits);
    HumanStep { control, decision, idm_acceleration: idm }
}

/// Meta-action equivalent of a human decision, for action histories.
pub fn human_meta_action(decision: LaneDecision, acceleration: f64, dead_band: f64) -> MetaAction {
    match decision {
        LaneDecision::ChangeLeft => MetaAction::LaneLeft,
        LaneDecision::ChangeRight => MetaAction::LaneRight,
        LaneDecision::KeepLane if acceleration > dead_band => MetaAction::Accelerate,
        LaneDecision::KeepLane if acceleration < -dead_band => MetaAction::Decelerate,
        LaneDecision::KeepLane => MetaAction::Idle,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step_vehicle, Autonomy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p() -> IdmParams {
        IdmParams::default()
    }

    #[test]
    fn desired_gap_values() {
        assert_eq!(desired_gap(0.0, 0.0, &p()), 1.0);
        assert!((desired_gap(20.0, 0.0, &p()) - 11.0).abs() < 1e-12);
        let expected = 11.0 + 40.0 / (2.0 * 15f64.sqrt());
        assert!((desired_gap(20.0, 2.0, &p()) - expected).abs() < 1e-12);
        assert!((expected - 16.164).abs() < 1e-3);
        // strongly negative approach rate is clamped at zero
        assert_eq!(desired_gap(20.0, -50.0, &p()), 0.0);
    }

    #[test]
    fn idm_values() {
        assert_eq!(idm_acceleration(25.0, f64::INFINITY, 0.0, &p()).unwrap(), 0.0);
        assert_eq!(idm_acceleration(0.0, f64::INFINITY, 0.0, &p()).unwrap(), 3.0);
        let a = idm_acceleration(20.0, 30.0, 0.0, &p()).unwrap();
        let expected = 3.0 * (1.0 - 0.8f64.powi(4) - (11.0f64 / 30.0).powi(2));
        assert!((a - expected).abs() < 1e-12);
        assert!((a - 1.368).abs() < 1e-3);
    }

    #[test]
    fn idm_rejects_non_positive_gap() {
        assert!(matches!(idm_acceleration(10.0, 0.0, 0.0, &p()), Err(Error::NonPositiveGap(_))));
        assert!(idm_acceleration(10.0, -1.0, 0.0, &p()).is_err());
    }

    #[test]
    fn idm_is_bounded_and_monotone_in_gap() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..200 {
            let gap = k as f64 * 0.5;
            let a = idm_acceleration(22.0, gap, 1.0, &p()).unwrap();
            assert!(a <= 3.0 && a >= -8.0);
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn idm_generic_over_f32() {
        let p32: IdmParams<f32> = IdmParams::default();
        let a = idm_acceleration(20.0f32, 30.0, 0.0, &p32).unwrap();
        assert!((a - 1.368).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_is_identity() {
        let q = IdmParams { sigma_vel: 0.0, ..p() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(noisy_acceleration(1.234, &q, &mut rng), 1.234);
    }

    #[test]
    fn noise_moments() {
        let q = p();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| noisy_acceleration(0.7, &q, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = q.sigma_vel / q.dt;
        assert!((var.sqrt() - target).abs() / target < 0.05);
        assert!((mean - 0.7).abs() < 3.0 * target / (n as f64).sqrt());
    }

    fn accels(ego_gain: f64, others: f64, new_after: f64) -> LaneChangeAccels<f64> {
        LaneChangeAccels {
            ego_now: 0.0,
            ego_after: ego_gain,
            new_follower_now: 0.0,
            new_follower_after: new_after,
            old_follower_now: 0.0,
            old_follower_after: others,
            feasible: true,
        }
    }

    #[test]
    fn mobil_keeps_lane_without_incentive() {
        let m = MobilParams::default();
        let a = accels(0.0, 0.0, 0.0);
        assert_eq!(mobil_decision(Some(&a), Some(&a), 0.3, &m), LaneDecision::KeepLane);
    }

    #[test]
    fn egoist_ignores_others() {
        let m = MobilParams::default();
        let a = accels(0.5, -3.0, -3.5);
        assert_eq!(mobil_decision(Some(&a), None, 0.0, &m), LaneDecision::ChangeLeft);
        assert_eq!(mobil_decision(None, Some(&a), 0.0, &m), LaneDecision::ChangeRight);
        // a polite driver declines the same move
        assert_eq!(mobil_decision(Some(&a), None, std::f64::consts::FRAC_PI_4, &m), LaneDecision::KeepLane);
    }

    #[test]
    fn safety_gate_blocks_any_incentive() {
        let m = MobilParams::default();
        let a = LaneChangeAccels { new_follower_now: -10.0, ..accels(5.0, 0.0, -5.0) };
        assert_eq!(mobil_decision(Some(&a), None, 0.5, &m), LaneDecision::KeepLane);
        // scalar oracle of the gate
        assert!(a.new_follower_after <= -m.b_safe);
    }

    #[test]
    fn larger_incentive_wins_ties_go_left() {
        let m = MobilParams::default();
        let small = accels(0.5, 0.0, 0.0);
        let big = accels(1.0, 0.0, 0.0);
        assert_eq!(mobil_decision(Some(&small), Some(&big), 0.0, &m), LaneDecision::ChangeRight);
        assert_eq!(mobil_decision(Some(&big), Some(&small), 0.0, &m), LaneDecision::ChangeLeft);
        assert_eq!(mobil_decision(Some(&big), Some(&big), 0.0, &m), LaneDecision::ChangeLeft);
    }

    #[test]
    fn single_atom_distribution() {
        let d = SvoDistribution { atoms: vec![(0.0, 1.0)] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..100).all(|_| sample_human_svo(&d, &mut rng) == 0.0));
    }

    #[test]
    fn default_distribution_frequencies() {
        let d = SvoDistribution::default();
        d.validate().unwrap();
        assert_eq!(d.mode(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut counts = vec![0usize; d.atoms.len()];
        for _ in 0..n {
            let x = sample_human_svo(&d, &mut rng);
            let k = d.atoms.iter().position(|a| a.0 == x).unwrap();
            counts[k] += 1;
        }
        for (c, a) in counts.iter().zip(&d.atoms) {
            assert!((*c as f64 / n as f64 - a.1).abs() < 0.01);
        }
        let argmax = counts.iter().enumerate().max_by_key(|c| c.1).unwrap().0;
        assert_eq!(d.atoms[argmax].0, 0.0);
    }

    #[test]
    fn invalid_distribution_rejected() {
        assert!(SvoDistribution { atoms: vec![(0.0, 0.5)] }.validate().is_err());
        assert!(SvoDistribution { atoms: vec![(0.0, 1.5), (0.1, -0.5)] }.validate().is_err());
    }

    #[test]
    fn meta_action_dead_band() {
        assert_eq!(human_meta_action(LaneDecision::KeepLane, 1.2, 0.5), MetaAction::Accelerate);
        assert_eq!(human_meta_action(LaneDecision::KeepLane, 0.3, 0.5), MetaAction::Idle);
        assert_eq!(human_meta_action(LaneDecision::KeepLane, -0.7, 0.5), MetaAction::Decelerate);
        assert_eq!(human_meta_action(LaneDecision::ChangeLeft, -3.0, 0.5), MetaAction::LaneLeft);
    }

    struct Scene {
        road: RoadNet,
        idm: IdmParams,
        mobil: MobilParams,
        pid: PidParams,
    }

    impl Scene {
        fn new() -> Self {
            Self {
                road: RoadNet::default(),
                idm: IdmParams { sigma_vel: 0.0, ..IdmParams::default() },
                mobil: MobilParams::default(),
                pid: PidParams::default(),
            }
        }
        fn model(&self) -> HumanModel<'_> {
            HumanModel { road: &self.road, idm: &self.idm, mobil: &self.mobil, pid: &self.pid }
        }
    }

    #[test]
    fn open_road_at_set_speed() {
        let sc = Scene::new();
        let hv = VehicleState::new(0, 50.0, 1, 25.0, Autonomy::Human, &sc.road);
        let mut ctl = Controller::for_vehicle(&hv);
        let world = vec![hv.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let setpoints = [ctl];
        let step = hv_policy_step(&hv, &HumanDriver { politeness: 0.0 }, &mut ctl, &world, &setpoints, &sc.model(), true, &mut rng);
        assert!(step.control.acceleration.abs() < 1e-9);
        assert_eq!(step.decision, Some(LaneDecision::KeepLane));
    }

    #[test]
    fn slow_leader_brakes() {
        let sc = Scene::new();
        let hv = VehicleState::new(0, 50.0, 0, 25.0, Autonomy::Human, &sc.road);
        let lead = VehicleState::new(1, 65.0, 0, 15.0, Autonomy::Human, &sc.road);
        let world = vec![hv.clone(), lead];
        let mut ctl = Controller::for_vehicle(&hv);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // leftmost lane, right lane is blocked by nothing but keep it simple: decide = false
        let setpoints = [ctl, Controller::for_vehicle(&world[1])];
        let step = hv_policy_step(&hv, &HumanDriver { politeness: 0.0 }, &mut ctl, &world, &setpoints, &sc.model(), false, &mut rng);
        assert!(step.control.acceleration < 0.0);
    }

    #[test]
    fn faster_adjacent_lane_triggers_change() {
        let sc = Scene::new();
        let model = sc.model();
        let mut world = vec![
            VehicleState::new(0, 50.0, 0, 20.0, Autonomy::Human, &sc.road),
            VehicleState::new(1, 70.0, 0, 15.0, Autonomy::Human, &sc.road),
        ];
        // two-lane scenario: lane 1 is free
        let mut ctl = vec![Controller::for_vehicle(&world[0]), Controller::for_vehicle(&world[1])];
        let driver = HumanDriver { politeness: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dt = sc.idm.dt;
        let mut changed = false;
        for k in 0..(15 * 6) {
            let decide = k % 15 == 0;
            let snapshot = world.clone();
            for i in 0..2 {
                let setpoints = ctl.clone();
                let s = hv_policy_step(&snapshot[i], &driver, &mut ctl[i], &snapshot, &setpoints, &model, decide && i == 0, &mut rng);
                if s.decision == Some(LaneDecision::ChangeRight) {
                    changed = true;
                }
                world[i] = step_vehicle(&snapshot[i], s.control, dt, &sc.road).unwrap();
            }
        }
        assert!(changed);
        assert_eq!(world[0].lane, 1);
    }

    #[test]
    fn simultaneous_entry_into_the_same_lane_is_avoided() {
        let sc = Scene::new();
        let model = sc.model();
        // lane 0 and lane 2 vehicles both stuck behind slow leaders, lane 1 free
        let world = vec![
            VehicleState::new(0, 50.0, 0, 25.0, Autonomy::Human, &sc.road),
            VehicleState::new(1, 70.0, 0, 10.0, Autonomy::Human, &sc.road),
            VehicleState::new(2, 52.0, 2, 25.0, Autonomy::Human, &sc.road),
            VehicleState::new(3, 72.0, 2, 10.0, Autonomy::Human, &sc.road),
        ];
        let mut ctl: Vec<Controller> = world.iter().map(Controller::for_vehicle).collect();
        let driver = HumanDriver { politeness: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in [0, 2] {
            let mut c = ctl[i];
            hv_policy_step(&world[i], &driver, &mut c, &world, &ctl, &model, true, &mut rng);
            ctl[i] = c;
        }
        assert_eq!(ctl[0].target_lane, 1);
        assert_eq!(ctl[2].target_lane, 2);
        assert!(lane_change_conflict(&world[2], 1, &world, &ctl, 30.0));
        assert!(!lane_change_conflict(&world[2], 1, &world, &ctl, 1.0));
    }

    #[test]
    fn neighbor_search_finds_closest() {
        let road = RoadNet::default();
        let ego = VehicleState::new(0, 100.0, 1, 20.0, Autonomy::Human, &road);
        let world = vec![
            ego.clone(),
            VehicleState::new(1, 130.0, 1, 20.0, Autonomy::Human, &road),
            VehicleState::new(2, 120.0, 1, 20.0, Autonomy::Human, &road),
            VehicleState::new(3, 90.0, 1, 18.0, Autonomy::Human, &road),
            VehicleState::new(4, 110.0, 2, 18.0, Autonomy::Human, &road),
        ];
        let n = neighbors_in_lane(&ego, &world, 1, &road);
        assert_eq!(n.leader.unwrap().gap, 15.0);
        assert_eq!(n.follower.unwrap().gap, 5.0);
        assert_eq!(n.follower.unwrap().speed, 18.0);
        let n2 = neighbors_in_lane(&ego, &world, 2, &road);
        assert_eq!(n2.leader.unwrap().gap, 5.0);
        assert!(n2.follower.is_none());
    }
}
