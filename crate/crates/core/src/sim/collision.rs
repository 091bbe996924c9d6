use super::road::RoadNet;
use super::vehicle::VehicleState;

type Vec2 = (f64, f64);

fn corners(v: &VehicleState) -> [Vec2; 4] {
    let (c, s) = (v.yaw.cos(), v.yaw.sin());
    let (hl, hw) = (0.5 * v.length, 0.5 * v.width);
    let pt = |a: f64, b: f64| (v.l + a * c - b * s, v.d + a * s + b * c);
    [pt(hl, hw), pt(hl, -hw), pt(-hl, -hw), pt(-hl, hw)]
}

fn project(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter()
        .map(|p| p.0 * axis.0 + p.1 * axis.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Separating-axis test on the two oriented footprints. Touching edges do not count.
pub fn rectangles_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    // cheap reject on bounding circles
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    if a.distance_to(b) >= reach {
        return false;
    }
    let (ca, cb) = (corners(a), corners(b));
    let axes = [
        (a.yaw.cos(), a.yaw.sin()),
        (-a.yaw.sin(), a.yaw.cos()),
        (b.yaw.cos(), b.yaw.sin()),
        (-b.yaw.sin(), b.yaw.cos()),
    ];
    axes.iter().all(|&axis| {
        let (lo_a, hi_a) = project(&ca, axis);
        let (lo_b, hi_b) = project(&cb, axis);
        hi_a > lo_b && hi_b > lo_a
    })
}

/// Returns every overlapping pair `(id_a, id_b)` with `id_a < id_b` and
/// marks both vehicles crashed. Crashed vehicles have left the traffic and
/// take no part.
pub fn detect_collisions(states: &mut [VehicleState]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            if states[i].crashed || states[j].crashed {
                continue;
            }
            if rectangles_overlap(&states[i], &states[j]) {
                let (a, b) = (states[i].id, states[j].id);
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    for &(a, b) in &pairs {
        for s in states.iter_mut().filter(|s| s.id == a || s.id == b) {
            s.crashed = true;
        }
    }
    pairs
}

/// True when the vehicle is still on the ramp with its front bumper at or
/// past the ramp end; the vehicle is then marked crashed.
pub fn ramp_barrier_check(state: &mut VehicleState, road: &RoadNet) -> bool {
    let hit = road.is_ramp(state.lane) && state.front() >= road.ramp_merge_end;
    if hit {
        state.crashed = true;
    }
    hit
}

/// True when the vehicle centre has left the paved surface; marks it crashed.
pub fn off_road_check(state: &mut VehicleState, road: &RoadNet) -> bool {
    let (lo, hi) = road.lateral_bounds(state.l);
    let off = state.d < lo || state.d > hi;
    if off {
        state.crashed = true;
    }
    off
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::control::{Controller, PidParams};
    use crate::sim::vehicle::{step_vehicle, Autonomy};

    fn at(id: usize, l: f64, lane: usize) -> VehicleState {
        VehicleState::new(id, l, lane, 20.0, Autonomy::Human, &RoadNet::default())
    }

    /// Axis-aligned overlap oracle for vehicles with zero heading.
    fn aabb_overlap(a: &VehicleState, b: &VehicleState) -> bool {
        (a.l - b.l).abs() < 0.5 * (a.length + b.length) && (a.d - b.d).abs() < 0.5 * (a.width + b.width)
    }

    #[test]
    fn far_apart_means_no_collision() {
        let mut v = vec![at(0, 0.0, 1), at(1, 50.0, 1)];
        assert!(detect_collisions(&mut v).is_empty());
    }

    #[test]
    fn identical_poses_collide_once() {
        let mut v = vec![at(3, 10.0, 1), at(7, 10.0, 1)];
        assert_eq!(detect_collisions(&mut v), vec![(3, 7)]);
        assert!(v.iter().all(|s| s.crashed));
    }

    #[test]
    fn longitudinal_gap_threshold_matches_length() {
        for (gap, expect) in [(4.9, true), (5.1, false)] {
            let mut v = vec![at(0, 100.0, 1), at(1, 100.0 + gap, 1)];
            assert_eq!(!detect_collisions(&mut v).is_empty(), expect, "gap {gap}");
            assert_eq!(aabb_overlap(&at(0, 100.0, 1), &at(1, 100.0 + gap, 1)), expect);
        }
    }

    #[test]
    fn adjacent_lanes_do_not_collide() {
        let mut v = vec![at(0, 100.0, 1), at(1, 100.0, 2)];
        assert!(detect_collisions(&mut v).is_empty());
    }

    #[test]
    fn relation_is_symmetric_and_irreflexive_on_grid() {
        let road = RoadNet::default();
        for i in 0..40 {
            let mut a = VehicleState::new(0, 100.0, 1, 20.0, Autonomy::Human, &road);
            let mut b = VehicleState::new(1, 100.0 + (i as f64) * 0.3 - 6.0, 1, 20.0, Autonomy::Human, &road);
            a.d += (i % 7) as f64 * 0.4 - 1.2;
            b.yaw = (i % 5) as f64 * 0.1 - 0.2;
            assert_eq!(rectangles_overlap(&a, &b), rectangles_overlap(&b, &a));
            if b.yaw == 0.0 {
                assert_eq!(rectangles_overlap(&a, &b), aabb_overlap(&a, &b));
            }
            assert!(rectangles_overlap(&a, &a));
            let mut single = vec![a.clone()];
            assert!(detect_collisions(&mut single).is_empty());
        }
    }

    #[test]
    fn barrier_at_ramp_end() {
        let road = RoadNet::default();
        let mut m = at(0, road.ramp_merge_end - 2.5, 3);
        assert!(ramp_barrier_check(&mut m, &road));
        assert!(m.crashed);
        let mut merged = at(1, road.ramp_merge_end - 2.5, 2);
        assert!(!ramp_barrier_check(&mut merged, &road));
    }

    #[test]
    fn barrier_reached_within_half_a_second() {
        let road = RoadNet::default();
        let params = PidParams::default();
        let mut m = at(0, road.ramp_merge_end - 10.0, 3);
        m.speed = 20.0;
        let ctl = Controller::for_vehicle(&m);
        assert!(!ramp_barrier_check(&mut m.clone(), &road));
        let dt = 1.0 / 15.0;
        let mut hit_at = None;
        for k in 1..=15 {
            m = step_vehicle(&m, ctl.control(&m, &road, &params), dt, &road).unwrap();
            if ramp_barrier_check(&mut m, &road) {
                hit_at = Some(k as f64 * dt);
                break;
            }
        }
        let t = hit_at.expect("barrier never reached");
        assert!(t <= 0.5 + 1e-9, "hit after {t} s");
    }

    #[test]
    fn leaving_the_pavement_crashes() {
        let road = RoadNet::default();
        let mut v = at(0, 300.0, 2);
        v.d = 10.5;
        assert!(off_road_check(&mut v, &road));
        let mut ok = at(1, 300.0, 2);
        assert!(!off_road_check(&mut ok, &road));
    }
}
