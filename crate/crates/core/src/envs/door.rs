//! Planar hinged door seen from above.
//!
//! The hinge sits at the origin and the door is a segment of length
//! [`DOOR_LENGTH`] at angle `theta` from the x-axis (`0` closed, `pi/2`
//! fully open). The handle is on the door at radius [`HANDLE_RADIUS`].
//!
//! State `[theta, ex, ey, grasp]`; action `[dx, dy, grip]`.
//!
//! - While grasping, the tangential part of the commanded displacement
//!   turns the door and the effector rides along with the handle. Turning
//!   is capped at `STEP_SCALE / HANDLE_RADIUS` per step so every grasped
//!   turn can be undone by one in-bounds action.
//! - Switching the grasp flag on or off takes a whole step; nothing moves.
//! - Inward variant only: an effector that starts on the open side of the
//!   door and crosses its face pushes the door shut to the effector's angle.
//!   Pushing can only close the door.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use super::{clamp_unit, Direction, GRASP_RADIUS, STEP_SCALE};

pub const DOOR_LENGTH: f64 = 0.6;
pub const HANDLE_RADIUS: f64 = 0.5;
/// Push contact needs the effector at least this far from the hinge.
pub const MIN_PUSH_RADIUS: f64 = 0.1;
/// Angular width of the contact band on either side of the door face.
pub const PUSH_BAND: f64 = 0.6;
pub const OPEN_GOAL: f64 = 1.3;
pub const CLOSED_GOAL: f64 = FRAC_PI_2 - OPEN_GOAL;
/// Largest door rotation per grasped step.
pub const MAX_TURN: f64 = STEP_SCALE / HANDLE_RADIUS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorVariant {
    Inward,
    Outward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Door {
    pub variant: DoorVariant,
    pub direction: Direction,
}

pub fn handle(theta: f64) -> [f64; 2] {
    [HANDLE_RADIUS * theta.cos(), HANDLE_RADIUS * theta.sin()]
}

fn tangent(theta: f64) -> [f64; 2] {
    [-theta.sin(), theta.cos()]
}

fn polar(p: [f64; 2]) -> (f64, f64) {
    (p[0].hypot(p[1]), p[1].atan2(p[0]))
}

fn from_polar(r: f64, phi: f64) -> [f64; 2] {
    [r * phi.cos(), r * phi.sin()]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Door {
    pub fn opening(&self) -> bool {
        self.direction == Direction::Forward
    }

    pub fn goal_reached(&self, theta: f64) -> bool {
        if self.opening() {
            theta >= OPEN_GOAL
        } else {
            theta <= CLOSED_GOAL
        }
    }

    pub fn initial_angle(&self) -> f64 {
        if self.opening() {
            0.0
        } else {
            FRAC_PI_2
        }
    }

    /// Effector a short way off the handle, on the side the door turns
    /// towards.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let theta = self.initial_angle();
        let r = rng.random_range(0.1..0.25);
        let phi = theta + rng.random_range(0.25..0.75) * std::f64::consts::PI;
        let h = handle(theta);
        vec![theta, h[0] + r * phi.cos(), h[1] + r * phi.sin(), 0.0]
    }

    /// Whether moving the free effector from `from` to `to` pushes the door.
    fn push_contact(&self, theta: f64, from: [f64; 2], to: [f64; 2]) -> bool {
        if self.variant != DoorVariant::Inward {
            return false;
        }
        let (r0, phi0) = polar(from);
        let (r1, phi1) = polar(to);
        let radial = MIN_PUSH_RADIUS..=DOOR_LENGTH;
        radial.contains(&r0)
            && radial.contains(&r1)
            && phi0 >= theta
            && phi0 <= theta + PUSH_BAND
            && phi1 < theta
            && phi1 >= -PUSH_BAND
    }

    pub fn transition(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let theta = s[0];
        let e = [s[1], s[2]];
        let grasping = s[3] > 0.5;
        let a = clamp_unit(a);
        let delta = [STEP_SCALE * a[0], STEP_SCALE * a[1]];

        if grasping {
            if a[2] < 0.0 {
                return vec![theta, e[0], e[1], 0.0];
            }
            let t = tangent(theta);
            let turn = ((delta[0] * t[0] + delta[1] * t[1]) / HANDLE_RADIUS).clamp(-MAX_TURN, MAX_TURN);
            let next = (theta + turn).clamp(0.0, FRAC_PI_2);
            let (h0, h1) = (handle(theta), handle(next));
            return vec![next, e[0] + h1[0] - h0[0], e[1] + h1[1] - h0[1], 1.0];
        }

        if a[2] > 0.0 && dist(e, handle(theta)) < GRASP_RADIUS {
            return vec![theta, e[0], e[1], 1.0];
        }
        let moved = [
            (e[0] + delta[0]).clamp(-1.0, 1.0),
            (e[1] + delta[1]).clamp(-1.0, 1.0),
        ];
        let next = if self.push_contact(theta, e, moved) {
            polar(moved).1.max(0.0)
        } else {
            theta
        };
        vec![next, moved[0], moved[1], 0.0]
    }

    /// Reverse actions that undo `s -> s_next` whenever the transition is
    /// exactly reversible.
    pub fn reverse_candidates(&self, s: &[f64], s_next: &[f64]) -> Vec<Vec<f64>> {
        let (g0, g1) = (s[3] > 0.5, s_next[3] > 0.5);
        if g0 != g1 {
            return vec![vec![0.0, 0.0, if g0 { 1.0 } else { -1.0 }]];
        }
        if g1 {
            let t = tangent(s_next[0]);
            let back = HANDLE_RADIUS * (s[0] - s_next[0]) / STEP_SCALE;
            return vec![vec![back * t[0], back * t[1], 1.0]];
        }
        let d = [(s[1] - s_next[1]) / STEP_SCALE, (s[2] - s_next[2]) / STEP_SCALE];
        vec![vec![d[0], d[1], -1.0], vec![d[0], d[1], 1.0]]
    }

    fn grasp_controller(&self, s: &[f64], target_angle: f64) -> Vec<f64> {
        let theta = s[0];
        let e = [s[1], s[2]];
        if s[3] > 0.5 {
            let turn = (target_angle - theta).clamp(-0.95 * MAX_TURN, 0.95 * MAX_TURN);
            let t = tangent(theta);
            let scale = HANDLE_RADIUS * turn / STEP_SCALE;
            return vec![scale * t[0], scale * t[1], 1.0];
        }
        // aim just off the handle on the open side, so the approach never
        // sweeps across the door face
        let aim = from_polar(HANDLE_RADIUS, theta + 0.05);
        if dist(e, handle(theta)) < 0.05 {
            return vec![0.0, 0.0, 1.0];
        }
        let d = [(aim[0] - e[0]) / STEP_SCALE, (aim[1] - e[1]) / STEP_SCALE];
        clamp_unit(&[d[0], d[1], -1.0])
    }

    fn push_controller(&self, s: &[f64]) -> Vec<f64> {
        let theta = s[0];
        let e = [s[1], s[2]];
        if s[3] > 0.5 {
            return vec![0.0, 0.0, -1.0];
        }
        let (r, phi) = polar(e);
        let in_contact = (0.25..=0.55).contains(&r) && phi >= theta && phi <= theta + 0.4;
        let target = if in_contact {
            from_polar(0.4, (theta - 0.15).max(-0.1))
        } else {
            from_polar(0.4, theta + 0.2)
        };
        let d = [(target[0] - e[0]) / STEP_SCALE, (target[1] - e[1]) / STEP_SCALE];
        clamp_unit(&[d[0], d[1], -1.0])
    }

    pub fn expert(&self, s: &[f64]) -> Vec<f64> {
        match (self.variant, self.direction) {
            (_, Direction::Forward) => self.grasp_controller(s, FRAC_PI_2),
            (DoorVariant::Outward, Direction::Reversed) => self.grasp_controller(s, 0.0),
            (DoorVariant::Inward, Direction::Reversed) => self.push_controller(s),
        }
    }

    /// Grasping controller that drives the door to `target_angle`; exposed
    /// so tests can replay object-state sequences by grasping.
    pub fn grasp_towards(&self, s: &[f64], target_angle: f64) -> Vec<f64> {
        self.grasp_controller(s, target_angle)
    }
}
