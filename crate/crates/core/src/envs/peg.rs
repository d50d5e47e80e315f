//! Planar peg and slot.
//!
//! State `[px, py, ex, ey, attached]`; action `[dx, dy, grip]`. While
//! attached, peg and effector translate by the same displacement (clipped so
//! both stay in the workspace); a detached peg never moves. Attaching and
//! releasing take a whole step with no motion, which makes every transition
//! of this pair exactly reversible.

use rand::Rng;

use super::{clamp_unit, Direction, GRASP_RADIUS, STEP_SCALE};

/// Where the peg rests when it is out of the slot.
pub const STAND: [f64; 2] = [0.25, 0.25];
pub const SLOT: [f64; 2] = [-0.25, -0.25];
pub const SLOT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peg {
    pub direction: Direction,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Peg {
    pub fn goal(&self) -> [f64; 2] {
        match self.direction {
            Direction::Forward => SLOT,
            Direction::Reversed => STAND,
        }
    }

    pub fn start(&self) -> [f64; 2] {
        match self.direction {
            Direction::Forward => STAND,
            Direction::Reversed => SLOT,
        }
    }

    pub fn goal_reached(&self, peg: [f64; 2]) -> bool {
        dist(peg, self.goal()) < SLOT_TOLERANCE
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let start = self.start();
        let p = [
            start[0] + rng.random_range(-0.03..0.03),
            start[1] + rng.random_range(-0.03..0.03),
        ];
        let r = rng.random_range(0.1..0.2);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let e = [
            (p[0] + r * phi.cos()).clamp(-1.0, 1.0),
            (p[1] + r * phi.sin()).clamp(-1.0, 1.0),
        ];
        vec![p[0], p[1], e[0], e[1], 0.0]
    }

    pub fn transition(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let p = [s[0], s[1]];
        let e = [s[2], s[3]];
        let attached = s[4] > 0.5;
        let a = clamp_unit(a);
        let mut delta = [STEP_SCALE * a[0], STEP_SCALE * a[1]];

        if attached {
            if a[2] < 0.0 {
                return vec![p[0], p[1], e[0], e[1], 0.0];
            }
            for i in 0..2 {
                let lo = (-1.0 - e[i]).max(-1.0 - p[i]);
                let hi = (1.0 - e[i]).min(1.0 - p[i]);
                delta[i] = delta[i].clamp(lo, hi);
            }
            return vec![
                p[0] + delta[0],
                p[1] + delta[1],
                e[0] + delta[0],
                e[1] + delta[1],
                1.0,
            ];
        }
        if a[2] > 0.0 && dist(e, p) < GRASP_RADIUS {
            return vec![p[0], p[1], e[0], e[1], 1.0];
        }
        vec![
            p[0],
            p[1],
            (e[0] + delta[0]).clamp(-1.0, 1.0),
            (e[1] + delta[1]).clamp(-1.0, 1.0),
            0.0,
        ]
    }

    pub fn reverse_candidates(&self, s: &[f64], s_next: &[f64]) -> Vec<Vec<f64>> {
        let (g0, g1) = (s[4] > 0.5, s_next[4] > 0.5);
        if g0 != g1 {
            return vec![vec![0.0, 0.0, if g0 { 1.0 } else { -1.0 }]];
        }
        let d = [(s[2] - s_next[2]) / STEP_SCALE, (s[3] - s_next[3]) / STEP_SCALE];
        if g1 {
            vec![vec![d[0], d[1], 1.0]]
        } else {
            vec![vec![d[0], d[1], -1.0], vec![d[0], d[1], 1.0]]
        }
    }

    pub fn expert(&self, s: &[f64]) -> Vec<f64> {
        let p = [s[0], s[1]];
        let e = [s[2], s[3]];
        if s[4] > 0.5 {
            let g = self.goal();
            let d = [(g[0] - p[0]) / STEP_SCALE, (g[1] - p[1]) / STEP_SCALE];
            return clamp_unit(&[d[0], d[1], 1.0]);
        }
        if dist(e, p) < 0.05 {
            return vec![0.0, 0.0, 1.0];
        }
        let d = [(p[0] - e[0]) / STEP_SCALE, (p[1] - e[1]) / STEP_SCALE];
        clamp_unit(&[d[0], d[1], -1.0])
    }
}
