//! Multi-UAV relay network.
//!
//! Users `0..n` and the base station (last state, terminal) have prescribed
//! positions; UAVs `n..n+m` are manipulable relays. Action `j < m` forwards a
//! packet to UAV `j`, action `m` delivers it to the base. Transitions are
//! deterministic, a UAV may not forward to itself and every hop costs the
//! squared distance between its endpoints.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::PrescribedDynamics;
use crate::model::{validate_model, ModelError, ModelSpec, ParameterVector, SquaredEuclideanCost};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario needs at least one UAV")]
    NoUavs,
    #[error("spatial dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("position {index} of {what} has {got} coordinates, expected {expected}")]
    Position {
        what: &'static str,
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid motion: {0}")]
    Motion(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How users (and optionally the base) move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    /// Every user moves with the same velocity.
    ConstantVelocity {
        velocity: Vec<f64>,
    },
    /// `v_d(t) = A_d·cos(2π f t + φ + i·Δφ)` for user `i`.
    Sinusoidal {
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        phase_step: f64,
    },
    /// User `i` visits `waypoints[i]` in order, spending `segment_time` per
    /// leg with a smoothstep profile (zero velocity at each waypoint).
    Waypoint {
        waypoints: Vec<Vec<Vec<f64>>>,
        segment_time: f64,
    },
    /// Per-user, per-axis sum of `terms` seeded low-frequency cosines.
    SeededRandomSmooth {
        amplitude: f64,
        #[serde(default = "default_max_frequency")]
        max_frequency: f64,
        #[serde(default = "default_terms")]
        terms: usize,
    },
}

fn default_max_frequency() -> f64 {
    0.2
}

fn default_terms() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    #[serde(flatten)]
    pub kind: MotionKind,
    /// All motion halts at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at: Option<f64>,
    /// Apply the first user's velocity field to the base station as well.
    #[serde(default)]
    pub move_base: bool,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            kind: MotionKind::Static,
            stop_at: None,
            move_base: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavScenario {
    pub users: Vec<Vec<f64>>,
    /// Initial UAV positions.
    pub uavs: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub beta: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl UavScenario {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_uavs(&self) -> usize {
        self.uavs.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn uav_state(&self, j: usize) -> usize {
        self.n_users() + j
    }

    pub fn base_state(&self) -> usize {
        self.n_users() + self.n_uavs()
    }

    /// Users uniform in `[-extent/2, extent/2]^dim`, base at the origin and
    /// UAVs uniform in the central half of the box.
    pub fn random(
        n_users: usize,
        n_uavs: usize,
        dim: usize,
        extent: f64,
        beta: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut point =
            |half: f64| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-half..=half)).collect() };
        let users = (0..n_users).map(|_| point(extent / 2.0)).collect();
        let uavs = (0..n_uavs).map(|_| point(extent / 4.0)).collect();
        UavScenario {
            users,
            uavs,
            base: vec![0.0; dim],
            motion: MotionSpec::default(),
            seed,
            gamma: 1.0,
            beta,
        }
    }

    /// Lowest `β` worth annealing from. Undiscounted scenes with several
    /// UAVs reward UAV-to-UAV cycles with an entropy bonus that diverges once
    /// `(M−1)·exp(−β d²)` reaches one for a pair at distance `d`, so their
    /// objective is unbounded below at high temperature. Annealing for them
    /// starts at `β/2`; otherwise the default schedule applies.
    pub fn annealing_floor(&self) -> Option<f64> {
        (self.gamma == 1.0 && self.n_uavs() >= 2).then_some(self.beta / 2.0)
    }

    /// Bounding-box diameter of all initial positions.
    pub fn diameter(&self) -> f64 {
        let d = self.dim();
        let all = self
            .users
            .iter()
            .chain(&self.uavs)
            .chain(std::iter::once(&self.base));
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in all {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    fn check(&self) -> Result<(), ScenarioError> {
        if self.uavs.is_empty() {
            return Err(ScenarioError::NoUavs);
        }
        let d = self.dim();
        if !(d == 2 || d == 3) {
            return Err(ScenarioError::Dimension(d));
        }
        let groups: [(&'static str, &Vec<Vec<f64>>); 2] =
            [("users", &self.users), ("uavs", &self.uavs)];
        for (what, ps) in groups {
            for (index, p) in ps.iter().enumerate() {
                if p.len() != d {
                    return Err(ScenarioError::Position {
                        what,
                        index,
                        expected: d,
                        got: p.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds the relay model, its initial parameters and the user motion.
pub fn build_model(
    sc: &UavScenario,
) -> Result<(ModelSpec, ParameterVector, ScenarioMotion), ScenarioError> {
    sc.check()?;
    let (n, m, d) = (sc.n_users(), sc.n_uavs(), sc.dim());
    let n_states = n + m + 1;
    let base = sc.base_state();
    let mut b = ModelSpec::builder(n_states, m + 1, base)
        .gamma(sc.gamma)
        .beta(sc.beta)
        .dims(d, 0)
        .cost(Arc::new(SquaredEuclideanCost::default()));
    let target = |a: usize| if a < m { sc.uav_state(a) } else { base };
    let mut masks = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let allowed: Vec<usize> = if s == base {
            (0..=m).collect()
        } else {
            (0..=m).filter(|&a| target(a) != s).collect()
        };
        for &a in &allowed {
            let next = if s == base { base } else { target(a) };
            b.add_transition(s, a, next, 1.0);
        }
        masks.push(allowed);
    }
    let mut weights = vec![0.0; n_states];
    weights[..n].iter_mut().for_each(|w| *w = 1.0);
    let uav_states: Vec<usize> = (0..m).map(|j| sc.uav_state(j)).collect();
    let mut names: Vec<String> = (0..n).map(|i| format!("user{i}")).collect();
    names.extend((0..m).map(|j| format!("uav{j}")));
    names.push("base".into());
    let mut action_names: Vec<String> = (0..m).map(|j| format!("to_uav{j}")).collect();
    action_names.push("to_base".into());
    let model = b
        .state_names(names)
        .action_names(action_names)
        .masks(masks)
        .weights(weights)
        .manipulable_states(&uav_states)
        .build()?;

    let mut zeta: Vec<Vec<f64>> = sc.users.clone();
    zeta.extend(sc.uavs.iter().cloned());
    zeta.push(sc.base.clone());
    let params = ParameterVector::from_blocks(model.layout().clone(), &zeta, &vec![vec![]; m + 1])?;
    validate_model(&model, &params).into_result()?;
    let motion = prescribed_motion(&sc.motion, sc)?;
    Ok((model, params, motion))
}

/// Velocity field of users and base, in prescribed flat order
/// (users, then base).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMotion {
    kind: CompiledMotion,
    n_users: usize,
    dim: usize,
    stop_at: Option<f64>,
    move_base: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum CompiledMotion {
    Static,
    Constant(Vec<f64>),
    Sinusoidal {
        amplitude: Vec<f64>,
        omega: f64,
        phase: f64,
        phase_step: f64,
    },
    /// Per user: legs `(from, to)` of equal duration.
    Waypoint {
        legs: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
        segment_time: f64,
    },
    /// Per user and axis: `(a_k, ω_k, φ_k)`.
    Smooth(Vec<Vec<Vec<(f64, f64, f64)>>>),
}

/// Compiles a motion description against the scenario layout.
pub fn prescribed_motion(
    spec: &MotionSpec,
    sc: &UavScenario,
) -> Result<ScenarioMotion, ScenarioError> {
    let (n, d) = (sc.n_users(), sc.dim());
    let bad = |m: String| Err(ScenarioError::Motion(m));
    let kind = match &spec.kind {
        MotionKind::Static => CompiledMotion::Static,
        MotionKind::ConstantVelocity { velocity } => {
            if velocity.len() != d {
                return bad(format!(
                    "velocity has {} coordinates, expected {d}",
                    velocity.len()
                ));
            }
            CompiledMotion::Constant(velocity.clone())
        }
        MotionKind::Sinusoidal {
            amplitude,
            frequency,
            phase,
            phase_step,
        } => {
            if amplitude.len() != d {
                return bad(format!(
                    "amplitude has {} coordinates, expected {d}",
                    amplitude.len()
                ));
            }
            CompiledMotion::Sinusoidal {
                amplitude: amplitude.clone(),
                omega: TAU * frequency,
                phase: *phase,
                phase_step: *phase_step,
            }
        }
        MotionKind::Waypoint {
            waypoints,
            segment_time,
        } => {
            if !(*segment_time > 0.0) {
                return bad("segment_time must be positive".into());
            }
            if waypoints.len() > n {
                return bad(format!("{} waypoint lists for {n} users", waypoints.len()));
            }
            let mut legs = Vec::with_capacity(n);
            for i in 0..n {
                let mut from = sc.users[i].clone();
                let mut user_legs = Vec::new();
                for w in waypoints.get(i).map(Vec::as_slice).unwrap_or(&[]) {
                    if w.len() != d {
                        return bad(format!("waypoint of user {i} has {} coordinates", w.len()));
                    }
                    user_legs.push((from.clone(), w.clone()));
                    from = w.clone();
                }
                legs.push(user_legs);
            }
            CompiledMotion::Waypoint {
                legs,
                segment_time: *segment_time,
            }
        }
        MotionKind::SeededRandomSmooth {
            amplitude,
            max_frequency,
            terms,
        } => {
            if !(*max_frequency > 0.0) || *terms == 0 {
                return bad("seeded_random_smooth needs positive max_frequency and terms".into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            let scale = amplitude / (*terms as f64).sqrt();
            let table = (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            (0..*terms)
                                .map(|_| {
                                    let a = scale * rng.random_range(-1.0..=1.0);
                                    let w = TAU * max_frequency * rng.random_range(0.1..=1.0);
                                    let phi = TAU * rng.random::<f64>();
                                    (a, w, phi)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            CompiledMotion::Smooth(table)
        }
    };
    Ok(ScenarioMotion {
        kind,
        n_users: n,
        dim: d,
        stop_at: spec.stop_at,
        move_base: spec.move_base,
    })
}

impl ScenarioMotion {
    /// Velocity of user `i` at time `t`, ignoring the stop time.
    fn user_velocity(&self, i: usize, t: f64, out: &mut [f64]) {
        match &self.kind {
            CompiledMotion::Static => out.fill(0.0),
            CompiledMotion::Constant(v) => out.copy_from_slice(v),
            CompiledMotion::Sinusoidal {
                amplitude,
                omega,
                phase,
                phase_step,
            } => {
                let c = (omega * t + phase + i as f64 * phase_step).cos();
                for (o, a) in out.iter_mut().zip(amplitude) {
                    *o = a * c;
                }
            }
            CompiledMotion::Waypoint { legs, segment_time } => {
                out.fill(0.0);
                let k = (t / segment_time).floor();
                if k < 0.0 {
                    return;
                }
                let Some((from, to)) = legs[i].get(k as usize) else {
                    return;
                };
                let tau = t / segment_time - k;
                // derivative of the smoothstep 3τ² − 2τ³
                let rate = 6.0 * tau * (1.0 - tau) / segment_time;
                for (o, (a, b)) in out.iter_mut().zip(from.iter().zip(to)) {
                    *o = (b - a) * rate;
                }
            }
            CompiledMotion::Smooth(table) => {
                for (o, terms) in out.iter_mut().zip(&table[i]) {
                    *o = terms
                        .iter()
                        .map(|(a, w, phi)| a * (w * t + phi).cos())
                        .sum();
                }
            }
        }
    }

    pub fn is_static(&self) -> bool {
        self.kind == CompiledMotion::Static
    }
}

impl PrescribedDynamics for ScenarioMotion {
    fn velocity(&self, _: &ParameterVector, t: f64) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.n_users + 1) * d];
        if self.stop_at.is_some_and(|s| t >= s) {
            return out;
        }
        for i in 0..self.n_users {
            self.user_velocity(i, t, &mut out[i * d..(i + 1) * d]);
        }
        if self.move_base && self.n_users > 0 {
            let (users, base) = out.split_at_mut(self.n_users * d);
            base.copy_from_slice(&users[..d]);
        }
        out
    }
}
