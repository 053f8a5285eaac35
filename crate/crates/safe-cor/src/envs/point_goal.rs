//! Point-mass navigation in a square arena: reach randomly spawned goals
//! while avoiding hazard circles. Entering a hazard costs 1 per step; the
//! goal re-spawns on reach and the episode runs to a fixed horizon.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmdp::{ActionVec, CmdpSpec, StateVec, StepRecord};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PointGoalMiniConfig {
    pub arena_half_width: f64,
    pub n_hazards: usize,
    pub hazard_radius: f64,
    pub goal_radius: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub goal_bonus: f64,
    pub horizon: usize,
    pub threshold_d: f64,
    pub gamma: f64,
}

impl Default for PointGoalMiniConfig {
    fn default() -> Self {
        PointGoalMiniConfig {
            arena_half_width: 2.0,
            n_hazards: 8,
            hazard_radius: 0.35,
            goal_radius: 0.3,
            max_speed: 1.0,
            dt: 0.1,
            goal_bonus: 1.0,
            horizon: 1000,
            threshold_d: 0.025,
            gamma: 0.99,
        }
    }
}

impl PointGoalMiniConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &'static str, why: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::Invalid { what, why })
            }
        };
        check(
            self.arena_half_width > 0.0,
            "PointGoalMiniConfig.arena_half_width",
            format!("must be positive, got {}", self.arena_half_width),
        )?;
        check(
            self.hazard_radius > 0.0,
            "PointGoalMiniConfig.hazard_radius",
            format!("must be positive, got {}", self.hazard_radius),
        )?;
        check(
            self.goal_radius > 0.0,
            "PointGoalMiniConfig.goal_radius",
            format!("must be positive, got {}", self.goal_radius),
        )?;
        check(
            self.max_speed > 0.0 && self.dt > 0.0,
            "PointGoalMiniConfig.dynamics",
            format!("max_speed {} and dt {} must be positive", self.max_speed, self.dt),
        )?;
        check(
            self.horizon >= 1,
            "PointGoalMiniConfig.horizon",
            "horizon must be at least 1".into(),
        )?;
        check(
            self.goal_radius < self.arena_half_width && self.hazard_radius < self.arena_half_width,
            "PointGoalMiniConfig.radii",
            "radii must fit inside the arena".into(),
        )?;
        check(
            (0.0..1.0).contains(&self.gamma),
            "PointGoalMiniConfig.gamma",
            format!("gamma must be in [0,1), got {}", self.gamma),
        )?;
        check(
            self.threshold_d >= 0.0 && self.threshold_d.is_finite(),
            "PointGoalMiniConfig.threshold_d",
            format!("threshold must be nonnegative, got {}", self.threshold_d),
        )?;
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.n_hazards
    }
}

pub struct PointGoalMini {
    cfg: PointGoalMiniConfig,
    spec: CmdpSpec,
    rng: ChaCha8Rng,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    hazards: Vec<[f64; 2]>,
    goal_dist: f64,
    steps: usize,
    started: bool,
    over: bool,
}

impl PointGoalMini {
    pub fn new(cfg: PointGoalMiniConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = CmdpSpec::new(cfg.gamma, cfg.threshold_d, cfg.horizon, cfg.obs_dim(), 2)?;
        Ok(PointGoalMini {
            cfg,
            spec,
            rng: stream_rng(0, &[]),
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            hazards: Vec::new(),
            goal_dist: 0.0,
            steps: 0,
            started: false,
            over: false,
        })
    }

    pub fn config(&self) -> &PointGoalMiniConfig {
        &self.cfg
    }

    fn sample_point(&mut self, margin: f64) -> [f64; 2] {
        let lim = self.cfg.arena_half_width - margin;
        [
            self.rng.random_range(-lim..=lim),
            self.rng.random_range(-lim..=lim),
        ]
    }

    fn sample_goal(&mut self) -> [f64; 2] {
        // keep the fresh goal outside the agent's goal circle so a spawn
        // never scores instantly
        loop {
            let g = self.sample_point(self.cfg.goal_radius.min(self.cfg.arena_half_width * 0.5));
            if dist(g, self.pos) > self.cfg.goal_radius {
                return g;
            }
        }
    }

    fn build_obs(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.cfg.obs_dim());
        obs.push(self.goal[0] - self.pos[0]);
        obs.push(self.goal[1] - self.pos[1]);
        obs.push(self.vel[0]);
        obs.push(self.vel[1]);
        for h in &self.hazards {
            obs.push(h[0] - self.pos[0]);
            obs.push(h[1] - self.pos[1]);
        }
        obs
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

impl Environment for PointGoalMini {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = stream_rng(seed, &[0x9a1]);
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.started = true;
        self.over = false;
        self.hazards.clear();
        while self.hazards.len() < self.cfg.n_hazards {
            let h = self.sample_point(self.cfg.hazard_radius.min(self.cfg.arena_half_width * 0.5));
            if dist(h, self.pos) > self.cfg.hazard_radius {
                self.hazards.push(h);
            }
        }
        self.goal = self.sample_goal();
        self.goal_dist = dist(self.goal, self.pos);
        StateVec::new(self.build_obs()).expect("observation is finite by construction")
    }

    fn observation(&self) -> StateVec {
        StateVec::new(self.build_obs()).expect("observation is finite by construction")
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepRecord> {
        if !self.started {
            return Err(Error::NotReset);
        }
        if self.over {
            return Err(Error::EpisodeOver);
        }
        if action.len() != 2 {
            return Err(Error::DimMismatch {
                context: "PointGoalMini action",
                expected: 2,
                actual: action.len(),
            });
        }
        let obs_before = self.observation();

        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        self.vel[0] += self.cfg.dt * ax;
        self.vel[1] += self.cfg.dt * ay;
        let speed = (self.vel[0] * self.vel[0] + self.vel[1] * self.vel[1]).sqrt();
        if speed > self.cfg.max_speed {
            let scale = self.cfg.max_speed / speed;
            self.vel[0] *= scale;
            self.vel[1] *= scale;
        }
        let w = self.cfg.arena_half_width;
        self.pos[0] = (self.pos[0] + self.cfg.dt * self.vel[0]).clamp(-w, w);
        self.pos[1] = (self.pos[1] + self.cfg.dt * self.vel[1]).clamp(-w, w);

        let new_dist = dist(self.goal, self.pos);
        let mut reward = self.goal_dist - new_dist;
        if new_dist <= self.cfg.goal_radius {
            reward += self.cfg.goal_bonus;
            self.goal = self.sample_goal();
            self.goal_dist = dist(self.goal, self.pos);
        } else {
            self.goal_dist = new_dist;
        }

        let cost = if self
            .hazards
            .iter()
            .any(|&h| dist(h, self.pos) < self.cfg.hazard_radius)
        {
            1.0
        } else {
            0.0
        };

        self.steps += 1;
        let truncated = self.steps >= self.cfg.horizon;
        self.over = truncated;

        Ok(StepRecord {
            state: obs_before,
            action: action.clone(),
            reward,
            cost,
            cor: None,
            terminal: false,
            truncated,
        })
    }

    fn episode_over(&self) -> bool {
        self.over
    }
}
