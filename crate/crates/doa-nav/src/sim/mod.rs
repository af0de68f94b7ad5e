//! Deterministic gridworld object-navigation environment.
//!
//! A world is a small occupancy grid with object instances placed so that
//! classes with high mutual affinity co-locate. Observations are synthetic:
//! a per-class detection table whose confidence falls off with distance and
//! object size, and a coarse image feature grid. Detection confidence and
//! feature signal-to-noise both degrade for small or far objects, which is
//! the visibility skew the attention diagnostics in [`crate::metrics`]
//! measure.
//!
//! Everything is reproducible: a world is a pure function of `(seed, config)`
//! and an episode is a pure function of `(world, target, seed, actions)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("world generation infeasible: {0}")]
    Infeasible(String),
    #[error("target class {0} not present in world")]
    TargetAbsent(usize),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid action index {0}")]
    InvalidAction(u8),
}

pub type Result<T> = std::result::Result<T, SimError>;

// ── actions and poses ────────────────────────────────────────────────

pub const NUM_ACTIONS: usize = 6;
pub const DONE_INDEX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookDown,
    LookUp,
    Done,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookDown,
        Action::LookUp,
        Action::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL.get(i).copied().ok_or(SimError::InvalidAction(i.min(255) as u8))
    }

    /// The only action that changes the agent's position.
    pub fn changes_position(self) -> bool {
        matches!(self, Action::MoveAhead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pitch {
    Down,
    Level,
    Up,
}

impl Pitch {
    fn lower(self) -> Pitch {
        match self {
            Pitch::Up => Pitch::Level,
            _ => Pitch::Down,
        }
    }

    fn raise(self) -> Pitch {
        match self {
            Pitch::Down => Pitch::Level,
            _ => Pitch::Up,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeightBand {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub x: i32,
    pub y: i32,
    /// One of 0, 90, 180, 270 degrees; 0 faces +x, 90 faces +y.
    pub yaw: u16,
    pub pitch: Pitch,
}

impl AgentState {
    pub fn facing(&self) -> (i32, i32) {
        match self.yaw {
            0 => (1, 0),
            90 => (0, 1),
            180 => (-1, 0),
            270 => (0, -1),
            other => unreachable!("yaw {other} is not axis-aligned"),
        }
    }
}

// ── configuration ────────────────────────────────────────────────────

fn default_grid() -> usize {
    10
}
fn default_num_classes() -> usize {
    22
}
fn default_view_range() -> f64 {
    5.0
}
fn default_fov_deg() -> f64 {
    90.0
}
fn default_success_dist() -> f64 {
    2.0
}
fn default_max_steps() -> u32 {
    100
}
fn default_conf_noise() -> f64 {
    0.05
}
fn default_feature_noise() -> f64 {
    0.5
}
fn default_image_noise() -> f64 {
    0.05
}
fn default_feature_dim() -> usize {
    32
}
fn default_m_cells() -> usize {
    16
}
fn default_obstacle_density() -> f64 {
    0.1
}
fn default_instances_per_class() -> usize {
    1
}
fn default_reward_success() -> f64 {
    5.0
}
fn default_reward_step() -> f64 {
    -0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    #[serde(default = "default_grid")]
    pub grid_w: usize,
    #[serde(default = "default_grid")]
    pub grid_h: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Detectability prior per class, each in [0.3, 1]. `None` derives a
    /// linear spread from 0.3 (class 0) to 1.0 (class N−1).
    #[serde(default)]
    pub class_base_size: Option<Vec<f64>>,
    /// Symmetric non-negative co-location prior. `None` derives a pairing of
    /// class `i` with class `N−1−i`, so the least-detectable classes
    /// co-locate with the most-detectable ones.
    #[serde(default)]
    pub class_affinity: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_view_range")]
    pub view_range: f64,
    #[serde(default = "default_fov_deg")]
    pub fov_deg: f64,
    #[serde(default = "default_success_dist")]
    pub success_dist: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_conf_noise")]
    pub conf_noise_sigma: f64,
    #[serde(default = "default_feature_noise")]
    pub feature_noise_sigma: f64,
    #[serde(default = "default_image_noise")]
    pub image_noise_sigma: f64,
    #[serde(default = "default_feature_dim")]
    pub d_img: usize,
    #[serde(default = "default_feature_dim")]
    pub d_vis: usize,
    /// Image grid cell count; must be a perfect square.
    #[serde(default = "default_m_cells")]
    pub m_cells: usize,
    #[serde(default)]
    pub ground_truth_detections: bool,
    #[serde(default = "default_obstacle_density")]
    pub obstacle_density: f64,
    #[serde(default = "default_instances_per_class")]
    pub instances_per_class: usize,
    #[serde(default = "default_reward_success")]
    pub reward_success: f64,
    #[serde(default = "default_reward_step")]
    pub reward_step: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl WorldConfig {
    /// Derived detectability prior for one class.
    pub fn base_size(&self, class: usize) -> f64 {
        match &self.class_base_size {
            Some(v) => v[class],
            None => {
                if self.num_classes <= 1 {
                    1.0
                } else {
                    0.3 + 0.7 * class as f64 / (self.num_classes - 1) as f64
                }
            }
        }
    }

    /// Derived co-location prior between two classes.
    pub fn affinity(&self, a: usize, b: usize) -> f64 {
        match &self.class_affinity {
            Some(m) => m[a][b],
            None => {
                let n = self.num_classes;
                if a != b && a + b == n - 1 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn image_side(&self) -> usize {
        (self.m_cells as f64).sqrt().round() as usize
    }

    /// Width of one detection row: visual features + bbox + conf + target.
    pub fn detection_width(&self) -> usize {
        self.d_vis + 6
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.grid_w == 0 || self.grid_h == 0 {
            return fail("grid dimensions must be positive".into());
        }
        if self.num_classes < 4 {
            return fail(format!("need at least 4 object classes, got {}", self.num_classes));
        }
        if let Some(sizes) = &self.class_base_size {
            if sizes.len() != self.num_classes {
                return fail("class_base_size length must equal num_classes".into());
            }
            if sizes.iter().any(|s| !(0.3..=1.0).contains(s)) {
                return fail("class_base_size entries must lie in [0.3, 1]".into());
            }
        }
        if let Some(aff) = &self.class_affinity {
            let n = self.num_classes;
            if aff.len() != n || aff.iter().any(|r| r.len() != n) {
                return fail("class_affinity must be N x N".into());
            }
            for i in 0..n {
                for j in 0..n {
                    if aff[i][j] < 0.0 {
                        return fail("class_affinity must be non-negative".into());
                    }
                    if (aff[i][j] - aff[j][i]).abs() > 1e-12 {
                        return fail("class_affinity must be symmetric".into());
                    }
                }
            }
        }
        if self.view_range <= 0.0 {
            return fail("view_range must be positive".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return fail("fov_deg must lie in (0, 360]".into());
        }
        if self.success_dist < 0.0 {
            return fail("success_dist must be non-negative".into());
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if self.conf_noise_sigma < 0.0 || self.feature_noise_sigma < 0.0 || self.image_noise_sigma < 0.0 {
            return fail("noise sigmas must be non-negative".into());
        }
        if self.d_img == 0 || self.d_vis == 0 {
            return fail("feature dims must be positive".into());
        }
        let side = self.image_side();
        if self.m_cells == 0 || side * side != self.m_cells {
            return fail(format!("m_cells {} is not a perfect square", self.m_cells));
        }
        if !(0.0..=0.9).contains(&self.obstacle_density) {
            return fail("obstacle_density must lie in [0, 0.9]".into());
        }
        if self.instances_per_class == 0 {
            return fail("instances_per_class must be positive".into());
        }
        Ok(())
    }
}

// ── world ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class_id: usize,
    pub x: i32,
    pub y: i32,
    pub height_band: HeightBand,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    /// Row-major occupancy grid, `true` = obstacle.
    pub obstacles: Vec<bool>,
    pub objects: Vec<ObjectInstance>,
}

impl World {
    pub fn cell_index(&self, x: i32, y: i32) -> usize {
        y as usize * self.config.grid_w + x as usize
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.config.grid_w && (y as usize) < self.config.grid_h
    }

    pub fn is_free(&self, x: i32, y: i32) -> bool {
        self.in_bounds(x, y) && !self.obstacles[self.cell_index(x, y)]
    }

    pub fn free_cells(&self) -> Vec<(i32, i32)> {
        let mut cells = Vec::new();
        for y in 0..self.config.grid_h as i32 {
            for x in 0..self.config.grid_w as i32 {
                if self.is_free(x, y) {
                    cells.push((x, y));
                }
            }
        }
        cells
    }

    pub fn has_class(&self, class: usize) -> bool {
        self.objects.iter().any(|o| o.class_id == class)
    }

    pub fn instances_of(&self, class: usize) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| o.class_id == class)
    }

    /// Euclidean distance from a pose to the nearest instance of a class.
    pub fn dist_to_class(&self, state: &AgentState, class: usize) -> f64 {
        self.instances_of(class)
            .map(|o| dist(state.x, state.y, o.x, o.y))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<World, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn dist(ax: i32, ay: i32, bx: i32, by: i32) -> f64 {
    let dx = (ax - bx) as f64;
    let dy = (ay - by) as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Flood fill: are all free cells mutually reachable (4-neighbourhood)?
fn free_cells_connected(w: usize, h: usize, obstacles: &[bool]) -> bool {
    let free_count = obstacles.iter().filter(|o| !**o).count();
    if free_count == 0 {
        return false;
    }
    let start = obstacles.iter().position(|o| !*o).unwrap();
    let mut seen = vec![false; w * h];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0;
    while let Some(cell) = stack.pop() {
        reached += 1;
        let (x, y) = ((cell % w) as i32, (cell / w) as i32);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let ni = ny as usize * w + nx as usize;
            if !obstacles[ni] && !seen[ni] {
                seen[ni] = true;
                stack.push(ni);
            }
        }
    }
    reached == free_count
}

/// Generate a world: an always-connected obstacle layout plus object
/// instances placed near already-placed instances of affine classes, so
/// related classes co-locate. Instance cells are distinct.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = substream(seed, "worldgen", 0);
    let (w, h) = (config.grid_w, config.grid_h);
    let cells = w * h;

    // Obstacles added one at a time; any placement that would disconnect the
    // free region is skipped, so connectivity holds by construction.
    let mut obstacles = vec![false; cells];
    let want = (config.obstacle_density * cells as f64).floor() as usize;
    let mut order: Vec<usize> = (0..cells).collect();
    shuffle(&mut order, &mut rng);
    let mut placed = 0;
    for cell in order {
        if placed == want {
            break;
        }
        obstacles[cell] = true;
        if free_cells_connected(w, h, &obstacles) {
            placed += 1;
        } else {
            obstacles[cell] = false;
        }
    }

    let total_instances = config.num_classes * config.instances_per_class;
    let free: Vec<(i32, i32)> = (0..cells)
        .filter(|&c| !obstacles[c])
        .map(|c| ((c % w) as i32, (c / w) as i32))
        .collect();
    if free.len() < total_instances {
        return Err(SimError::Infeasible(format!(
            "{total_instances} object instances need distinct free cells but only {} exist",
            free.len()
        )));
    }

    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(total_instances);
    let mut occupied = vec![false; cells];
    let bands = [HeightBand::Low, HeightBand::Mid, HeightBand::High];
    for round in 0..config.instances_per_class {
        for class in 0..config.num_classes {
            // Prefer a cell near an already-placed instance of an affine class.
            let weights: Vec<f64> =
                objects.iter().map(|o| config.affinity(class, o.class_id)).collect();
            let total: f64 = weights.iter().sum();
            let mut chosen: Option<(i32, i32)> = None;
            if total > 0.0 {
                let mut pick = rng.random::<f64>() * total;
                let mut anchor = objects.len() - 1;
                for (i, w_i) in weights.iter().enumerate() {
                    pick -= w_i;
                    if pick <= 0.0 {
                        anchor = i;
                        break;
                    }
                }
                let (ax, ay) = (objects[anchor].x, objects[anchor].y);
                let near: Vec<(i32, i32)> = free
                    .iter()
                    .copied()
                    .filter(|&(x, y)| !occupied[y as usize * w + x as usize] && dist(x, y, ax, ay) <= 2.0)
                    .collect();
                if !near.is_empty() {
                    chosen = Some(near[rng.random_range(0..near.len())]);
                }
            }
            let (x, y) = match chosen {
                Some(c) => c,
                None => {
                    let open: Vec<(i32, i32)> = free
                        .iter()
                        .copied()
                        .filter(|&(x, y)| !occupied[y as usize * w + x as usize])
                        .collect();
                    if open.is_empty() {
                        return Err(SimError::Infeasible(format!(
                            "no free cell left for class {class} instance {round}"
                        )));
                    }
                    open[rng.random_range(0..open.len())]
                }
            };
            occupied[y as usize * w + x as usize] = true;
            objects.push(ObjectInstance {
                class_id: class,
                x,
                y,
                height_band: bands[rng.random_range(0..3)],
                size: config.base_size(class),
            });
        }
    }

    Ok(World { config: config.clone(), seed, obstacles, objects })
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

// ── observation ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub visual: Vec<f64>,
    /// Egocentric [center x, center y, width, height], all in [0, 1].
    pub bbox: [f64; 4],
    pub conf: f64,
    pub target_flag: bool,
}

impl Detection {
    fn zero(class_id: usize, d_vis: usize) -> Self {
        Detection { class_id, visual: vec![0.0; d_vis], bbox: [0.0; 4], conf: 0.0, target_flag: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Row-major M x D_img feature grid.
    pub image: Vec<f64>,
    /// Exactly one row per class, in class order; absent classes all-zero.
    pub detections: Vec<Detection>,
}

/// Seed namespace for per-class feature signatures. Signatures identify a
/// class across worlds, so they depend only on the class id and dimension.
const SIGNATURE_SEED: u64 = 0xd0a;

pub fn class_signature(class: usize, dim: usize) -> Vec<f64> {
    let mut rng = substream(SIGNATURE_SEED, "vissig", class as u64);
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub fn class_image_signature(class: usize, dim: usize) -> Vec<f64> {
    let mut rng = substream(SIGNATURE_SEED, "imgsig", class as u64);
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Is `obj` visible from `state`: within range, inside the horizontal field
/// of view, and on a height band compatible with the camera pitch (low/high
/// bands are visible from level pitch only within 2 cells)?
pub fn object_visible(world: &World, state: &AgentState, obj: &ObjectInstance) -> bool {
    let cfg = &world.config;
    let d = dist(state.x, state.y, obj.x, obj.y);
    if d > cfg.view_range + 1e-9 {
        return false;
    }
    if d > 1e-9 && cfg.fov_deg < 360.0 {
        let (fx, fy) = state.facing();
        let dx = (obj.x - state.x) as f64;
        let dy = (obj.y - state.y) as f64;
        let cos = (dx * fx as f64 + dy * fy as f64) / d;
        let cos_half = (cfg.fov_deg / 2.0).to_radians().cos();
        if cos < cos_half - 1e-9 {
            return false;
        }
    }
    match obj.height_band {
        HeightBand::Mid => true,
        HeightBand::Low => state.pitch == Pitch::Down || d <= 2.0 + 1e-9,
        HeightBand::High => state.pitch == Pitch::Up || d <= 2.0 + 1e-9,
    }
}

/// Noise-free detection confidence at distance `d`.
fn clean_conf(size: f64, d: f64, view_range: f64) -> f64 {
    (size * (1.0 - d / view_range)).clamp(0.0, 1.0)
}

fn egocentric_bbox(state: &AgentState, obj: &ObjectInstance, d: f64) -> [f64; 4] {
    let (fx, fy) = state.facing();
    let dx = (obj.x - state.x) as f64;
    let dy = (obj.y - state.y) as f64;
    let forward = dx * fx as f64 + dy * fy as f64;
    let lateral = fx as f64 * dy - fy as f64 * dx;
    let cx = (0.5 + 0.5 * lateral / forward.max(1.0)).clamp(0.0, 1.0);
    let band_base: f64 = match obj.height_band {
        HeightBand::Low => 0.75,
        HeightBand::Mid => 0.5,
        HeightBand::High => 0.25,
    };
    let pitch_shift: f64 = match state.pitch {
        Pitch::Down => -0.2,
        Pitch::Level => 0.0,
        Pitch::Up => 0.2,
    };
    let cy = (band_base + pitch_shift).clamp(0.05, 0.95);
    let extent = (obj.size / (1.0 + d)).clamp(0.0, 1.0);
    [cx, cy, extent, extent]
}

/// Render the observation for a pose. Detection rows are written in class
/// order (nearest visible instance represents the class); absent classes
/// stay all-zero. Low-confidence detections carry proportionally noisier
/// visual features.
pub fn observe(world: &World, state: &AgentState, target: usize, rng: &mut ChaCha8Rng) -> Observation {
    let cfg = &world.config;
    let mut detections: Vec<Detection> =
        (0..cfg.num_classes).map(|c| Detection::zero(c, cfg.d_vis)).collect();

    for class in 0..cfg.num_classes {
        let mut best: Option<(&ObjectInstance, f64)> = None;
        for obj in world.instances_of(class) {
            if object_visible(world, state, obj) {
                let d = dist(state.x, state.y, obj.x, obj.y);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((obj, d));
                }
            }
        }
        let Some((obj, d)) = best else { continue };

        let conf = if cfg.ground_truth_detections {
            1.0
        } else if cfg.conf_noise_sigma > 0.0 {
            let noise = Normal::new(0.0, cfg.conf_noise_sigma).unwrap().sample(rng);
            (obj.size * (1.0 - d / cfg.view_range) + noise).clamp(0.0, 1.0)
        } else {
            clean_conf(obj.size, d, cfg.view_range)
        };
        let signature = class_signature(class, cfg.d_vis);
        let visual: Vec<f64> = if cfg.ground_truth_detections {
            signature
        } else {
            let sigma = ((1.0 - conf) * cfg.feature_noise_sigma).max(0.0);
            if sigma > 0.0 {
                let feat_noise = Normal::new(0.0, sigma).unwrap();
                signature.iter().map(|&s| s * conf + feat_noise.sample(rng)).collect()
            } else {
                signature.iter().map(|&s| s * conf).collect()
            }
        };
        detections[class] = Detection {
            class_id: class,
            visual,
            bbox: egocentric_bbox(state, obj, d),
            conf,
            target_flag: class == target,
        };
    }

    // Image grid: every visible instance deposits its class signature into
    // the cell its bbox centre projects to, scaled by noise-free confidence.
    let side = cfg.image_side();
    let mut image = vec![0.0; cfg.m_cells * cfg.d_img];
    for obj in &world.objects {
        if !object_visible(world, state, obj) {
            continue;
        }
        let d = dist(state.x, state.y, obj.x, obj.y);
        let conf =
            if cfg.ground_truth_detections { 1.0 } else { clean_conf(obj.size, d, cfg.view_range) };
        let bbox = egocentric_bbox(state, obj, d);
        let col = ((bbox[0] * side as f64) as usize).min(side - 1);
        let row = ((bbox[1] * side as f64) as usize).min(side - 1);
        let cell = row * side + col;
        let sig = class_image_signature(obj.class_id, cfg.d_img);
        for (k, &s) in sig.iter().enumerate() {
            image[cell * cfg.d_img + k] += s * conf;
        }
    }
    if cfg.image_noise_sigma > 0.0 {
        let img_noise = Normal::new(0.0, cfg.image_noise_sigma).unwrap();
        for v in image.iter_mut() {
            *v += img_noise.sample(rng);
        }
    }

    Observation { image, detections }
}

// ── episode dynamics ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collided: bool,
    pub target_visible: bool,
    pub dist_to_target: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: AgentState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub info: StepInfo,
}

/// Does the pose satisfy the episode success predicate (target near enough
/// and currently visible)?
pub fn satisfies_success(world: &World, state: &AgentState, target: usize) -> bool {
    world.dist_to_class(state, target) <= world.config.success_dist + 1e-9
        && world.instances_of(target).any(|o| object_visible(world, state, o))
}

/// One navigation episode over a world. Owns the RNG stream that drives
/// observation noise, so identical `(world, target, seed, actions)` yield
/// bit-identical outcome sequences.
#[derive(Debug, Clone)]
pub struct NavEnv {
    pub world: World,
    pub target: usize,
    state: AgentState,
    steps: u32,
    done: bool,
    rng: ChaCha8Rng,
}

impl NavEnv {
    /// Start an episode at a uniformly random free pose (level pitch).
    pub fn new(world: World, target: usize, seed: u64) -> Result<(NavEnv, Observation)> {
        NavEnv::with_start_filter(world, target, seed, false)
    }

    /// As [`NavEnv::new`], but resample the start pose (bounded tries) so the
    /// episode does not begin already satisfying the success predicate.
    /// Evaluation uses this so optimal path lengths are non-trivial.
    pub fn new_non_trivial(world: World, target: usize, seed: u64) -> Result<(NavEnv, Observation)> {
        NavEnv::with_start_filter(world, target, seed, true)
    }

    fn with_start_filter(
        world: World,
        target: usize,
        seed: u64,
        avoid_immediate_success: bool,
    ) -> Result<(NavEnv, Observation)> {
        if target >= world.config.num_classes || !world.has_class(target) {
            return Err(SimError::TargetAbsent(target));
        }
        let mut rng = substream(seed, "episode", world.seed);
        let free = world.free_cells();
        let yaws = [0u16, 90, 180, 270];
        let mut state = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level };
        for _ in 0..64 {
            let (x, y) = free[rng.random_range(0..free.len())];
            let yaw = yaws[rng.random_range(0..4)];
            state = AgentState { x, y, yaw, pitch: Pitch::Level };
            if !avoid_immediate_success || !satisfies_success(&world, &state, target) {
                break;
            }
        }
        let obs = observe(&world, &state, target, &mut rng);
        Ok((NavEnv { world, target, state, steps: 0, done: false, rng }, obs))
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Apply one action. `MoveAhead` into a wall is a no-op with
    /// `collided` set; `Done` ends the episode and succeeds only if the
    /// success predicate holds at the current pose; hitting the step limit
    /// ends the episode unsuccessfully.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(SimError::EpisodeFinished);
        }
        self.steps += 1;
        let mut collided = false;
        let mut success = false;

        match action {
            Action::MoveAhead => {
                let (fx, fy) = self.state.facing();
                let (nx, ny) = (self.state.x + fx, self.state.y + fy);
                if self.world.is_free(nx, ny) {
                    self.state.x = nx;
                    self.state.y = ny;
                } else {
                    collided = true;
                }
            }
            Action::RotateLeft => self.state.yaw = (self.state.yaw + 90) % 360,
            Action::RotateRight => self.state.yaw = (self.state.yaw + 270) % 360,
            Action::LookDown => self.state.pitch = self.state.pitch.lower(),
            Action::LookUp => self.state.pitch = self.state.pitch.raise(),
            Action::Done => {
                success = satisfies_success(&self.world, &self.state, self.target);
                self.done = true;
            }
        }
        if self.steps >= self.world.config.max_steps {
            self.done = true;
        }

        let reward =
            if success { self.world.config.reward_success } else { self.world.config.reward_step };
        let observation = observe(&self.world, &self.state, self.target, &mut self.rng);
        let target_visible = self
            .world
            .instances_of(self.target)
            .any(|o| object_visible(&self.world, &self.state, o));
        Ok(StepOutcome {
            next_state: self.state,
            observation,
            reward,
            done: self.done,
            success,
            info: StepInfo {
                collided,
                target_visible,
                dist_to_target: self.world.dist_to_class(&self.state, self.target),
            },
        })
    }
}

// ── shortest path ────────────────────────────────────────────────────

/// Minimal number of actions (moves, rotations, looks; the terminal Done is
/// excluded) from `start` to any pose satisfying the success predicate.
/// `None` when no such pose is reachable.
pub fn shortest_path_length(world: &World, start: &AgentState, target: usize) -> Option<u32> {
    if !world.has_class(target) {
        return None;
    }
    if satisfies_success(world, start, target) {
        return Some(0);
    }
    let w = world.config.grid_w;
    let encode = |s: &AgentState| -> usize {
        let yaw_idx = (s.yaw / 90) as usize;
        ((s.y as usize * w + s.x as usize) * 4 + yaw_idx) * 3 + s.pitch.index()
    };
    let mut seen = vec![false; w * world.config.grid_h * 12];
    let mut queue = std::collections::VecDeque::new();
    seen[encode(start)] = true;
    queue.push_back((*start, 0u32));

    while let Some((state, depth)) = queue.pop_front() {
        for action in
            [Action::MoveAhead, Action::RotateLeft, Action::RotateRight, Action::LookDown, Action::LookUp]
        {
            let mut next = state;
            match action {
                Action::MoveAhead => {
                    let (fx, fy) = state.facing();
                    let (nx, ny) = (state.x + fx, state.y + fy);
                    if world.is_free(nx, ny) {
                        next.x = nx;
                        next.y = ny;
                    }
                }
                Action::RotateLeft => next.yaw = (state.yaw + 90) % 360,
                Action::RotateRight => next.yaw = (state.yaw + 270) % 360,
                Action::LookDown => next.pitch = state.pitch.lower(),
                Action::LookUp => next.pitch = state.pitch.raise(),
                Action::Done => unreachable!(),
            }
            let code = encode(&next);
            if seen[code] {
                continue;
            }
            seen[code] = true;
            if satisfies_success(world, &next, target) {
                return Some(depth + 1);
            }
            queue.push_back((next, depth + 1));
        }
    }
    None
}

#[cfg(test)]
mod tests;
