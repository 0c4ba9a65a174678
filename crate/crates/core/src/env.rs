//! Deterministic four-room gridworld with one-hot image observations.
//!
//! Episodes are goal-conditioned: entering the goal cell pays reward 1 and
//! cuts the pseudo-discount to zero; every other step pays 0 and discounts by
//! `gamma_base`. Walking into a wall leaves the agent in place. The 64
//! evaluation goals are a fixed, evenly spread subset of the navigable cells,
//! split 48 source / 16 target.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use thiserror::Error;

pub const NUM_ACTIONS: usize = 4;

/// Row/col deltas for actions 0:up 1:down 2:left 3:right.
const ACTION_DELTAS: [(isize, isize); NUM_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown layout id: {0}")]
    UnknownLayout(String),
    #[error("gamma_base must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(f64),
    #[error("max_steps must be at least 1")]
    BadMaxSteps,
    #[error("cell ({row}, {col}) is not navigable")]
    NotNavigable { row: usize, col: usize },
    #[error("start must differ from the goal")]
    StartEqualsGoal,
    #[error("no active episode; call reset first")]
    NoActiveEpisode,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action index {0} out of range 0..4")]
    InvalidAction(usize),
    #[error("goal count {k} out of range 1..={max}")]
    GoalCountOutOfRange { k: usize, max: usize },
    #[error("bad map: {0}")]
    BadMap(String),
    #[error("layout has {navigable} navigable cells, fewer than the {required} goals required")]
    TooFewCellsForGoals { navigable: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub fn new(row: usize, col: usize) -> Self {
        Position { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutId {
    FourRoom13,
}

impl LayoutId {
    pub fn parse(s: &str) -> Result<Self, EnvError> {
        match s {
            "four_room_13" => Ok(LayoutId::FourRoom13),
            other => Err(EnvError::UnknownLayout(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayoutId::FourRoom13 => "four_room_13",
        }
    }
}

/// Static wall mask of a grid map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    height: usize,
    width: usize,
    walls: Vec<bool>, // row-major
}

impl Layout {
    /// The canonical 13x13 four-room map: border walls, a vertical wall at
    /// col 6 and a horizontal wall at row 6, with doorways at (3,6), (10,6),
    /// (6,2) and (6,9). 104 cells are navigable.
    pub fn four_room_13() -> Self {
        let n = 13;
        let mut walls = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                if r == 0 || c == 0 || r == n - 1 || c == n - 1 || r == 6 || c == 6 {
                    walls[r * n + c] = true;
                }
            }
        }
        for (r, c) in [(3, 6), (10, 6), (6, 2), (6, 9)] {
            walls[r * n + c] = false;
        }
        Layout { height: n, width: n, walls }
    }

    pub fn from_id(id: LayoutId) -> Self {
        match id {
            LayoutId::FourRoom13 => Self::four_room_13(),
        }
    }

    /// Parses a plain-text map: `#` wall, `.` floor, one line per row.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(EnvError::BadMap("no rows".to_string()));
        }
        let width = rows[0].chars().count();
        let mut walls = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::BadMap(format!("row {i} has different length")));
            }
            for ch in row.chars() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    other => return Err(EnvError::BadMap(format!("unexpected character {other:?} in row {i}"))),
                }
            }
        }
        Ok(Layout { height: rows.len(), width, walls })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Observation length: one pixel per grid cell, walls included.
    pub fn obs_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn cell_index(&self, p: Position) -> usize {
        p.row * self.width + p.col
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_navigable(&self, p: Position) -> bool {
        p.row < self.height && p.col < self.width && !self.walls[self.cell_index(p)]
    }

    /// All navigable cells in row-major order.
    pub fn navigable_cells(&self) -> Vec<Position> {
        let mut cells = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let p = Position { row, col };
                if self.is_navigable(p) {
                    cells.push(p);
                }
            }
        }
        cells
    }

    /// Deterministic next cell under the collision rule: moves that leave the
    /// grid or enter a wall keep the agent in place.
    pub fn next_cell(&self, p: Position, action: usize) -> Result<Position, EnvError> {
        let (dr, dc) = *ACTION_DELTAS.get(action).ok_or(EnvError::InvalidAction(action))?;
        let nr = p.row as isize + dr;
        let nc = p.col as isize + dc;
        if !self.in_bounds(nr, nc) {
            return Ok(p);
        }
        let cand = Position { row: nr as usize, col: nc as usize };
        Ok(if self.is_navigable(cand) { cand } else { p })
    }
}

/// One-hot pixel image: 1.0 at the occupied cell, 0.0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pixels: Vec<f64>,
}

impl Observation {
    pub fn one_hot(dim: usize, index: usize) -> Self {
        assert!(index < dim, "one-hot index out of range");
        let mut pixels = vec![0.0; dim];
        pixels[index] = 1.0;
        Observation { pixels }
    }

    pub fn of_cell(layout: &Layout, p: Position) -> Self {
        Self::one_hot(layout.obs_dim(), layout.cell_index(p))
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Index of the single 1.0 entry, if the image is exactly one-hot.
    pub fn hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, v) in self.pixels.iter().enumerate() {
            if *v == 1.0 {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if *v != 0.0 {
                return None;
            }
        }
        hot
    }
}

/// One environment step: everything the learner consumes per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub goal: Position,
    pub s_t: Observation,
    pub a_t: usize,
    pub s_next: Observation,
    pub r_t: f64,
    pub gamma_t: f64,
}

/// A seeded draw of k source goals plus the fixed 16-goal target pool.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSplit {
    pub source: Vec<Position>,
    pub target: Vec<Position>,
    pub seed: u64,
}

/// Explicit or seeded-random start cell for `reset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    At(Position),
    Random,
}

const TOTAL_GOALS: usize = 64;
const TARGET_GOALS: usize = 16;
pub const SOURCE_GOALS: usize = TOTAL_GOALS - TARGET_GOALS;

/// The four-room MDP with mutable episode state.
///
/// Single-threaded by design; all randomness flows from the per-instance
/// seeded generator, so identical construction arguments give byte-identical
/// behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    layout: Layout,
    gamma_base: f64,
    max_steps: usize,
    rng: ChaCha12Rng,
    seed: u64,
    source_pool: Vec<Position>,
    target_pool: Vec<Position>,
    goal: Option<Position>,
    agent: Option<Position>,
    steps_taken: usize,
    done: bool,
    reached_goal: bool,
}

impl GridWorld {
    pub fn new(layout_id: LayoutId, gamma_base: f64, max_steps: usize, seed: u64) -> Result<Self, EnvError> {
        Self::with_layout(Layout::from_id(layout_id), gamma_base, max_steps, seed)
    }

    /// Builds a world over an arbitrary layout (used by tests with text maps).
    pub fn with_layout(layout: Layout, gamma_base: f64, max_steps: usize, seed: u64) -> Result<Self, EnvError> {
        if !(gamma_base > 0.0 && gamma_base < 1.0) {
            return Err(EnvError::GammaOutOfRange(gamma_base));
        }
        if max_steps == 0 {
            return Err(EnvError::BadMaxSteps);
        }
        let (source_pool, target_pool) = goal_pools_of(&layout);
        Ok(GridWorld {
            layout,
            gamma_base,
            max_steps,
            rng: ChaCha12Rng::seed_from_u64(seed),
            seed,
            source_pool,
            target_pool,
            goal: None,
            agent: None,
            steps_taken: 0,
            done: false,
            reached_goal: false,
        })
    }

    pub fn layout(&self) -> &Layout {
        self.layout_ref()
    }

    fn layout_ref(&self) -> &Layout {
        &self.layout
    }

    pub fn gamma_base(&self) -> f64 {
        self.gamma_base
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn goal(&self) -> Option<Position> {
        self.goal
    }

    pub fn agent(&self) -> Option<Position> {
        self.agent
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// True once the episode ended, by reaching the goal or by the step cap.
    pub fn finished(&self) -> bool {
        self.done
    }

    pub fn reached_goal(&self) -> bool {
        self.reached_goal
    }

    /// Places the agent and goal and starts a fresh episode.
    pub fn reset(&mut self, goal: Position, start: Start) -> Result<Observation, EnvError> {
        if !self.layout.is_navigable(goal) {
            return Err(EnvError::NotNavigable { row: goal.row, col: goal.col });
        }
        let start_pos = match start {
            Start::At(p) => {
                if !self.layout.is_navigable(p) {
                    return Err(EnvError::NotNavigable { row: p.row, col: p.col });
                }
                if p == goal {
                    return Err(EnvError::StartEqualsGoal);
                }
                p
            }
            Start::Random => {
                let candidates: Vec<Position> =
                    self.layout.navigable_cells().into_iter().filter(|p| *p != goal).collect();
                candidates[self.rng.random_range(0..candidates.len())]
            }
        };
        self.goal = Some(goal);
        self.agent = Some(start_pos);
        self.steps_taken = 0;
        self.done = false;
        self.reached_goal = false;
        Ok(Observation::of_cell(&self.layout, start_pos))
    }

    /// Advances one step. Reaching the goal pays r=1 and cuts gamma to 0; the
    /// step cap ends the episode without reward and without cutting gamma.
    pub fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if action >= NUM_ACTIONS {
            return Err(EnvError::InvalidAction(action));
        }
        let goal = self.goal.ok_or(EnvError::NoActiveEpisode)?;
        let agent = self.agent.ok_or(EnvError::NoActiveEpisode)?;
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let next = self.layout.next_cell(agent, action)?;
        self.steps_taken += 1;
        let (r_t, gamma_t) = if next == goal {
            self.done = true;
            self.reached_goal = true;
            (1.0, 0.0)
        } else {
            if self.steps_taken >= self.max_steps {
                self.done = true;
            }
            (0.0, self.gamma_base)
        };
        let s_t = Observation::of_cell(&self.layout, agent);
        let s_next = Observation::of_cell(&self.layout, next);
        self.agent = Some(next);
        Ok(Transition { goal, s_t, a_t: action, s_next, r_t, gamma_t })
    }

    /// Current agent observation of the active episode.
    pub fn observation(&self) -> Result<Observation, EnvError> {
        let agent = self.agent.ok_or(EnvError::NoActiveEpisode)?;
        Ok(Observation::of_cell(&self.layout, agent))
    }

    /// The fixed 48-goal source pool and 16-goal target pool.
    pub fn goal_pools(&self) -> (&[Position], &[Position]) {
        (&self.source_pool, &self.target_pool)
    }

    /// Samples k source goals uniformly without replacement, seeded; the
    /// target side of the split is always the full 16-goal pool.
    pub fn sample_source_goals(&self, k: usize, seed: u64) -> Result<GoalSplit, EnvError> {
        if k == 0 || k > self.source_pool.len() {
            return Err(EnvError::GoalCountOutOfRange { k, max: self.source_pool.len() });
        }
        let mut pool = self.source_pool.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // Partial Fisher-Yates: the first k entries are a uniform sample.
        for i in 0..k {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut source: Vec<Position> = pool[..k].to_vec();
        source.sort();
        Ok(GoalSplit { source, target: self.target_pool.clone(), seed })
    }

    /// One-hot goal image; same encoder as agent observations.
    pub fn render_goal(&self, g: Position) -> Result<Observation, EnvError> {
        if !self.layout.is_navigable(g) {
            return Err(EnvError::NotNavigable { row: g.row, col: g.col });
        }
        Ok(Observation::of_cell(&self.layout, g))
    }
}

/// The fixed 64-goal set and its 48/16 partition.
///
/// Goals are an evenly spread stride selection over the navigable cells in
/// row-major order (`goal i = cells[i * n / 64]`), and every fourth selected
/// goal (i % 4 == 3) is held out as a target. Layouts with fewer than 64
/// navigable cells get empty pools; only the canonical map uses goal pools.
fn goal_pools_of(layout: &Layout) -> (Vec<Position>, Vec<Position>) {
    let cells = layout.navigable_cells();
    if cells.len() < TOTAL_GOALS {
        return (Vec::new(), Vec::new());
    }
    let mut source = Vec::with_capacity(SOURCE_GOALS);
    let mut target = Vec::with_capacity(TARGET_GOALS);
    for i in 0..TOTAL_GOALS {
        let cell = cells[i * cells.len() / TOTAL_GOALS];
        if i % 4 == 3 {
            target.push(cell);
        } else {
            source.push(cell);
        }
    }
    (source, target)
}
