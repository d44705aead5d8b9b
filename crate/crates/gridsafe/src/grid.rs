//! Grid-world environment: maps, episodes, egocentric observations.
//!
//! Maps are rectangular grids with a wall border. The interior holds three
//! collectible reward entities (ball, box, key), a configurable number of
//! walkable cost entities per kind (lava, water, grass), and the agent start
//! cell. Transitions are deterministic; an attempted move into a wall leaves
//! the agent in place. The agent observes a 7x7 egocentric window padded with
//! walls beyond the map boundary.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::derive_rng;

/// Side length of the egocentric observation window.
pub const WINDOW: usize = 7;
/// Number of cells the agent sees in front/behind/sideways (window radius).
pub const WINDOW_RADIUS: i32 = (WINDOW as i32 - 1) / 2;

/// Everything a grid cell can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Empty,
    Wall,
    Ball,
    Box,
    Key,
    Lava,
    Water,
    Grass,
}

impl EntityKind {
    /// All kinds in their canonical (encoding) order.
    pub const ALL: [EntityKind; 8] = [
        EntityKind::Empty,
        EntityKind::Wall,
        EntityKind::Ball,
        EntityKind::Box,
        EntityKind::Key,
        EntityKind::Lava,
        EntityKind::Water,
        EntityKind::Grass,
    ];

    /// The three collectible reward entities.
    pub const REWARDS: [EntityKind; 3] = [EntityKind::Ball, EntityKind::Box, EntityKind::Key];

    /// The three walkable cost entities.
    pub const COSTS: [EntityKind; 3] = [EntityKind::Lava, EntityKind::Water, EntityKind::Grass];

    /// Canonical index used by one-hot encodings.
    pub fn index(self) -> usize {
        match self {
            EntityKind::Empty => 0,
            EntityKind::Wall => 1,
            EntityKind::Ball => 2,
            EntityKind::Box => 3,
            EntityKind::Key => 4,
            EntityKind::Lava => 5,
            EntityKind::Water => 6,
            EntityKind::Grass => 7,
        }
    }

    pub fn is_reward(self) -> bool {
        matches!(self, EntityKind::Ball | EntityKind::Box | EntityKind::Key)
    }

    pub fn is_cost(self) -> bool {
        matches!(self, EntityKind::Lava | EntityKind::Water | EntityKind::Grass)
    }

    /// Single-character map encoding.
    pub fn to_char(self) -> char {
        match self {
            EntityKind::Empty => '.',
            EntityKind::Wall => 'W',
            EntityKind::Ball => 'B',
            EntityKind::Box => 'X',
            EntityKind::Key => 'K',
            EntityKind::Lava => 'L',
            EntityKind::Water => '~',
            EntityKind::Grass => 'G',
        }
    }

    pub fn from_char(c: char) -> Option<EntityKind> {
        Some(match c {
            '.' => EntityKind::Empty,
            'W' => EntityKind::Wall,
            'B' => EntityKind::Ball,
            'X' => EntityKind::Box,
            'K' => EntityKind::Key,
            'L' => EntityKind::Lava,
            '~' => EntityKind::Water,
            'G' => EntityKind::Grass,
            _ => return None,
        })
    }

    /// Lower-case name as used in constraint expressions ("lava", "water", ...).
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Empty => "empty",
            EntityKind::Wall => "wall",
            EntityKind::Ball => "ball",
            EntityKind::Box => "box",
            EntityKind::Key => "key",
            EntityKind::Lava => "lava",
            EntityKind::Water => "water",
            EntityKind::Grass => "grass",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Absolute movement actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

/// Number of available actions.
pub const NUM_ACTIONS: usize = 4;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    /// (row, col) displacement of the action.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Grid position as (row, col).
pub type Pos = (usize, usize);

/// Errors from map construction, parsing, and stepping.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("map of {width}x{height} cannot fit {required} interior placements ({available} interior cells)")]
    InfeasibleConfig {
        width: usize,
        height: usize,
        required: usize,
        available: usize,
    },
    #[error("map dimensions must be at least 3x3, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("map text is empty")]
    EmptyMapText,
    #[error("map row {row} has length {len}, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("unknown map character {c:?} at row {row}, col {col}")]
    UnknownChar { c: char, row: usize, col: usize },
    #[error("map text must contain exactly one agent marker 'A', found {found}")]
    AgentMarkerCount { found: usize },
    #[error("episode is already finished")]
    EpisodeFinished,
}

/// A rectangular grid map plus the agent's start cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<EntityKind>,
    agent_start: Pos,
}

/// Map generation parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    /// Cost entity kinds to place (deduplicated, placed in canonical order).
    pub cost_kinds: BTreeSet<EntityKind>,
    /// Number of cells per cost kind.
    pub cells_per_cost_kind: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 13,
            height: 13,
            cost_kinds: EntityKind::COSTS.iter().copied().collect(),
            cells_per_cost_kind: 6,
        }
    }
}

impl GenConfig {
    /// Convenience constructor for square maps with all three cost kinds.
    pub fn square(side: usize, cells_per_cost_kind: usize) -> Self {
        GenConfig {
            width: side,
            height: side,
            cells_per_cost_kind,
            ..GenConfig::default()
        }
    }
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn agent_start(&self) -> Pos {
        self.agent_start
    }

    pub fn get(&self, pos: Pos) -> EntityKind {
        self.cells[pos.0 * self.width + pos.1]
    }

    fn set(&mut self, pos: Pos, kind: EntityKind) {
        self.cells[pos.0 * self.width + pos.1] = kind;
    }

    /// Kind at (row, col) treating anything outside the map as wall.
    pub fn get_padded(&self, row: i32, col: i32) -> EntityKind {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            EntityKind::Wall
        } else {
            self.get((row as usize, col as usize))
        }
    }

    /// All positions currently holding `kind`, in row-major order.
    pub fn positions_of(&self, kind: EntityKind) -> Vec<Pos> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get((r, c)) == kind {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Number of uncollected reward entities on the map.
    pub fn remaining_rewards(&self) -> usize {
        self.cells.iter().filter(|k| k.is_reward()).count()
    }

    /// Generates a map with a wall border, one of each reward entity,
    /// `cells_per_cost_kind` cells per requested cost kind, and an agent start
    /// cell, all on distinct interior cells chosen by the seeded generator.
    pub fn generate(seed: u64, config: &GenConfig) -> Result<GridMap, GridError> {
        if config.width < 3 || config.height < 3 {
            return Err(GridError::TooSmall {
                width: config.width,
                height: config.height,
            });
        }
        let interior = (config.width - 2) * (config.height - 2);
        let required = EntityKind::REWARDS.len()
            + config.cost_kinds.len() * config.cells_per_cost_kind
            + 1;
        if interior < required {
            return Err(GridError::InfeasibleConfig {
                width: config.width,
                height: config.height,
                required,
                available: interior,
            });
        }

        let mut cells = vec![EntityKind::Empty; config.width * config.height];
        for c in 0..config.width {
            cells[c] = EntityKind::Wall;
            cells[(config.height - 1) * config.width + c] = EntityKind::Wall;
        }
        for r in 0..config.height {
            cells[r * config.width] = EntityKind::Wall;
            cells[r * config.width + config.width - 1] = EntityKind::Wall;
        }

        let mut slots: Vec<Pos> = Vec::with_capacity(interior);
        for r in 1..config.height - 1 {
            for c in 1..config.width - 1 {
                slots.push((r, c));
            }
        }
        let mut rng = derive_rng(seed, &[stream::MAP_GEN]);
        slots.shuffle(&mut rng);

        let mut next = slots.into_iter();
        let mut map = GridMap {
            width: config.width,
            height: config.height,
            cells,
            agent_start: (0, 0),
        };
        for kind in EntityKind::REWARDS {
            map.set(next.next().expect("feasibility checked"), kind);
        }
        for &kind in &config.cost_kinds {
            for _ in 0..config.cells_per_cost_kind {
                map.set(next.next().expect("feasibility checked"), kind);
            }
        }
        map.agent_start = next.next().expect("feasibility checked");
        Ok(map)
    }

    /// Serializes the map to its text form: one row per line, the agent start
    /// rendered as 'A'. The start cell itself is always empty underneath.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                if (r, c) == self.agent_start {
                    out.push('A');
                } else {
                    out.push(self.get((r, c)).to_char());
                }
            }
            if r + 1 < self.height {
                out.push('\n');
            }
        }
        out
    }

    /// Parses the text form produced by [`GridMap::to_text`].
    pub fn parse(text: &str) -> Result<GridMap, GridError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.is_empty() || lines[0].is_empty() {
            return Err(GridError::EmptyMapText);
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut cells = Vec::with_capacity(width * height);
        let mut agent = None;
        let mut agent_count = 0usize;
        for (r, line) in lines.iter().enumerate() {
            let row: Vec<char> = line.chars().collect();
            if row.len() != width {
                return Err(GridError::RaggedRow {
                    row: r,
                    len: row.len(),
                    expected: width,
                });
            }
            for (c, ch) in row.into_iter().enumerate() {
                if ch == 'A' {
                    agent_count += 1;
                    agent = Some((r, c));
                    cells.push(EntityKind::Empty);
                } else {
                    match EntityKind::from_char(ch) {
                        Some(kind) => cells.push(kind),
                        None => return Err(GridError::UnknownChar { c: ch, row: r, col: c }),
                    }
                }
            }
        }
        if agent_count != 1 {
            return Err(GridError::AgentMarkerCount { found: agent_count });
        }
        Ok(GridMap {
            width,
            height,
            cells,
            agent_start: agent.unwrap(),
        })
    }
}

/// Per-entity reward values and the episode step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub ball: f64,
    pub box_: f64,
    pub key: f64,
    pub max_steps: u32,
}

impl RewardTable {
    /// Training rewards: ball 1, box 2, key 3.
    pub fn train(max_steps: u32) -> RewardTable {
        RewardTable {
            ball: 1.0,
            box_: 2.0,
            key: 3.0,
            max_steps,
        }
    }

    /// Transfer-evaluation rewards: ball 1, box 2, key -3.
    pub fn eval(max_steps: u32) -> RewardTable {
        RewardTable {
            ball: 1.0,
            box_: 2.0,
            key: -3.0,
            max_steps,
        }
    }

    pub fn reward_for(&self, kind: EntityKind) -> f64 {
        match kind {
            EntityKind::Ball => self.ball,
            EntityKind::Box => self.box_,
            EntityKind::Key => self.key,
            _ => 0.0,
        }
    }
}

/// What happened during one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvents {
    /// Kind of the cell the agent occupies after the move, as it was before
    /// any collection (so a collected ball reports `Ball` here).
    pub entered_kind: EntityKind,
    /// Reward entity collected on this step, if any.
    pub collected: Option<EntityKind>,
    /// Whether the episode finished on this step.
    pub done: bool,
}

/// Reward and events from one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub events: StepEvents,
}

/// Mutable episode state: current map (collected entities removed), agent
/// position, step counter, the set of entity kinds the agent has stood on,
/// and caller-maintained cumulative cost bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    map: GridMap,
    agent_pos: Pos,
    step_count: u32,
    visited_kinds: BTreeSet<EntityKind>,
    cumulative_cost: f64,
    done: bool,
}

impl EpisodeState {
    /// Starts an episode with the agent on the map's start cell.
    pub fn new(map: GridMap) -> EpisodeState {
        let agent_pos = map.agent_start();
        let mut visited_kinds = BTreeSet::new();
        visited_kinds.insert(map.get(agent_pos));
        EpisodeState {
            map,
            agent_pos,
            step_count: 0,
            visited_kinds,
            cumulative_cost: 0.0,
            done: false,
        }
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn agent_pos(&self) -> Pos {
        self.agent_pos
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn visited_kinds(&self) -> &BTreeSet<EntityKind> {
        &self.visited_kinds
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.cumulative_cost
    }

    /// Adds an externally computed step cost to the episode's running total.
    /// The environment itself never charges costs; the constraint layer does.
    pub fn add_cost(&mut self, cost: f64) {
        self.cumulative_cost += cost;
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies one action. Moves into walls leave the agent in place; entering
    /// a reward entity's cell collects it (reward added, entity removed); cost
    /// entities are walkable and persist. The episode ends when every reward
    /// entity has been collected or the step limit is reached.
    pub fn step(&mut self, action: Action, rewards: &RewardTable) -> Result<StepOutcome, GridError> {
        if self.done {
            return Err(GridError::EpisodeFinished);
        }
        let (dr, dc) = action.delta();
        let target_r = self.agent_pos.0 as i32 + dr;
        let target_c = self.agent_pos.1 as i32 + dc;
        if self.map.get_padded(target_r, target_c) != EntityKind::Wall {
            self.agent_pos = (target_r as usize, target_c as usize);
        }
        let entered_kind = self.map.get(self.agent_pos);
        self.visited_kinds.insert(entered_kind);

        let mut reward = 0.0;
        let mut collected = None;
        if entered_kind.is_reward() {
            reward = rewards.reward_for(entered_kind);
            collected = Some(entered_kind);
            self.map.set(self.agent_pos, EntityKind::Empty);
        }

        self.step_count += 1;
        if self.map.remaining_rewards() == 0 || self.step_count >= rewards.max_steps {
            self.done = true;
        }
        Ok(StepOutcome {
            reward,
            events: StepEvents {
                entered_kind,
                collected,
                done: self.done,
            },
        })
    }

    /// Egocentric observation of the current state.
    pub fn observe(&self) -> Observation {
        Observation::from_map(&self.map, self.agent_pos)
    }
}

/// 7x7 egocentric window centered on the agent; cells beyond the map boundary
/// read as wall. The center cell holds whatever the agent is standing on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    window: [EntityKind; WINDOW * WINDOW],
}

impl Observation {
    pub fn from_map(map: &GridMap, center: Pos) -> Observation {
        let mut window = [EntityKind::Empty; WINDOW * WINDOW];
        for wr in 0..WINDOW {
            for wc in 0..WINDOW {
                let row = center.0 as i32 + wr as i32 - WINDOW_RADIUS;
                let col = center.1 as i32 + wc as i32 - WINDOW_RADIUS;
                window[wr * WINDOW + wc] = map.get_padded(row, col);
            }
        }
        Observation { window }
    }

    /// Kind at window coordinates (row, col), both in 0..7.
    pub fn get(&self, row: usize, col: usize) -> EntityKind {
        self.window[row * WINDOW + col]
    }

    /// Kind under the agent.
    pub fn center(&self) -> EntityKind {
        self.get(WINDOW_RADIUS as usize, WINDOW_RADIUS as usize)
    }

    /// Window coordinate of the cell one `action`-step from the center.
    pub fn neighbor_of_center(action: Action) -> (usize, usize) {
        let (dr, dc) = action.delta();
        (
            (WINDOW_RADIUS + dr) as usize,
            (WINDOW_RADIUS + dc) as usize,
        )
    }

    pub fn cells(&self) -> &[EntityKind; WINDOW * WINDOW] {
        &self.window
    }

    /// 49-character row-major encoding using the map character set.
    pub fn to_compact_string(&self) -> String {
        self.window.iter().map(|k| k.to_char()).collect()
    }

    pub fn from_compact_string(s: &str) -> Result<Observation, GridError> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != WINDOW * WINDOW {
            return Err(GridError::RaggedRow {
                row: 0,
                len: chars.len(),
                expected: WINDOW * WINDOW,
            });
        }
        let mut window = [EntityKind::Empty; WINDOW * WINDOW];
        for (i, c) in chars.into_iter().enumerate() {
            window[i] = EntityKind::from_char(c).ok_or(GridError::UnknownChar {
                c,
                row: 0,
                col: i,
            })?;
        }
        Ok(Observation { window })
    }
}

/// Stream ids for RNG derivation, kept in one place to avoid collisions.
pub mod stream {
    pub const MAP_GEN: u64 = 0x01;
    pub const ROLLOUT: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const DATASET: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const EVAL: u64 = 0x06;
}
