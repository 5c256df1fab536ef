//! The T-Maze POMDP.
//!
//! A corridor of cells `(0,0)..(L,0)` ends in a junction with two terminal
//! cells `(L,1)` and `(L,-1)`. The layout (Up or Down), seen only in the first
//! cell, tells which terminal cell holds the treasure.
//!
//! Encodings used by the networks (fixed order):
//! actions `Right, Up, Left, Down` and observations `Up, Down, Corridor,
//! Junction`, both one-hot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const DISCOUNT: f64 = 0.98;
pub const TREASURE_REWARD: f64 = 4.0;
pub const PENALTY: f64 = -0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Right,
    Up,
    Left,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Right, Action::Up, Action::Left, Action::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| contract(format!("action index {i} outside 0..4")))
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Right => (1, 0),
            Action::Up => (0, 1),
            Action::Left => (-1, 0),
            Action::Down => (0, -1),
        }
    }

    /// The action with displacement `(dx, dy)`; anything else is rejected.
    pub fn from_delta(d: (i64, i64)) -> Result<Action> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.delta() == d)
            .ok_or_else(|| contract(format!("{d:?} is not a unit move")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Up,
    Down,
    Corridor,
    Junction,
}

impl Observation {
    pub fn index(self) -> usize {
        self as usize
    }
}

pub const NUM_ACTIONS: usize = 4;
pub const NUM_OBSERVATIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MazeState {
    pub layout: Layout,
    pub pos: (i64, i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TMazeConfig {
    pub length: usize,
    pub discount: f64,
}

impl TMazeConfig {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(contract("T-Maze length must be >= 1"));
        }
        Ok(TMazeConfig {
            length,
            discount: DISCOUNT,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub state: MazeState,
    pub reward: f64,
    pub observation: Observation,
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TMaze {
    length: i64,
}

impl TMaze {
    pub fn new(config: &TMazeConfig) -> Result<Self> {
        if config.length == 0 {
            return Err(contract("T-Maze length must be >= 1"));
        }
        Ok(TMaze {
            length: config.length as i64,
        })
    }

    pub fn length(&self) -> usize {
        self.length as usize
    }

    /// Whether `c` is a cell of the maze.
    pub fn contains(&self, c: (i64, i64)) -> bool {
        let l = self.length;
        (c.1 == 0 && (0..=l).contains(&c.0)) || (c.0 == l && c.1.abs() == 1)
    }

    pub fn is_terminal(&self, s: &MazeState) -> bool {
        s.pos.0 == self.length && s.pos.1.abs() == 1
    }

    /// Every state, corridor first then the two terminal cells, Up layout
    /// before Down.
    pub fn states(&self) -> Vec<MazeState> {
        let mut cells: Vec<(i64, i64)> = (0..=self.length).map(|x| (x, 0)).collect();
        cells.extend([(self.length, 1), (self.length, -1)]);
        [Layout::Up, Layout::Down]
            .iter()
            .flat_map(|&layout| cells.iter().map(move |&pos| MazeState { layout, pos }))
            .collect()
    }

    pub fn observe(&self, s: &MazeState) -> Observation {
        match s.pos {
            (0, 0) => match s.layout {
                Layout::Up => Observation::Up,
                Layout::Down => Observation::Down,
            },
            (x, _) if x == self.length => Observation::Junction,
            _ => Observation::Corridor,
        }
    }

    pub fn reset(&self, rng: &mut impl Rng) -> (MazeState, Observation) {
        let layout = if rng.gen_bool(0.5) { Layout::Up } else { Layout::Down };
        let s = MazeState { layout, pos: (0, 0) };
        (s, self.observe(&s))
    }

    pub fn transition(&self, s: &MazeState, a: Action) -> MazeState {
        let (dx, dy) = a.delta();
        let target = (s.pos.0 + dx, s.pos.1 + dy);
        if !self.is_terminal(s) && self.contains(target) {
            MazeState { layout: s.layout, pos: target }
        } else {
            *s
        }
    }

    pub fn reward(&self, s: &MazeState, next: &MazeState) -> f64 {
        if self.is_terminal(s) {
            return 0.0;
        }
        if !self.is_terminal(next) {
            return if s == next { PENALTY } else { 0.0 };
        }
        let treasure = match next.layout {
            Layout::Up => 1,
            Layout::Down => -1,
        };
        if next.pos.1 == treasure {
            TREASURE_REWARD
        } else {
            PENALTY
        }
    }

    pub fn step(&self, s: &MazeState, a: Action) -> StepResult {
        let next = self.transition(s, a);
        StepResult {
            state: next,
            reward: self.reward(s, &next),
            observation: self.observe(&next),
            terminal: self.is_terminal(&next),
        }
    }

    /// Right `L` times then the vertical move towards the treasure.
    pub fn optimal_actions(&self, layout: Layout) -> Vec<Action> {
        let mut acts = vec![Action::Right; self.length()];
        acts.push(match layout {
            Layout::Up => Action::Up,
            Layout::Down => Action::Down,
        });
        acts
    }

    pub fn optimal_discounted_return(&self, discount: f64) -> f64 {
        TREASURE_REWARD * discount.powi(self.length as i32)
    }
}

/// Probability of each action under the exploration policy.
pub fn exploration_probabilities() -> [f64; NUM_ACTIONS] {
    [0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]
}

/// Sample the exploration policy: Right with 1/2, each other action 1/6.
pub fn exploration_action(rng: &mut impl Rng) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in Action::ALL.iter().zip(exploration_probabilities()) {
        acc += p;
        if u < acc {
            return *a;
        }
    }
    Action::Down
}

/// `⌈L / (r - l)⌉` with `r`, `l` the probabilities of moving right and left.
pub fn truncation_horizon(length: usize, right: f64, left: f64) -> Result<usize> {
    if right <= left {
        return Err(contract(format!(
            "truncation horizon needs P(right) > P(left), got {right} <= {left}"
        )));
    }
    // round away the representation error of 1/(r - l) before the ceiling
    let h = length as f64 / (right - left);
    let nearest = h.round();
    Ok(if (h - nearest).abs() < 1e-9 { nearest } else { h.ceil() } as usize)
}

/// Horizon for the default exploration policy (`⌈3L⌉`).
pub fn default_horizon(length: usize) -> usize {
    let p = exploration_probabilities();
    truncation_horizon(length, p[Action::Right.index()], p[Action::Left.index()]).expect("1/2 > 1/6")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maze(l: usize) -> TMaze {
        TMaze::new(&TMazeConfig::new(l).unwrap()).unwrap()
    }

    #[test]
    fn treasure_and_walls() {
        let m = maze(4);
        let junction = MazeState { layout: Layout::Up, pos: (4, 0) };
        let r = m.step(&junction, Action::Up);
        assert_eq!(r.state.pos, (4, 1));
        assert_eq!((r.reward, r.terminal), (4.0, true));
        let start = MazeState { layout: Layout::Up, pos: (0, 0) };
        let r = m.step(&start, Action::Left);
        assert_eq!((r.state, r.reward), (start, -0.1));
        let wrong = MazeState { layout: Layout::Down, pos: (4, 0) };
        let r = m.step(&wrong, Action::Up);
        assert_eq!((r.reward, r.terminal), (-0.1, true));
    }

    #[test]
    fn horizons() {
        assert_eq!(default_horizon(20), 60);
        assert_eq!(default_horizon(100), 300);
        assert_eq!(default_horizon(1), 3);
        assert!(truncation_horizon(5, 0.2, 0.2).is_err());
    }

    #[test]
    fn exploration_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 4];
        for _ in 0..60_000 {
            counts[exploration_action(&mut rng).index()] += 1;
        }
        assert!((counts[0] as f64 / 60_000.0 - 0.5).abs() < 0.006);
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn bad_move_vector() {
        assert!(Action::from_delta((1, 1)).is_err());
        assert_eq!(Action::from_delta((0, -1)).unwrap(), Action::Down);
    }
}
