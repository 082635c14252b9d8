//! Shared domain types: agent states, actions, state-action pairs and trajectories.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::BoundsError;
use crate::gridworld::GridSpec;

/// Agent heading. Discriminants are the tabular encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "W")]
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    /// Unit step `(dx, dy)`; rows grow downward, so North is `dy = -1`.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Dir::North => (0, -1),
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Dir::North => 'N',
            Dir::East => 'E',
            Dir::South => 'S',
            Dir::West => 'W',
        }
    }
}

/// The five agent actions. Declaration order is the global argmax tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Pickup,
    Toggle,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Pickup,
        Action::Toggle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "Forward",
            Action::TurnLeft => "TurnLeft",
            Action::TurnRight => "TurnRight",
            Action::Pickup => "Pickup",
            Action::Toggle => "Toggle",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// Fully observed agent state: pose plus key and door status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub x: usize,
    pub y: usize,
    pub dir: Dir,
    pub has_key: bool,
    pub door_open: bool,
}

impl State {
    pub fn new(x: usize, y: usize, dir: Dir, has_key: bool, door_open: bool) -> Self {
        State {
            x,
            y,
            dir,
            has_key,
            door_open,
        }
    }

    pub fn pos(&self) -> (usize, usize) {
        (self.x, self.y)
    }

    /// The cell the agent faces, if it lies inside a `width x height` grid.
    pub fn front(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (dx, dy) = self.dir.delta();
        let nx = self.x as i64 + dx;
        let ny = self.y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
            None
        } else {
            Some((nx as usize, ny as usize))
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},key={},door={})",
            self.x,
            self.y,
            self.dir.symbol(),
            self.has_key as u8,
            self.door_open as u8
        )
    }
}

/// Number of distinct states on a grid: `width * height * 4 * 2 * 2`.
pub fn state_count(spec: &GridSpec) -> usize {
    spec.width * spec.height * 16
}

/// Lexicographic index over `(x, y, dir, has_key, door_open)`.
pub fn state_index(state: &State, spec: &GridSpec) -> Result<usize, BoundsError> {
    if state.x >= spec.width || state.y >= spec.height {
        return Err(BoundsError {
            x: state.x,
            y: state.y,
            width: spec.width,
            height: spec.height,
        });
    }
    let cell = state.x * spec.height + state.y;
    Ok(((cell * 4 + state.dir.index()) * 2 + state.has_key as usize) * 2 + state.door_open as usize)
}

/// Inverse of [`state_index`].
pub fn index_state(index: usize, spec: &GridSpec) -> Result<State, BoundsError> {
    if index >= state_count(spec) {
        return Err(BoundsError {
            x: index / (spec.height * 16),
            y: 0,
            width: spec.width,
            height: spec.height,
        });
    }
    let door_open = index % 2 == 1;
    let has_key = (index / 2) % 2 == 1;
    let dir = Dir::from_index((index / 4) % 4);
    let cell = index / 16;
    Ok(State {
        x: cell / spec.height,
        y: cell % spec.height,
        dir,
        has_key,
        door_open,
    })
}

/// A state-action pair, optionally tagged with the time step it occurred at.
///
/// Equality and hashing compare only `(state, action)`; the step is carried
/// along for ordering explanations but never affects set membership.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StateActionPair {
    pub state: State,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

impl StateActionPair {
    pub fn new(state: State, action: Action) -> Self {
        StateActionPair {
            state,
            action,
            step: None,
        }
    }

    pub fn at(state: State, action: Action, step: usize) -> Self {
        StateActionPair {
            state,
            action,
            step: Some(step),
        }
    }

    pub fn same_value(&self, other: &StateActionPair) -> bool {
        self.state == other.state && self.action == other.action
    }
}

impl PartialEq for StateActionPair {
    fn eq(&self, other: &Self) -> bool {
        self.same_value(other)
    }
}

impl Eq for StateActionPair {}

impl std::hash::Hash for StateActionPair {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.state.hash(h);
        self.action.hash(h);
    }
}

impl fmt::Display for StateActionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(t) => write!(f, "{}:{}@{}", self.state, self.action, t),
            None => write!(f, "{}:{}", self.state, self.action),
        }
    }
}

/// Alternating state-action sequence plus the state reached after the last action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pairs: Vec<StateActionPair>,
    pub terminal: State,
}

impl Trajectory {
    pub fn empty(at: State) -> Self {
        Trajectory {
            pairs: Vec::new(),
            terminal: at,
        }
    }

    /// Builds a trajectory from consecutive states and the actions between them.
    pub fn from_steps(steps: Vec<(State, Action)>, terminal: State) -> Self {
        let pairs = steps
            .into_iter()
            .enumerate()
            .map(|(t, (s, a))| StateActionPair::at(s, a, t))
            .collect();
        Trajectory { pairs, terminal }
    }

    /// Number of actions taken.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn start(&self) -> State {
        self.pairs.first().map(|p| p.state).unwrap_or(self.terminal)
    }

    /// Visited states `s_0 .. s_T`, terminal included.
    pub fn states(&self) -> Vec<State> {
        self.pairs
            .iter()
            .map(|p| p.state)
            .chain(std::iter::once(self.terminal))
            .collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.pairs.iter().map(|p| p.action).collect()
    }

    /// State at time `t` (the terminal for `t == len()`).
    pub fn state_at(&self, t: usize) -> Option<State> {
        match t.cmp(&self.pairs.len()) {
            std::cmp::Ordering::Less => Some(self.pairs[t].state),
            std::cmp::Ordering::Equal => Some(self.terminal),
            std::cmp::Ordering::Greater => None,
        }
    }

    pub fn steps_are_consecutive(&self) -> bool {
        self.pairs.iter().enumerate().all(|(i, p)| p.step == Some(i))
    }
}

/// Pairs of `a` whose `(state, action)` value occurs nowhere in `b`, in `a`'s order.
pub fn pair_set_difference(a: &[StateActionPair], b: &[StateActionPair]) -> Vec<StateActionPair> {
    let covered: std::collections::HashSet<&StateActionPair> = b.iter().collect();
    let mut seen = std::collections::HashSet::new();
    a.iter()
        .filter(|p| !covered.contains(p) && seen.insert(**p))
        .copied()
        .collect()
}
