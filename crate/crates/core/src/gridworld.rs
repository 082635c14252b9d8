//! Deterministic key-door-goal gridworld.
//!
//! The agent must pick up the key, unlock the door in the dividing wall and
//! walk to the goal. Movement only happens along the current heading.
//!
//! ASCII map format, one row per line:
//!
//! | char | cell |
//! |------|------|
//! | `#`  | wall |
//! | `.`  | floor |
//! | `K`  | key |
//! | `D`  | door (starts closed and locked) |
//! | `G`  | goal |
//! | `S`  | start, facing East |
//! | `^ > v <` | start with the given heading |

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{state_count, state_index, Action, Dir, State};

pub type Pos = (usize, usize);

/// Canonical two-room environment shipped with the crate.
pub const CANONICAL_MAP: &str = include_str!("../../../assets/canonical.map");

/// Small two-room map used for exhaustive oracle comparisons.
pub const SMALL_MAP: &str = include_str!("../../../assets/small5x5.map");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GridSpecDef", into = "GridSpecDef")]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    walls: BTreeSet<Pos>,
    pub key_pos: Pos,
    pub door_pos: Pos,
    pub goal_pos: Pos,
    pub start_pos: Pos,
    pub start_dir: Dir,
    pub max_steps: usize,
    wall_mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GridSpecDef {
    width: usize,
    height: usize,
    walls: BTreeSet<Pos>,
    key_pos: Pos,
    door_pos: Pos,
    goal_pos: Pos,
    start_pos: Pos,
    start_dir: Dir,
    max_steps: usize,
}

impl From<GridSpecDef> for GridSpec {
    fn from(d: GridSpecDef) -> Self {
        GridSpec::assemble(d)
    }
}

impl From<GridSpec> for GridSpecDef {
    fn from(g: GridSpec) -> Self {
        GridSpecDef {
            width: g.width,
            height: g.height,
            walls: g.walls,
            key_pos: g.key_pos,
            door_pos: g.door_pos,
            goal_pos: g.goal_pos,
            start_pos: g.start_pos,
            start_dir: g.start_dir,
            max_steps: g.max_steps,
        }
    }
}

impl GridSpec {
    fn assemble(d: GridSpecDef) -> GridSpec {
        let mut wall_mask = vec![false; d.width * d.height];
        for &(x, y) in &d.walls {
            if x < d.width && y < d.height {
                wall_mask[y * d.width + x] = true;
            }
        }
        GridSpec {
            width: d.width,
            height: d.height,
            walls: d.walls,
            key_pos: d.key_pos,
            door_pos: d.door_pos,
            goal_pos: d.goal_pos,
            start_pos: d.start_pos,
            start_dir: d.start_dir,
            max_steps: d.max_steps,
            wall_mask,
        }
    }

    /// Builds a spec after checking placement invariants (bounds, distinctness,
    /// nothing inside a wall). Room topology is checked separately by
    /// [`GridSpec::validate_topology`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        walls: impl IntoIterator<Item = Pos>,
        key_pos: Pos,
        door_pos: Pos,
        goal_pos: Pos,
        start_pos: Pos,
        start_dir: Dir,
        max_steps: usize,
    ) -> Result<GridSpec> {
        if width == 0 || height == 0 {
            return Err(Error::Format("empty grid".into()));
        }
        if max_steps == 0 {
            return Err(Error::Validation("max_steps must be positive".into()));
        }
        let spec = GridSpec::assemble(GridSpecDef {
            width,
            height,
            walls: walls.into_iter().collect(),
            key_pos,
            door_pos,
            goal_pos,
            start_pos,
            start_dir,
            max_steps,
        });
        let named = [
            ("key", key_pos),
            ("door", door_pos),
            ("goal", goal_pos),
            ("start", start_pos),
        ];
        for (i, (name, p)) in named.iter().enumerate() {
            if !spec.in_bounds(*p) {
                return Err(Error::Validation(format!("{name} at {p:?} is out of bounds")));
            }
            if spec.is_wall(*p) {
                return Err(Error::Validation(format!("{name} at {p:?} is inside a wall")));
            }
            if let Some((other, _)) = named[..i].iter().find(|(_, q)| q == p) {
                return Err(Error::Validation(format!("{name} and {other} share cell {p:?}")));
            }
        }
        if let Some(w) = spec.walls.iter().find(|w| !spec.in_bounds(**w)) {
            return Err(Error::Validation(format!("wall at {w:?} is out of bounds")));
        }
        Ok(spec)
    }

    /// Open grid with fixed marker placement; index arithmetic tests only.
    #[cfg(test)]
    pub(crate) fn unchecked(width: usize, height: usize) -> GridSpec {
        GridSpec::assemble(GridSpecDef {
            width,
            height,
            walls: BTreeSet::new(),
            key_pos: (0, 0),
            door_pos: (0, 0),
            goal_pos: (0, 0),
            start_pos: (0, 0),
            start_dir: Dir::East,
            max_steps: 4 * width * height,
        })
    }

    pub fn walls(&self) -> &BTreeSet<Pos> {
        &self.walls
    }

    pub fn in_bounds(&self, (x, y): Pos) -> bool {
        x < self.width && y < self.height
    }

    pub fn is_wall(&self, (x, y): Pos) -> bool {
        x < self.width && y < self.height && self.wall_mask[y * self.width + x]
    }

    pub fn start_state(&self) -> State {
        State::new(
            self.start_pos.0,
            self.start_pos.1,
            self.start_dir,
            false,
            false,
        )
    }

    pub fn is_goal(&self, s: &State) -> bool {
        s.pos() == self.goal_pos
    }

    pub fn contains(&self, s: &State) -> bool {
        self.in_bounds(s.pos())
    }

    fn open_neighbours(&self, (x, y): Pos, door_passable: bool) -> impl Iterator<Item = Pos> + '_ {
        Dir::ALL.into_iter().filter_map(move |d| {
            let probe = State::new(x, y, d, false, false);
            let n = probe.front(self.width, self.height)?;
            let blocked = self.is_wall(n) || (n == self.door_pos && !door_passable);
            (!blocked).then_some(n)
        })
    }

    fn cells_connected(&self, from: Pos, to: Pos, door_passable: bool) -> bool {
        let mut seen = vec![false; self.width * self.height];
        let mut queue = VecDeque::from([from]);
        seen[from.1 * self.width + from.0] = true;
        while let Some(p) = queue.pop_front() {
            if p == to {
                return true;
            }
            for n in self.open_neighbours(p, door_passable) {
                let i = n.1 * self.width + n.0;
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        false
    }

    /// Checks the two-room topology: the door separates start from goal, the key
    /// is reachable without the door, and the goal is reachable through it.
    pub fn validate_topology(&self) -> Result<()> {
        if self.cells_connected(self.start_pos, self.goal_pos, false) {
            return Err(Error::Validation(
                "goal reachable from start without passing the door".into(),
            ));
        }
        if !self.cells_connected(self.start_pos, self.key_pos, false) {
            return Err(Error::Validation("key not reachable from start".into()));
        }
        if !self.cells_connected(self.start_pos, self.goal_pos, true) {
            return Err(Error::Validation("goal not reachable through the door".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("GridSpec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Parses an ASCII map. `max_steps` defaults to `4 * width * height`.
pub fn parse_map(text: &str) -> Result<GridSpec> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .collect();
    if rows.is_empty() {
        return Err(Error::Format("map is empty".into()));
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.chars().count() != width) {
        return Err(Error::Format(format!(
            "row {i} has {} columns, expected {width}",
            r.chars().count()
        )));
    }

    let mut walls = BTreeSet::new();
    let mut marks: HashMap<char, Vec<Pos>> = HashMap::new();
    let mut start_dir = Dir::East;
    for (y, row) in rows.iter().enumerate() {
        for (x, c) in row.chars().enumerate() {
            match c {
                '#' => {
                    walls.insert((x, y));
                }
                '.' => {}
                'K' | 'D' | 'G' | 'S' => marks.entry(c).or_default().push((x, y)),
                '^' | '>' | 'v' | '<' => {
                    start_dir = match c {
                        '^' => Dir::North,
                        '>' => Dir::East,
                        'v' => Dir::South,
                        _ => Dir::West,
                    };
                    marks.entry('S').or_default().push((x, y));
                }
                other => {
                    return Err(Error::Format(format!(
                        "unexpected character {other:?} at ({x},{y})"
                    )))
                }
            }
        }
    }
    let mut single = |c: char, name: &str| -> Result<Pos> {
        match marks.remove(&c).as_deref() {
            Some([p]) => Ok(*p),
            Some(many) => Err(Error::Format(format!("{} {name} cells, expected one", many.len()))),
            None => Err(Error::Format(format!("missing {name}"))),
        }
    };
    let key = single('K', "key")?;
    let door = single('D', "door")?;
    let goal = single('G', "goal")?;
    let start = single('S', "start")?;

    let spec = GridSpec::new(
        width,
        height,
        walls,
        key,
        door,
        goal,
        start,
        start_dir,
        4 * width * height,
    )?;
    spec.validate_topology()?;
    Ok(spec)
}

/// Renders a spec back to the ASCII format.
pub fn render_map(spec: &GridSpec) -> String {
    let mut out = String::with_capacity((spec.width + 1) * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let p = (x, y);
            let c = if spec.is_wall(p) {
                '#'
            } else if p == spec.key_pos {
                'K'
            } else if p == spec.door_pos {
                'D'
            } else if p == spec.goal_pos {
                'G'
            } else if p == spec.start_pos {
                match spec.start_dir {
                    Dir::East => 'S',
                    Dir::North => '^',
                    Dir::South => 'v',
                    Dir::West => '<',
                }
            } else {
                '.'
            };
            out.push(c);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub done: bool,
}

/// Episode reward for reaching the goal after `steps_used` actions: linear decay from 1 to 0.1.
pub fn reward_fn(steps_used: usize, max_steps: usize) -> f64 {
    assert!(
        steps_used <= max_steps,
        "reward_fn: steps_used {steps_used} exceeds max_steps {max_steps}"
    );
    1.0 - 0.9 * (steps_used as f64 / max_steps as f64)
}

/// Pure dynamics without reward bookkeeping. Invalid actions leave the state unchanged.
pub fn transition(spec: &GridSpec, s: &State, a: Action) -> State {
    let mut next = *s;
    match a {
        Action::TurnLeft => next.dir = s.dir.left(),
        Action::TurnRight => next.dir = s.dir.right(),
        Action::Forward => {
            if let Some(front) = s.front(spec.width, spec.height) {
                let blocked = spec.is_wall(front) || (front == spec.door_pos && !s.door_open);
                if !blocked {
                    next.x = front.0;
                    next.y = front.1;
                }
            }
        }
        Action::Pickup => {
            if !s.has_key && s.front(spec.width, spec.height) == Some(spec.key_pos) {
                next.has_key = true;
            }
        }
        Action::Toggle => {
            if s.has_key && s.front(spec.width, spec.height) == Some(spec.door_pos) {
                next.door_open = !s.door_open;
            }
        }
    }
    next
}

/// One environment step taken at time `t` (zero-based).
pub fn step(spec: &GridSpec, s: &State, a: Action, t: usize) -> StepOutcome {
    debug_assert!(spec.contains(s));
    let next_state = transition(spec, s, a);
    let done = spec.is_goal(&next_state);
    let reward = if done {
        reward_fn((t + 1).min(spec.max_steps), spec.max_steps)
    } else {
        0.0
    };
    StepOutcome {
        next_state,
        reward,
        done,
    }
}

/// Actions that change the state, in global action order.
pub fn selectable_actions(spec: &GridSpec, s: &State) -> Vec<Action> {
    Action::ALL
        .into_iter()
        .filter(|&a| transition(spec, s, a) != *s)
        .collect()
}

/// Breadth-first shortest action sequence from `from` to any goal state.
/// Neighbours are expanded in action order, so ties resolve deterministically.
pub fn shortest_path(spec: &GridSpec, from: &State) -> Option<Vec<Action>> {
    shortest_path_with(spec, from, &Action::ALL)
}

/// [`shortest_path`] restricted to a subset of actions.
pub fn shortest_path_with(spec: &GridSpec, from: &State, allowed: &[Action]) -> Option<Vec<Action>> {
    if spec.is_goal(from) {
        return Some(Vec::new());
    }
    let n = state_count(spec);
    let mut parent: Vec<Option<(usize, Action)>> = vec![None; n];
    let mut seen = vec![false; n];
    let start = state_index(from, spec).ok()?;
    seen[start] = true;
    let mut queue = VecDeque::from([*from]);
    while let Some(s) = queue.pop_front() {
        let si = state_index(&s, spec).ok()?;
        for &a in allowed {
            let next = transition(spec, &s, a);
            let ni = state_index(&next, spec).ok()?;
            if seen[ni] {
                continue;
            }
            seen[ni] = true;
            parent[ni] = Some((si, a));
            if spec.is_goal(&next) {
                let mut actions = Vec::new();
                let mut cur = ni;
                while let Some((p, a)) = parent[cur] {
                    actions.push(a);
                    cur = p;
                }
                actions.reverse();
                return Some(actions);
            }
            queue.push_back(next);
        }
    }
    None
}

/// BFS distance (in actions) from `from` to the exact state `to`; goal states are not expanded.
pub fn distance_between(spec: &GridSpec, from: &State, to: &State) -> Option<usize> {
    if from == to {
        return Some(0);
    }
    let n = state_count(spec);
    let mut dist = vec![usize::MAX; n];
    dist[state_index(from, spec).ok()?] = 0;
    let mut queue = VecDeque::from([*from]);
    while let Some(s) = queue.pop_front() {
        let d = dist[state_index(&s, spec).ok()?];
        for a in Action::ALL {
            let next = transition(spec, &s, a);
            let ni = state_index(&next, spec).ok()?;
            if dist[ni] != usize::MAX {
                continue;
            }
            dist[ni] = d + 1;
            if next == *to {
                return Some(d + 1);
            }
            if !spec.is_goal(&next) {
                queue.push_back(next);
            }
        }
    }
    None
}

/// Every state reachable from `from`, goal states included but not expanded.
pub fn reachable_states(spec: &GridSpec, from: &State) -> Vec<State> {
    let n = state_count(spec);
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let Ok(start) = state_index(from, spec) else {
        return out;
    };
    seen[start] = true;
    let mut queue = VecDeque::from([*from]);
    while let Some(s) = queue.pop_front() {
        out.push(s);
        if spec.is_goal(&s) {
            continue;
        }
        for a in Action::ALL {
            let next = transition(spec, &s, a);
            let ni = state_index(&next, spec).expect("transition stays in bounds");
            if !seen[ni] {
                seen[ni] = true;
                queue.push_back(next);
            }
        }
    }
    out
}
