//! Junction map, movement rules and the 3×3 local observation shared by the
//! single-agent and multi-agent environments.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Position) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn chebyshev(self, other: Position) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Grid moves. The discriminant is the serialized action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::contract(format!("action index {index} out of range 0..5")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

/// One of the four road arms of the junction, named by the border it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    North,
    South,
    West,
    East,
}

/// Cross-shaped junction: a horizontal and a vertical road band of equal
/// width crossing in the middle of a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    height: usize,
    width: usize,
    arm_length: usize,
    arm_width: usize,
    road: Vec<bool>,
    spawn_points: Vec<Position>,
    goal_candidates: Vec<Position>,
}

impl GridLayout {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn arm_length(&self) -> usize {
        self.arm_length
    }

    pub fn arm_width(&self) -> usize {
        self.arm_width
    }

    pub fn contains(&self, pos: Position) -> bool {
        pos.row < self.height && pos.col < self.width
    }

    pub fn is_road(&self, pos: Position) -> bool {
        self.contains(pos) && self.road[pos.row * self.width + pos.col]
    }

    /// Road cells in row-major order.
    pub fn road_cells(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.height)
            .flat_map(move |row| (0..self.width).map(move |col| Position::new(row, col)))
            .filter(move |&p| self.is_road(p))
    }

    /// Road-end cells on the outer border, ordered North, South, West, East.
    pub fn spawn_points(&self) -> &[Position] {
        &self.spawn_points
    }

    pub fn goal_candidates(&self) -> &[Position] {
        &self.goal_candidates
    }

    /// The arm a road cell belongs to; `None` for the central crossing square
    /// and for off-road cells.
    pub fn arm_of(&self, pos: Position) -> Option<Arm> {
        if !self.is_road(pos) {
            return None;
        }
        let lo = self.arm_length;
        let hi = self.arm_length + self.arm_width;
        if pos.row < lo {
            Some(Arm::North)
        } else if pos.row >= hi {
            Some(Arm::South)
        } else if pos.col < lo {
            Some(Arm::West)
        } else if pos.col >= hi {
            Some(Arm::East)
        } else {
            None
        }
    }

    /// Center cell (top-left of the crossing square for even widths).
    pub fn center(&self) -> Position {
        Position::new(self.arm_length, self.arm_length)
    }

    fn neighbor(&self, pos: Position, act: Action) -> Option<Position> {
        let (dr, dc) = act.delta();
        let row = pos.row.checked_add_signed(dr)?;
        let col = pos.col.checked_add_signed(dc)?;
        let next = Position::new(row, col);
        self.is_road(next).then_some(next)
    }
}

/// Builds a `(2·arm_length + arm_width)`-square junction.
pub fn build_junction_layout(arm_length: usize, arm_width: usize) -> Result<GridLayout> {
    if arm_length < 2 {
        return Err(Error::config(format!("arm_length must be >= 2, got {arm_length}")));
    }
    if !(1..=2).contains(&arm_width) {
        return Err(Error::config(format!("arm_width must be 1 or 2, got {arm_width}")));
    }
    let size = 2 * arm_length + arm_width;
    let band = arm_length..arm_length + arm_width;
    let mut road = vec![false; size * size];
    for row in 0..size {
        for col in 0..size {
            road[row * size + col] = band.contains(&row) || band.contains(&col);
        }
    }
    let mut spawn_points = Vec::with_capacity(4 * arm_width);
    spawn_points.extend(band.clone().map(|c| Position::new(0, c)));
    spawn_points.extend(band.clone().map(|c| Position::new(size - 1, c)));
    spawn_points.extend(band.clone().map(|r| Position::new(r, 0)));
    spawn_points.extend(band.clone().map(|r| Position::new(r, size - 1)));
    Ok(GridLayout {
        height: size,
        width: size,
        arm_length,
        arm_width,
        road,
        goal_candidates: spawn_points.clone(),
        spawn_points,
    })
}

/// Moves one cell in the action's direction; blocked moves leave `pos` as is.
pub fn apply_action(pos: Position, act: Action, layout: &GridLayout) -> Result<Position> {
    if !layout.is_road(pos) {
        return Err(Error::contract(format!("position {pos} is not on the road")));
    }
    Ok(layout.neighbor(pos, act).unwrap_or(pos))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellCode {
    OffRoad = 0,
    Road = 1,
    Vehicle = 2,
    Goal = 3,
}

impl CellCode {
    pub const COUNT: usize = 4;

    pub fn symbol(self) -> char {
        match self {
            CellCode::OffRoad => 'x',
            CellCode::Road => '.',
            CellCode::Vehicle => 'v',
            CellCode::Goal => 'g',
        }
    }

    /// Vehicles hide the goal underneath them.
    fn priority(self) -> u8 {
        match self {
            CellCode::OffRoad => 0,
            CellCode::Road => 1,
            CellCode::Goal => 2,
            CellCode::Vehicle => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservation {
    pub own_position: Position,
    /// `mask[i][j]` describes cell `(row - 1 + i, col - 1 + j)`.
    pub mask: [[CellCode; 3]; 3],
    /// `step / max_steps`; only set by the multi-agent environment.
    pub step_fraction: Option<f64>,
}

/// Local view around `focus`. `occupied` lists goal and vehicle markers;
/// when a cell carries several, the vehicle wins. Markers on off-road
/// cells are ignored.
pub fn observe(
    layout: &GridLayout,
    occupied: &[(Position, CellCode)],
    focus: Position,
    step_fraction: Option<f64>,
) -> LocalObservation {
    let mut mask = [[CellCode::OffRoad; 3]; 3];
    for (i, row) in mask.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (Some(r), Some(c)) = ((focus.row + i).checked_sub(1), (focus.col + j).checked_sub(1))
            else {
                continue;
            };
            let pos = Position::new(r, c);
            if !layout.is_road(pos) {
                continue;
            }
            *cell = occupied
                .iter()
                .filter(|(p, _)| *p == pos)
                .map(|&(_, code)| code)
                .fold(CellCode::Road, |acc, code| {
                    if code.priority() > acc.priority() {
                        code
                    } else {
                        acc
                    }
                });
        }
    }
    LocalObservation {
        own_position: focus,
        mask,
        step_fraction,
    }
}

/// Canonical, whitespace-free key: `row,col|<9 mask symbols>` with an
/// `@<fraction>` suffix when a step fraction is present.
pub fn state_key(obs: &LocalObservation) -> String {
    let mut key = format!("{},{}|", obs.own_position.row, obs.own_position.col);
    key.extend(obs.mask.iter().flatten().map(|c| c.symbol()));
    if let Some(frac) = obs.step_fraction {
        key.push('@');
        key.push_str(&frac.to_string());
    }
    key
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;

    fn small() -> GridLayout {
        build_junction_layout(3, 1).unwrap()
    }

    #[test]
    fn width_one_cross_has_thirteen_road_cells() {
        let layout = small();
        assert_eq!((layout.height(), layout.width()), (7, 7));
        assert_eq!(layout.road_cells().count(), 13);
        assert_eq!(layout.spawn_points().len(), 4);
    }

    #[test]
    fn spawn_points_lie_on_border() {
        let layout = build_junction_layout(2, 1).unwrap();
        let n = layout.height();
        for p in layout.spawn_points() {
            assert!(p.row == 0 || p.col == 0 || p.row == n - 1 || p.col == n - 1);
            assert!(layout.is_road(*p));
        }
        assert_eq!(layout.goal_candidates(), layout.spawn_points());
    }

    #[test]
    fn two_lane_cross_dimensions() {
        let layout = build_junction_layout(6, 2).unwrap();
        assert_eq!((layout.height(), layout.width()), (14, 14));
        // Brute-force count of border road cells.
        let border: Vec<_> = layout
            .road_cells()
            .filter(|p| p.row == 0 || p.col == 0 || p.row == 13 || p.col == 13)
            .collect();
        assert_eq!(border.len(), 8);
        assert_eq!(layout.spawn_points().len(), 8);
        for p in &border {
            assert!(layout.spawn_points().contains(p));
        }
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(matches!(build_junction_layout(1, 1), Err(Error::Config(_))));
        assert!(matches!(build_junction_layout(3, 0), Err(Error::Config(_))));
        assert!(matches!(build_junction_layout(3, 3), Err(Error::Config(_))));
    }

    #[test]
    fn road_is_connected() {
        for (len, w) in [(2, 1), (3, 1), (6, 2)] {
            let layout = build_junction_layout(len, w).unwrap();
            let cells: HashSet<_> = layout.road_cells().collect();
            let start = *cells.iter().next().unwrap();
            let mut seen = HashSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                for a in Action::ALL {
                    let q = apply_action(p, a, &layout).unwrap();
                    if seen.insert(q) {
                        queue.push_back(q);
                    }
                }
            }
            assert_eq!(seen, cells);
        }
    }

    #[test]
    fn movement_rules() {
        let layout = small();
        let c = layout.center();
        assert_eq!(apply_action(c, Action::Stay, &layout).unwrap(), c);
        assert_eq!(apply_action(c, Action::Up, &layout).unwrap(), Position::new(2, 3));
        let top = layout.spawn_points()[0];
        assert_eq!(top, Position::new(0, 3));
        assert_eq!(apply_action(top, Action::Up, &layout).unwrap(), top);
        assert_eq!(apply_action(top, Action::Left, &layout).unwrap(), top);
        assert!(matches!(
            apply_action(Position::new(0, 0), Action::Up, &layout),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn apply_action_stays_on_road() {
        let layout = build_junction_layout(6, 2).unwrap();
        for p in layout.road_cells() {
            assert_eq!(apply_action(p, Action::Stay, &layout).unwrap(), p);
            for a in Action::ALL {
                let q = apply_action(p, a, &layout).unwrap();
                assert!(layout.is_road(q));
                assert!(p.manhattan(q) <= 1);
            }
        }
    }

    #[test]
    fn arms_are_assigned_by_border() {
        let layout = build_junction_layout(6, 2).unwrap();
        let arms: Vec<_> = layout.spawn_points().iter().map(|&p| layout.arm_of(p).unwrap()).collect();
        assert_eq!(
            arms,
            [Arm::North, Arm::North, Arm::South, Arm::South, Arm::West, Arm::West, Arm::East, Arm::East]
        );
        assert_eq!(layout.arm_of(Position::new(6, 7)), None);
        assert_eq!(layout.arm_of(Position::new(0, 0)), None);
    }

    #[test]
    fn corner_focus_sees_five_off_road_cells() {
        // Two-lane layout: (0, 6) is a road cell at the top border; its upper
        // row and left column fall off the grid or off the road.
        let layout = build_junction_layout(6, 2).unwrap();
        let obs = observe(&layout, &[], Position::new(0, 6), None);
        let off = obs.mask.iter().flatten().filter(|&&c| c == CellCode::OffRoad).count();
        assert_eq!(off, 5);
        assert_eq!(obs.mask[1][1], CellCode::Road);
    }

    #[test]
    fn empty_road_mask_has_only_road_codes() {
        let layout = small();
        let obs = observe(&layout, &[], Position::new(1, 3), None);
        assert!(obs
            .mask
            .iter()
            .flatten()
            .all(|&c| c == CellCode::OffRoad || c == CellCode::Road));
    }

    #[test]
    fn adjacent_vehicle_and_goal_encoding() {
        let layout = small();
        let focus = layout.center();
        let up = Position::new(2, 3);
        let obs = observe(&layout, &[(up, CellCode::Vehicle)], focus, None);
        assert_eq!(obs.mask[0][1], CellCode::Vehicle);
        assert_eq!(obs.own_position, focus);

        let right = Position::new(3, 4);
        let both = observe(
            &layout,
            &[(right, CellCode::Vehicle), (right, CellCode::Goal)],
            focus,
            None,
        );
        assert_eq!(both.mask[1][2], CellCode::Vehicle);
        let goal = observe(&layout, &[(right, CellCode::Goal)], focus, None);
        assert_eq!(goal.mask[1][2], CellCode::Goal);
    }

    #[test]
    fn state_keys() {
        let layout = small();
        let a = observe(&layout, &[], layout.center(), None);
        let b = observe(&layout, &[], layout.center(), None);
        assert_eq!(state_key(&a), state_key(&b));
        assert_eq!(state_key(&a), "3,3|x.x...x.x");
        let c = observe(&layout, &[(Position::new(2, 3), CellCode::Vehicle)], layout.center(), None);
        assert_ne!(state_key(&a), state_key(&c));
        let d = observe(&layout, &[], layout.center(), Some(0.25));
        assert_eq!(state_key(&d), "3,3|x.x...x.x@0.25");
        assert!(!state_key(&d).contains(char::is_whitespace));
    }

    #[test]
    fn state_key_injective_with_two_vehicles() {
        // Every observation reachable with the focus vehicle, one other
        // vehicle and an optional goal on the 7×7 layout.
        let layout = small();
        let cells: Vec<_> = layout.road_cells().collect();
        let mut by_key = std::collections::HashMap::new();
        for &focus in &cells {
            for other in cells.iter().copied().map(Some).chain([None]) {
                for goal in layout.spawn_points().iter().copied().map(Some).chain([None]) {
                    let mut occ = Vec::new();
                    if let Some(o) = other.filter(|&o| o != focus) {
                        occ.push((o, CellCode::Vehicle));
                    }
                    if let Some(g) = goal.filter(|&g| g != focus) {
                        occ.push((g, CellCode::Goal));
                    }
                    let obs = observe(&layout, &occ, focus, None);
                    let key = state_key(&obs);
                    if let Some(prev) = by_key.insert(key.clone(), obs.clone()) {
                        assert_eq!(prev, obs, "key collision on {key}");
                    }
                }
            }
        }
        assert!(by_key.len() > cells.len());
    }
}
