use serde::{Deserialize, Serialize};

use super::SimError;

/// Side of an intersection a vehicle arrives from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Approach {
        Self::ALL[i % 4]
    }

    /// Unit step (drow, dcol) of a vehicle that entered from this side.
    pub(crate) fn heading(self) -> (i32, i32) {
        match self {
            Approach::North => (1, 0),
            Approach::East => (0, -1),
            Approach::South => (-1, 0),
            Approach::West => (0, 1),
        }
    }

    /// Side a vehicle travelling along `heading` arrives from at the next node.
    pub(crate) fn from_heading(heading: (i32, i32)) -> Approach {
        match heading {
            (1, 0) => Approach::North,
            (0, -1) => Approach::East,
            (-1, 0) => Approach::South,
            (0, 1) => Approach::West,
            other => panic!("not a unit heading: {other:?}"),
        }
    }
}

/// Movement chosen by a vehicle when it joins a stop-line queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Turn {
    Straight,
    Left,
    Right,
}

impl Turn {
    pub(crate) fn apply(self, (dr, dc): (i32, i32)) -> (i32, i32) {
        match self {
            Turn::Straight => (dr, dc),
            Turn::Left => (-dc, dr),
            Turn::Right => (dc, -dr),
        }
    }
}

/// Identifies one incoming lane: intersection index, approach and lane within the approach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LaneId {
    pub node: usize,
    pub approach: Approach,
    pub lane: usize,
}

/// A rows x cols grid of four-way signalized intersections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridNetwork {
    pub rows: usize,
    pub cols: usize,
    pub lanes_per_approach: usize,
    /// Vehicles discharged per step from one green lane.
    pub saturation_flow: usize,
    /// Free-flow steps to traverse one link at speed factor 1.
    pub link_travel_steps: u32,
    /// Vehicles a lane holds, counting both queued and in-transit vehicles.
    pub lane_capacity: usize,
}

impl Default for GridNetwork {
    fn default() -> Self {
        GridNetwork::grid(4, 4)
    }
}

impl GridNetwork {
    pub fn grid(rows: usize, cols: usize) -> Self {
        GridNetwork {
            rows,
            cols,
            lanes_per_approach: 1,
            saturation_flow: 2,
            link_travel_steps: 10,
            lane_capacity: 20,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidNetwork(what.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be at least 1");
        }
        if self.lanes_per_approach == 0 {
            return bad("lanes_per_approach must be at least 1");
        }
        if self.saturation_flow == 0 {
            return bad("saturation_flow must be at least 1");
        }
        if self.link_travel_steps == 0 {
            return bad("link_travel_steps must be at least 1");
        }
        if self.lane_capacity == 0 {
            return bad("lane_capacity must be at least 1");
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lanes_per_node(&self) -> usize {
        4 * self.lanes_per_approach
    }

    pub fn node_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node / self.cols, node % self.cols)
    }

    /// Neighbouring node reached by leaving `node` along `heading`, if inside the grid.
    pub fn neighbour(&self, node: usize, heading: (i32, i32)) -> Option<usize> {
        let (r, c) = self.node_coords(node);
        let nr = r as i64 + heading.0 as i64;
        let nc = c as i64 + heading.1 as i64;
        if nr < 0 || nc < 0 || nr >= self.rows as i64 || nc >= self.cols as i64 {
            None
        } else {
            Some(self.node_index(nr as usize, nc as usize))
        }
    }

    /// Boundary lanes where new vehicles enter: every approach whose upstream side lies outside the grid.
    pub fn entry_lanes(&self) -> Vec<LaneId> {
        let mut out = Vec::new();
        for node in 0..self.num_agents() {
            for approach in Approach::ALL {
                // The upstream node is one step against the heading.
                let (dr, dc) = approach.heading();
                if self.neighbour(node, (-dr, -dc)).is_none() {
                    for lane in 0..self.lanes_per_approach {
                        out.push(LaneId { node, approach, lane });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_sixteen_agents() {
        let net = GridNetwork::default();
        assert_eq!(net.num_agents(), 16);
        assert_eq!(net.entry_lanes().len(), 16);
    }

    #[test]
    fn two_by_two_entries() {
        let net = GridNetwork::grid(2, 2);
        assert_eq!(net.entry_lanes().len(), 8);
        // every corner node has exactly two boundary approaches
        for node in 0..4 {
            assert_eq!(net.entry_lanes().iter().filter(|l| l.node == node).count(), 2);
        }
    }

    #[test]
    fn turns_rotate_heading() {
        // southbound: left is east, right is west
        assert_eq!(Turn::Left.apply((1, 0)), (0, 1));
        assert_eq!(Turn::Right.apply((1, 0)), (0, -1));
        assert_eq!(Approach::from_heading((0, 1)), Approach::West);
        for a in Approach::ALL {
            assert_eq!(Approach::from_heading(a.heading()), a);
        }
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(GridNetwork::grid(0, 3).validate().is_err());
    }
}
