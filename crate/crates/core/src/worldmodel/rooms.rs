use std::collections::VecDeque;

use nalgebra::Vector2;

use super::distance::distance_transform;
use super::floorplan::{CellState, FloorPlan};
use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomSegmentationParams {
    /// Free space closer than this to a non-free cell is cut before labeling (m).
    pub erosion_radius: f64,
    /// Rooms smaller than this after re-growing are dropped to label 0 (m²).
    pub min_room_area: f64,
}

impl Default for RoomSegmentationParams {
    fn default() -> Self {
        Self {
            erosion_radius: 0.4,
            min_room_area: 1.0,
        }
    }
}

/// Per-cell room labels aligned with a floor plan. Label 0 means no room.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    room_count: u32,
    resolution: f64,
    origin: Pose2,
}

impl RoomMap {
    /// A map with every cell unlabeled.
    pub fn empty(plan: &FloorPlan) -> Self {
        Self {
            width: plan.width(),
            height: plan.height(),
            labels: vec![0; plan.width() * plan.height()],
            room_count: 0,
            resolution: plan.resolution(),
            origin: plan.origin(),
        }
    }

    pub fn room_count(&self) -> u32 {
        self.room_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Room id at a world point; 0 outside the grid or on unlabeled cells.
    pub fn room_at(&self, p: &Vector2<f64>) -> u32 {
        let g = self.origin.inverse().transform_point(p) / self.resolution;
        let (c, r) = (g.x.floor(), g.y.floor());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return 0;
        }
        self.label(c as usize, r as usize)
    }

    pub fn room_area(&self, room: u32) -> f64 {
        self.labels.iter().filter(|l| **l == room).count() as f64 * self.resolution * self.resolution
    }
}

fn neighbors4(width: usize, height: usize, i: usize) -> impl Iterator<Item = usize> {
    let (c, r) = (i % width, i / width);
    let mut out = [usize::MAX; 4];
    if c > 0 {
        out[0] = i - 1;
    }
    if c + 1 < width {
        out[1] = i + 1;
    }
    if r > 0 {
        out[2] = i - width;
    }
    if r + 1 < height {
        out[3] = i + width;
    }
    out.into_iter().filter(|&n| n != usize::MAX)
}

/// Relabels nonzero labels to 1..k in first-seen row-major order.
fn canonicalize(labels: &mut [u32]) -> u32 {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let id = *map.entry(*l).or_insert_with(|| {
            next += 1;
            next
        });
        *l = id;
    }
    next
}

/// Splits free space into rooms: erode, label 4-connected cores, grow the
/// cores back over the free cells they reach first, then drop small rooms.
pub fn segment_rooms(plan: &FloorPlan, params: &RoomSegmentationParams) -> RoomMap {
    let (w, h) = (plan.width(), plan.height());
    let free: Vec<bool> = plan.cells().iter().map(|c| *c == CellState::Free).collect();
    let obstacles: Vec<bool> = free.iter().map(|f| !f).collect();
    let clearance = distance_transform(w, h, &obstacles, plan.resolution());
    let core: Vec<bool> = free
        .iter()
        .zip(&clearance)
        .map(|(f, d)| *f && *d > params.erosion_radius)
        .collect();

    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !core[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for n in neighbors4(w, h, i) {
                if core[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }

    // multi-source breadth-first growth over free cells
    queue.extend((0..w * h).filter(|&i| labels[i] != 0));
    while let Some(i) = queue.pop_front() {
        for n in neighbors4(w, h, i) {
            if free[n] && labels[n] == 0 {
                labels[n] = labels[i];
                queue.push_back(n);
            }
        }
    }

    let cell_area = plan.resolution() * plan.resolution();
    let mut counts = vec![0usize; next as usize + 1];
    for l in &labels {
        counts[*l as usize] += 1;
    }
    for l in labels.iter_mut() {
        if *l != 0 && (counts[*l as usize] as f64) * cell_area < params.min_room_area {
            *l = 0;
        }
    }
    let room_count = canonicalize(&mut labels);
    RoomMap {
        width: w,
        height: h,
        labels,
        room_count,
        resolution: plan.resolution(),
        origin: plan.origin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two 4 m x 4 m rooms side by side, 0.1 m walls, joined by a door.
    pub(crate) fn two_rooms(door_width: f64) -> FloorPlan {
        let res = 0.05;
        let mut plan = FloorPlan::filled(172, 88, CellState::Occupied, res, Pose2::identity()).unwrap();
        plan.fill_rect(Vector2::new(0.1, 0.1), Vector2::new(4.1, 4.3), CellState::Free);
        plan.fill_rect(Vector2::new(4.2, 0.1), Vector2::new(8.5, 4.3), CellState::Free);
        let y0 = 2.2 - door_width / 2.0;
        plan.fill_rect(Vector2::new(4.05, y0), Vector2::new(4.25, y0 + door_width), CellState::Free);
        plan
    }

    #[test]
    fn single_room_gets_one_label() {
        let mut plan = FloorPlan::filled(60, 60, CellState::Occupied, 0.05, Pose2::identity()).unwrap();
        plan.fill_rect(Vector2::new(0.1, 0.1), Vector2::new(2.9, 2.9), CellState::Free);
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 1);
        for (i, c) in plan.cells().iter().enumerate() {
            assert_eq!(rooms.labels()[i] == 1, *c == CellState::Free);
        }
    }

    #[test]
    fn narrow_door_splits_rooms() {
        let plan = two_rooms(0.7);
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 2);
        assert_eq!(rooms.room_at(&Vector2::new(2.0, 2.0)), 1);
        assert_eq!(rooms.room_at(&Vector2::new(6.0, 2.0)), 2);
    }

    #[test]
    fn wide_opening_merges_rooms() {
        let plan = two_rooms(2.0);
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 1);
    }

    #[test]
    fn fully_occupied_plan_has_no_rooms() {
        let plan = FloorPlan::filled(20, 20, CellState::Occupied, 0.05, Pose2::identity()).unwrap();
        assert_eq!(segment_rooms(&plan, &RoomSegmentationParams::default()).room_count(), 0);
    }

    #[test]
    fn tiny_rooms_are_dropped() {
        let mut plan = FloorPlan::filled(100, 40, CellState::Occupied, 0.05, Pose2::identity()).unwrap();
        plan.fill_rect(Vector2::new(0.1, 0.1), Vector2::new(1.9, 1.9), CellState::Free);
        plan.fill_rect(Vector2::new(2.5, 0.1), Vector2::new(3.4, 1.0), CellState::Free);
        let rooms = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(rooms.room_count(), 1);
        assert_eq!(rooms.room_at(&Vector2::new(3.0, 0.5)), 0);
    }

    #[test]
    fn labeling_is_deterministic() {
        let plan = two_rooms(0.7);
        let a = segment_rooms(&plan, &RoomSegmentationParams::default());
        let b = segment_rooms(&plan, &RoomSegmentationParams::default());
        assert_eq!(a, b);
    }
}
