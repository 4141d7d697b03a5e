//! Floor plan, rooms, the semantic object map and the object probability map.

mod distance;
mod floorplan;
mod objects;
mod rooms;

use thiserror::Error;

pub use distance::distance_transform;
pub use floorplan::{CellState, FloorPlan, FloorPlanMeta, GrayRaster, RayHit};
pub use objects::{
    assign_rooms, min_eigenvalue, object_visible, MapObject, ObjectGaussian, ObjectMap, ObjectProbabilityMap,
    COV_EPSILON,
};
pub use rooms::{segment_rooms, RoomMap, RoomSegmentationParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("malformed floor-plan image: {0}")]
    MalformedImage(String),
    #[error("missing or invalid floor-plan metadata: {0}")]
    MissingMetadata(String),
    #[error("invalid floor plan: {0}")]
    InvalidPlan(String),
    #[error("point outside the floor-plan grid")]
    OutOfBounds,
    #[error("duplicate object id {0}")]
    DuplicateId(u64),
    #[error("covariance is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("i/o error: {0}")]
    Io(String),
}
