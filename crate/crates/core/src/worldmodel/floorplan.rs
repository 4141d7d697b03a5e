use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use super::WorldError;
use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

/// Occupancy thresholds and placement of a floor-plan raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlanMeta {
    pub resolution: f64,
    pub origin: Pose2,
    pub occ_thresh: f64,
    pub free_thresh: f64,
    /// Raster path, relative to the metadata file.
    pub image: Option<PathBuf>,
}

impl FloorPlanMeta {
    pub fn new(resolution: f64, origin: Pose2) -> Self {
        Self {
            resolution,
            origin,
            occ_thresh: 0.35,
            free_thresh: 0.65,
            image: None,
        }
    }

    /// Parses `key: value` lines. `origin` is `[x, y, theta]`.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut resolution = None;
        let mut origin = None;
        let mut occ = None;
        let mut free = None;
        let mut image = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| WorldError::MissingMetadata(format!("line {}: expected `key: value`", n + 1)))?;
            let value = value.trim();
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| WorldError::MissingMetadata(format!("line {}: bad number `{v}`", n + 1)))
            };
            match key.trim() {
                "resolution" => resolution = Some(num(value)?),
                "occ_thresh" => occ = Some(num(value)?),
                "free_thresh" => free = Some(num(value)?),
                "image" => image = Some(PathBuf::from(value)),
                "origin" => {
                    let parts: Vec<f64> = value
                        .trim_matches(|c| c == '[' || c == ']')
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(num)
                        .collect::<Result<_, _>>()?;
                    if parts.len() != 3 {
                        return Err(WorldError::MissingMetadata(format!("line {}: origin needs x, y, theta", n + 1)));
                    }
                    origin = Some(Pose2::new(parts[0], parts[1], parts[2]));
                }
                _ => {}
            }
        }
        let resolution = resolution.ok_or_else(|| WorldError::MissingMetadata("resolution".into()))?;
        if !(resolution > 0.0) {
            return Err(WorldError::MissingMetadata("resolution must be positive".into()));
        }
        Ok(Self {
            resolution,
            origin: origin.ok_or_else(|| WorldError::MissingMetadata("origin".into()))?,
            occ_thresh: occ.ok_or_else(|| WorldError::MissingMetadata("occ_thresh".into()))?,
            free_thresh: free.ok_or_else(|| WorldError::MissingMetadata("free_thresh".into()))?,
            image,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(img) = &self.image {
            s.push_str(&format!("image: {}\n", img.display()));
        }
        s.push_str(&format!("resolution: {}\n", self.resolution));
        s.push_str(&format!("origin: [{}, {}, {}]\n", self.origin.x, self.origin.y, self.origin.theta));
        s.push_str(&format!("occ_thresh: {}\n", self.occ_thresh));
        s.push_str(&format!("free_thresh: {}\n", self.free_thresh));
        s
    }
}

/// Grayscale raster, row 0 at the top as stored in image files.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Occupancy grid of permanent structure. Row 0 is the bottom row (smallest y).
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    width: usize,
    height: usize,
    cells: Vec<CellState>,
    resolution: f64,
    origin: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayHit {
    Clear,
    BlockedAt(Vector2<f64>),
}

impl RayHit {
    pub fn is_clear(&self) -> bool {
        matches!(self, RayHit::Clear)
    }
}

impl FloorPlan {
    pub fn new(width: usize, height: usize, cells: Vec<CellState>, resolution: f64, origin: Pose2) -> Result<Self, WorldError> {
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(WorldError::InvalidPlan(format!("{width}x{height} grid with {} cells", cells.len())));
        }
        if !(resolution > 0.0) {
            return Err(WorldError::InvalidPlan("resolution must be positive".into()));
        }
        Ok(Self {
            width,
            height,
            cells,
            resolution,
            origin,
        })
    }

    pub fn filled(width: usize, height: usize, state: CellState, resolution: f64, origin: Pose2) -> Result<Self, WorldError> {
        Self::new(width, height, vec![state; width * height], resolution, origin)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, col: usize, row: usize) -> CellState {
        self.cells[self.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, state: CellState) {
        let i = self.index(col, row);
        self.cells[i] = state;
    }

    /// Fills every cell whose center lies in the world-frame rectangle.
    pub fn fill_rect(&mut self, min: Vector2<f64>, max: Vector2<f64>, state: CellState) {
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell_center(col, row);
                if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                    self.set(col, row, state);
                }
            }
        }
    }

    /// Continuous grid coordinates (cells) of a world point.
    pub fn to_grid(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.origin.inverse().transform_point(p) / self.resolution
    }

    pub fn world_to_cell(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        let g = self.to_grid(p);
        let (c, r) = (g.x.floor(), g.y.floor());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((c as usize, r as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vector2<f64> {
        self.origin
            .transform_point(&(Vector2::new(col as f64 + 0.5, row as f64 + 0.5) * self.resolution))
    }

    pub fn state_at(&self, p: &Vector2<f64>) -> Option<CellState> {
        self.world_to_cell(p).map(|(c, r)| self.get(c, r))
    }

    pub fn is_free(&self, p: &Vector2<f64>) -> bool {
        self.state_at(p) == Some(CellState::Free)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |r| (0..self.width).map(move |c| (c, r)))
            .filter(move |&(c, r)| self.get(c, r) == CellState::Free)
    }

    /// Walks the grid cells crossed by the segment and reports the center of
    /// the first occupied cell. At exact corner crossings both side cells are
    /// checked, which keeps the test symmetric in its endpoints.
    pub fn raycast(&self, from: &Vector2<f64>, to: &Vector2<f64>) -> Result<RayHit, WorldError> {
        let (c0, r0) = self.world_to_cell(from).ok_or(WorldError::OutOfBounds)?;
        let (c1, r1) = self.world_to_cell(to).ok_or(WorldError::OutOfBounds)?;
        let blocked = |c: i64, r: i64| -> Option<RayHit> {
            if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
                return None;
            }
            let (c, r) = (c as usize, r as usize);
            (self.get(c, r) == CellState::Occupied).then(|| RayHit::BlockedAt(self.cell_center(c, r)))
        };
        let (mut c, mut r) = (c0 as i64, r0 as i64);
        let (c1, r1) = (c1 as i64, r1 as i64);
        if let Some(hit) = blocked(c, r) {
            return Ok(hit);
        }
        let g0 = self.to_grid(from);
        let g1 = self.to_grid(to);
        let d = g1 - g0;
        let step_c: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_r: i64 = if d.y > 0.0 { 1 } else { -1 };
        let t_delta_c = if d.x != 0.0 { (1.0 / d.x).abs() } else { f64::INFINITY };
        let t_delta_r = if d.y != 0.0 { (1.0 / d.y).abs() } else { f64::INFINITY };
        let boundary = |g: f64, cell: i64, step: i64| if step > 0 { cell as f64 + 1.0 - g } else { g - cell as f64 };
        let mut t_max_c = if d.x != 0.0 { boundary(g0.x, c, step_c) * t_delta_c } else { f64::INFINITY };
        let mut t_max_r = if d.y != 0.0 { boundary(g0.y, r, step_r) * t_delta_r } else { f64::INFINITY };
        let max_steps = (c1 - c).unsigned_abs() + (r1 - r).unsigned_abs() + 2;
        for _ in 0..max_steps {
            if c == c1 && r == r1 {
                return Ok(RayHit::Clear);
            }
            if (t_max_c - t_max_r).abs() <= 1e-12 {
                if let Some(hit) = blocked(c + step_c, r).or_else(|| blocked(c, r + step_r)) {
                    return Ok(hit);
                }
                c += step_c;
                r += step_r;
                t_max_c += t_delta_c;
                t_max_r += t_delta_r;
            } else if t_max_c < t_max_r {
                c += step_c;
                t_max_c += t_delta_c;
            } else {
                r += step_r;
                t_max_r += t_delta_r;
            }
            if let Some(hit) = blocked(c, r) {
                return Ok(hit);
            }
        }
        Ok(RayHit::Clear)
    }

    /// Classifies a raster: normalized value ≤ occ_thresh is occupied,
    /// ≥ free_thresh is free, anything between is unknown.
    pub fn from_raster(raster: &GrayRaster, meta: &FloorPlanMeta) -> Result<Self, WorldError> {
        if raster.width == 0 || raster.height == 0 || raster.pixels.len() != raster.width * raster.height {
            return Err(WorldError::MalformedImage(format!(
                "{}x{} raster with {} pixels",
                raster.width,
                raster.height,
                raster.pixels.len()
            )));
        }
        if meta.occ_thresh > meta.free_thresh {
            return Err(WorldError::MissingMetadata("occ_thresh exceeds free_thresh".into()));
        }
        let mut cells = Vec::with_capacity(raster.pixels.len());
        for row in 0..raster.height {
            let img_row = raster.height - 1 - row;
            for col in 0..raster.width {
                let v = raster.pixels[img_row * raster.width + col] as f64 / 255.0;
                cells.push(if v <= meta.occ_thresh {
                    CellState::Occupied
                } else if v >= meta.free_thresh {
                    CellState::Free
                } else {
                    CellState::Unknown
                });
            }
        }
        Self::new(raster.width, raster.height, cells, meta.resolution, meta.origin)
    }

    pub fn to_raster(&self) -> GrayRaster {
        let mut pixels = vec![0u8; self.width * self.height];
        for row in 0..self.height {
            let img_row = self.height - 1 - row;
            for col in 0..self.width {
                pixels[img_row * self.width + col] = match self.get(col, row) {
                    CellState::Free => 254,
                    CellState::Occupied => 0,
                    CellState::Unknown => 128,
                };
            }
        }
        GrayRaster {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Loads a floor plan from its metadata file and the raster it names.
    pub fn load(meta_path: &Path) -> Result<Self, WorldError> {
        let text = fs::read_to_string(meta_path).map_err(|e| WorldError::Io(format!("{}: {e}", meta_path.display())))?;
        let meta = FloorPlanMeta::parse(&text)?;
        let image = meta
            .image
            .as_ref()
            .ok_or_else(|| WorldError::MissingMetadata("image".into()))?;
        let image_path = meta_path.parent().unwrap_or(Path::new(".")).join(image);
        let img = image::open(&image_path)
            .map_err(|e| WorldError::MalformedImage(format!("{}: {e}", image_path.display())))?
            .into_luma8();
        let raster = GrayRaster {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.into_raw(),
        };
        Self::from_raster(&raster, &meta)
    }

    /// Writes `<stem>.pgm` and `<stem>.yaml` next to each other.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf, WorldError> {
        let raster = self.to_raster();
        let pgm_name = format!("{stem}.pgm");
        let mut bytes = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
        bytes.extend_from_slice(&raster.pixels);
        let io = |e: std::io::Error| WorldError::Io(format!("{}: {e}", dir.display()));
        fs::write(dir.join(&pgm_name), bytes).map_err(io)?;
        let meta = FloorPlanMeta {
            image: Some(PathBuf::from(&pgm_name)),
            ..FloorPlanMeta::new(self.resolution, self.origin)
        };
        let meta_path = dir.join(format!("{stem}.yaml"));
        fs::write(&meta_path, meta.to_text()).map_err(io)?;
        Ok(meta_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(res: f64) -> FloorPlanMeta {
        FloorPlanMeta::new(res, Pose2::identity())
    }

    #[test]
    fn white_raster_is_free() {
        let r = GrayRaster {
            width: 10,
            height: 10,
            pixels: vec![255; 100],
        };
        let plan = FloorPlan::from_raster(&r, &meta(0.05)).unwrap();
        assert_eq!(plan.free_cells().count(), 100);
        let black = GrayRaster { pixels: vec![0; 100], ..r };
        let plan = FloorPlan::from_raster(&black, &meta(0.05)).unwrap();
        assert!(plan.cells().iter().all(|c| *c == CellState::Occupied));
    }

    #[test]
    fn checkerboard_alternates() {
        let (w, h) = (6, 4);
        let pixels = (0..w * h)
            .map(|i| if (i % w + i / w) % 2 == 0 { 0 } else { 255 })
            .collect();
        let r = GrayRaster { width: w, height: h, pixels };
        let m = FloorPlanMeta {
            occ_thresh: 0.45,
            free_thresh: 0.55,
            ..meta(1.0)
        };
        let plan = FloorPlan::from_raster(&r, &m).unwrap();
        let occupied = plan.cells().iter().filter(|c| **c == CellState::Occupied).count();
        assert_eq!(occupied, 12);
        assert_eq!(plan.free_cells().count(), 12);
        // image rows flip: image (0,0) is black and maps to grid row h-1
        assert_eq!(plan.get(0, h - 1), CellState::Occupied);
        assert_eq!(plan.get(1, h - 1), CellState::Free);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let r = GrayRaster {
            width: 3,
            height: 3,
            pixels: vec![0; 4],
        };
        assert!(matches!(FloorPlan::from_raster(&r, &meta(1.0)), Err(WorldError::MalformedImage(_))));
        assert!(matches!(FloorPlanMeta::parse("resolution: 0.05\n"), Err(WorldError::MissingMetadata(_))));
    }

    #[test]
    fn metadata_round_trips_through_text() {
        let m = FloorPlanMeta {
            image: Some(PathBuf::from("plan.pgm")),
            ..FloorPlanMeta::new(0.05, Pose2::new(-1.0, 2.5, 0.1))
        };
        assert_eq!(FloorPlanMeta::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn save_and_load_preserve_cells() {
        let mut plan = FloorPlan::filled(8, 5, CellState::Free, 0.1, Pose2::new(1.0, -1.0, 0.0)).unwrap();
        plan.set(2, 3, CellState::Occupied);
        plan.set(7, 0, CellState::Unknown);
        let dir = tempfile::tempdir().unwrap();
        let meta_path = plan.save(dir.path(), "plan").unwrap();
        assert_eq!(FloorPlan::load(&meta_path).unwrap(), plan);
    }

    #[test]
    fn cell_lookup_respects_origin() {
        let plan = FloorPlan::filled(10, 10, CellState::Free, 0.5, Pose2::new(-2.0, -2.0, 0.0)).unwrap();
        assert_eq!(plan.world_to_cell(&Vector2::new(-1.9, -1.9)), Some((0, 0)));
        assert_eq!(plan.world_to_cell(&Vector2::new(2.9, 0.1)), Some((9, 4)));
        assert_eq!(plan.world_to_cell(&Vector2::new(3.1, 0.0)), None);
        let c = plan.cell_center(0, 0);
        assert!((c - Vector2::new(-1.75, -1.75)).norm() < 1e-12);
    }

    fn walled() -> FloorPlan {
        // 4 m x 2 m, wall at x in [2.0, 2.1)
        let mut plan = FloorPlan::filled(40, 20, CellState::Free, 0.1, Pose2::identity()).unwrap();
        for r in 0..20 {
            plan.set(20, r, CellState::Occupied);
        }
        plan
    }

    #[test]
    fn raycast_cases() {
        let plan = walled();
        let a = Vector2::new(0.5, 0.5);
        assert_eq!(plan.raycast(&a, &Vector2::new(1.5, 1.7)).unwrap(), RayHit::Clear);
        assert_eq!(plan.raycast(&a, &a).unwrap(), RayHit::Clear);
        let b = Vector2::new(3.5, 1.5);
        match plan.raycast(&a, &b).unwrap() {
            RayHit::BlockedAt(p) => {
                // analytic wall entry at x = 2.0
                let t = (2.0 - a.x) / (b.x - a.x);
                let analytic = a + (b - a) * t;
                assert!((p - analytic).norm() <= 0.1 * 2f64.sqrt());
            }
            RayHit::Clear => panic!("ray through wall reported clear"),
        }
        assert!(matches!(plan.raycast(&a, &Vector2::new(9.0, 0.0)), Err(WorldError::OutOfBounds)));
    }

    #[test]
    fn diagonal_corner_crossing_is_symmetric() {
        let mut plan = FloorPlan::filled(4, 4, CellState::Free, 1.0, Pose2::identity()).unwrap();
        plan.set(2, 1, CellState::Occupied);
        let a = Vector2::new(0.5, 0.5);
        let b = Vector2::new(3.5, 3.5);
        assert_eq!(plan.raycast(&a, &b).unwrap().is_clear(), plan.raycast(&b, &a).unwrap().is_clear());
        assert!(!plan.raycast(&a, &b).unwrap().is_clear());
    }
}
