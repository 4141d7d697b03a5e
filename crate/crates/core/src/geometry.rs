//! Poses, pinhole projection, oriented boxes, ground footprints, overlap
//! measures and rotation averaging.
//!
//! Frames: the world and robot frames are z-up. Camera frames follow the
//! optical convention (x right, y down, z forward). A box's local axes are
//! x along W, y along L and z along H, so an upright box with identity
//! rotation in the world has its height on world z.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2, Vector3};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-6;
/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const DEPTH_EPS: f64 = 1e-9;
/// Near plane used when clipping box edges that cross behind the camera.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("box is entirely behind the camera")]
    FullyBehind,
    #[error("weighted rotation mean is rank deficient (smallest singular value {0:e})")]
    DegenerateMean(f64),
    #[error("rotation average needs at least one rotation with matching positive weights")]
    EmptyAverage,
    #[error("matrix is not a rotation (orthonormality residual {residual:e}, det {det})")]
    NotRotation { residual: f64, det: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("invalid box dimensions {0:?}")]
    InvalidDims([f64; 3]),
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Signed smallest difference `a - b`, wrapped into (-π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

pub fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

pub fn yaw_rotation(theta: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), theta).matrix()
}

/// Planar robot pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// `self ∘ delta`, with `delta` expressed in this pose's frame.
    pub fn compose(&self, delta: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.theta + delta.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative pose taking `self` to `other`, expressed in `self`'s frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        rot2(self.theta) * p + self.translation()
    }

    /// The pose as a rigid transform from this frame into the parent frame.
    pub fn to_pose3(&self) -> Pose3 {
        Pose3 {
            rotation: yaw_rotation(self.theta),
            translation: Vector3::new(self.x, self.y, 0.0),
        }
    }
}

/// Rigid transform `p ↦ R p + t`.
///
/// Camera poses store the world→camera direction, so `transform_point`
/// takes a world point into camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rotation.transpose();
        Pose3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Origin of the transform's source frame expressed in its target frame's
    /// inverse, i.e. the camera center in world coordinates for a world→camera pose.
    pub fn source_origin(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World→camera pose for a robot at `robot` whose camera is mounted with
    /// the robot→camera transform `robot_to_camera`.
    pub fn world_to_camera(robot: &Pose2, robot_to_camera: &Pose3) -> Pose3 {
        robot_to_camera.compose(&robot.to_pose3().inverse())
    }
}

/// Rotation taking robot axes (x forward, y left, z up) to optical axes
/// (x right, y down, z forward).
pub fn robot_to_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// Robot→camera transform for a camera at `position` (robot frame) looking
/// along robot yaw `yaw` with downward `pitch`.
pub fn mounted_camera(position: Vector3<f64>, yaw: f64, pitch: f64) -> Pose3 {
    // camera→robot: yaw about z, then pitch about the camera's left axis
    let body = yaw_rotation(yaw) * *Rotation3::from_axis_angle(&Vector3::y_axis(), pitch).matrix();
    let cam_to_robot = Pose3 {
        rotation: body * robot_to_optical().transpose(),
        translation: position,
    };
    cam_to_robot.inverse()
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    let residual = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if residual > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(GeometryError::NotRotation { residual, det });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = &intrinsics;
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidCamera("K must be upper triangular with K[2][2] = 1".into()));
        }
        Ok(Self {
            intrinsics,
            width,
            height,
        })
    }

    pub fn from_focal(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0), width, height)
    }

    /// Projects a camera-frame point. Depth must already be checked.
    fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let h = self.intrinsics * pc;
        Vector2::new(h.x / h.z, h.y / h.z)
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.x < self.width as f64 && uv.y >= 0.0 && uv.y < self.height as f64
    }
}

/// Projects a world point into the image of a camera with world→camera pose `cam_pose`.
pub fn project_point(p_world: &Vector3<f64>, cam_pose: &Pose3, cam: &CameraModel) -> Result<Vector2<f64>, GeometryError> {
    let pc = cam_pose.transform_point(p_world);
    if pc.z <= DEPTH_EPS {
        return Err(GeometryError::BehindCamera);
    }
    Ok(cam.project_camera_point(&pc))
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox2 {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl BBox2 {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self {
            min: min.inf(&max),
            max: max.sup(&min),
        }
    }

    pub fn from_array(b: [f64; 4]) -> Self {
        Self::new(Vector2::new(b[0], b[1]), Vector2::new(b[2], b[3]))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.min.x, self.min.y, self.max.x, self.max.y]
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x).max(0.0) * (self.max.y - self.min.y).max(0.0)
    }

    pub fn iou(&self, other: &BBox2) -> f64 {
        let lo = self.min.sup(&other.min);
        let hi = self.max.inf(&other.max);
        let inter = (hi.x - lo.x).max(0.0) * (hi.y - lo.y).max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Oriented 3D box. `dims` holds (W, H, L).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3 {
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl OrientedBox3 {
    pub fn new(center: Vector3<f64>, dims: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self, GeometryError> {
        if dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(GeometryError::InvalidDims([dims.x, dims.y, dims.z]));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            center,
            dims,
            rotation,
        })
    }

    /// Gravity-aligned box with yaw `yaw` about world z.
    pub fn upright(center: Vector3<f64>, width: f64, height: f64, length: f64, yaw: f64) -> Self {
        Self {
            center,
            dims: Vector3::new(width, height, length),
            rotation: yaw_rotation(yaw),
        }
    }

    pub fn width(&self) -> f64 {
        self.dims.x
    }

    pub fn height(&self) -> f64 {
        self.dims.y
    }

    pub fn length(&self) -> f64 {
        self.dims.z
    }

    /// Half extents along the local (x, y, z) axes.
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.dims.x, self.dims.z, self.dims.y) * 0.5
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Maps local unit-box coordinates in [-1, 1]³ to the frame the box lives in.
    pub fn local_to_frame(&self, unit: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.rotation * unit.component_mul(&self.half_extents())
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.local_to_frame(&s);
        }
        out
    }

    /// Applies a rigid transform to the box.
    pub fn transformed(&self, pose: &Pose3) -> OrientedBox3 {
        OrientedBox3 {
            center: pose.transform_point(&self.center),
            dims: self.dims,
            rotation: pose.rotation * self.rotation,
        }
    }

    /// World z interval covered by the box, treating it as gravity aligned.
    pub fn vertical_interval(&self) -> (f64, f64) {
        let h = self.height() * 0.5;
        (self.center.z - h, self.center.z + h)
    }
}

/// Fixed surface samples used for frustum tests: the 8 corners plus a 2 × 2
/// grid on each of the 6 faces, in local unit-box coordinates.
pub fn surface_samples() -> [Vector3<f64>; 32] {
    let mut out = [Vector3::zeros(); 32];
    let mut k = 0;
    for i in 0..8 {
        out[k] = Vector3::new(
            if i & 1 == 0 { -1.0 } else { 1.0 },
            if i & 2 == 0 { -1.0 } else { 1.0 },
            if i & 4 == 0 { -1.0 } else { 1.0 },
        );
        k += 1;
    }
    for axis in 0..3 {
        for side in [-1.0, 1.0] {
            for a in [-0.5, 0.5] {
                for b in [-0.5, 0.5] {
                    let mut p = Vector3::zeros();
                    p[axis] = side;
                    p[(axis + 1) % 3] = a;
                    p[(axis + 2) % 3] = b;
                    out[k] = p;
                    k += 1;
                }
            }
        }
    }
    out
}

const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Fraction of the 32 surface samples of `bx` that land inside the image with positive depth.
pub fn in_frustum_fraction(bx: &OrientedBox3, cam_pose: &Pose3, cam: &CameraModel) -> f64 {
    let inside = surface_samples()
        .iter()
        .filter(|s| {
            let pc = cam_pose.transform_point(&bx.local_to_frame(s));
            pc.z > DEPTH_EPS && cam.contains(&cam.project_camera_point(&pc))
        })
        .count();
    inside as f64 / 32.0
}

/// Projects a box into the image. Returns the image-clipped hull of the
/// projected corners and the in-frustum fraction of its surface samples.
/// Box edges crossing behind the camera are clipped at a near plane first.
pub fn project_box_to_image(bx: &OrientedBox3, cam_pose: &Pose3, cam: &CameraModel) -> Result<(BBox2, f64), GeometryError> {
    let corners: Vec<Vector3<f64>> = bx.corners().iter().map(|c| cam_pose.transform_point(c)).collect();
    if corners.iter().all(|c| c.z <= DEPTH_EPS) {
        return Err(GeometryError::FullyBehind);
    }
    let mut pts: Vec<Vector2<f64>> = corners
        .iter()
        .filter(|c| c.z >= NEAR_PLANE)
        .map(|c| cam.project_camera_point(c))
        .collect();
    for &(a, b) in BOX_EDGES.iter() {
        let (pa, pb) = (corners[a], corners[b]);
        if (pa.z - NEAR_PLANE) * (pb.z - NEAR_PLANE) < 0.0 {
            let t = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
            pts.push(cam.project_camera_point(&(pa + (pb - pa) * t)));
        }
    }
    if pts.is_empty() {
        // every corner lies between the image plane and the near plane
        return Err(GeometryError::FullyBehind);
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let clamp = |v: Vector2<f64>| Vector2::new(v.x.clamp(0.0, w), v.y.clamp(0.0, h));
    let bbox = BBox2::new(clamp(lo), clamp(hi));
    Ok((bbox, in_frustum_fraction(bx, cam_pose, cam)))
}

/// Ground-plane rectangle: the box projected onto the world x-y plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint2 {
    pub center: Vector2<f64>,
    /// (half-width, half-length)
    pub extents: Vector2<f64>,
    pub yaw: f64,
}

impl Footprint2 {
    pub fn new(center: Vector2<f64>, extents: Vector2<f64>, yaw: f64) -> Self {
        Self {
            center,
            extents,
            yaw: normalize_angle(yaw),
        }
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let r = rot2(self.yaw);
        let (hx, hy) = (self.extents.x, self.extents.y);
        [
            self.center + r * Vector2::new(-hx, -hy),
            self.center + r * Vector2::new(hx, -hy),
            self.center + r * Vector2::new(hx, hy),
            self.center + r * Vector2::new(-hx, hy),
        ]
    }

    pub fn area(&self) -> f64 {
        4.0 * self.extents.x * self.extents.y
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let local = rot2(-self.yaw) * (p - self.center);
        local.x.abs() <= self.extents.x && local.y.abs() <= self.extents.y
    }

    /// Applies a planar rigid transform.
    pub fn transformed(&self, pose: &Pose2) -> Footprint2 {
        Footprint2::new(pose.transform_point(&self.center), self.extents, self.yaw + pose.theta)
    }
}

/// Yaw of a rotation: the heading of its local x axis projected on the
/// ground, falling back to the local y axis when x is near vertical.
pub fn yaw_of(rotation: &Matrix3<f64>) -> f64 {
    let x = rotation.column(0);
    if x.x.hypot(x.y) >= 1e-6 {
        return normalize_angle(x.y.atan2(x.x));
    }
    // local y rotated by -90° gives the x heading
    let y = rotation.column(1);
    normalize_angle(y.y.atan2(y.x) - PI / 2.0)
}

pub fn footprint(bx: &OrientedBox3) -> Footprint2 {
    Footprint2::new(
        Vector2::new(bx.center.x, bx.center.y),
        Vector2::new(bx.width() * 0.5, bx.length() * 0.5),
        yaw_of(&bx.rotation),
    )
}

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clip of `subject` against the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(&a, &b, &p);
            let dq = cross(&a, &b, &q);
            if dp >= 0.0 {
                output.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                output.push(p + (q - p) * t);
            }
        }
    }
    output
}

pub fn footprint_intersection_area(a: &Footprint2, b: &Footprint2) -> f64 {
    // quick reject on bounding circles
    let ra = a.extents.norm();
    let rb = b.extents.norm();
    if (a.center - b.center).norm_squared() > (ra + rb) * (ra + rb) {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners(), &b.corners())).max(0.0)
}

pub fn iou_footprint(a: &Footprint2, b: &Footprint2) -> f64 {
    let inter = footprint_intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Yaw-decomposed 3D IoU: footprint overlap times vertical overlap over the union volume.
pub fn iou_box3(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let (a0, a1) = a.vertical_interval();
    let (b0, b1) = b.vertical_interval();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection_area(&footprint(a), &footprint(b)) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Weighted chordal mean of rotations, projected back onto SO(3) via SVD.
pub fn rotation_average(rotations: &[Matrix3<f64>], weights: &[f64]) -> Result<Matrix3<f64>, GeometryError> {
    if rotations.is_empty() || rotations.len() != weights.len() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(GeometryError::EmptyAverage);
    }
    let total: f64 = weights.iter().sum();
    let mean = rotations
        .iter()
        .zip(weights)
        .fold(Matrix3::zeros(), |acc, (r, w)| acc + r * (*w / total));
    let svd = mean.svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest <= 1e-9 {
        return Err(GeometryError::DegenerateMean(smallest));
    }
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let d = (u * vt).determinant().signum();
    Ok(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt)
}
