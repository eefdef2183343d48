//! Pinhole projection, multi-view DLT triangulation and MPJPE.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, RowVector4, Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies on the camera's principal plane")]
    DegenerateProjection,
    #[error("projection matrix must have rank 3")]
    RankDeficient,
    #[error("triangulation needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("camera index {0} is out of range")]
    BadCameraIndex(usize),
    #[error("camera {0} appears in more than one observation")]
    DuplicateCamera(usize),
    #[error("non-finite observation coordinates")]
    NonFinite,
    #[error("triangulated point is at infinity")]
    PointAtInfinity,
    #[error("view geometry is degenerate")]
    DegenerateGeometry,
    #[error("poses have {0} and {1} joints")]
    JointCount(usize, usize),
    #[error("rig file line {line}: {msg}")]
    RigParse { line: usize, msg: String },
}

/// A 3x4 projection matrix mapping homogeneous world points (meters) to
/// homogeneous pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    pub p: Matrix3x4<f64>,
}

impl CameraProjection {
    pub fn new(p: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        if !p.iter().all(|x| x.is_finite()) || p.rank(1e-12 * p.norm().max(1e-300)) != 3 {
            return Err(GeometryError::RankDeficient);
        }
        Ok(Self { p })
    }

    /// Pinhole camera at `eye` looking at `target`, with focal length and
    /// principal point in pixels. Image axes: `u` right, `v` down.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        focal_px: f64,
        principal: (f64, f64),
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or(GeometryError::RankDeficient)?;
        let mut up = Vector3::z();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::y();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -r * eye;
        let k = Matrix3::new(
            focal_px,
            0.0,
            principal.0, //
            0.0,
            focal_px,
            principal.1, //
            0.0,
            0.0,
            1.0,
        );
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.set_column(3, &t);
        Self::new(k * rt)
    }

    pub fn row(&self, k: usize) -> RowVector4<f64> {
        self.p.row(k).into_owned()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { p: self.p * lambda }
    }

    /// Camera centre: the right null vector of `p`.
    pub fn centre(&self) -> Option<Vector3<f64>> {
        let m = self.p.fixed_view::<3, 3>(0, 0).into_owned();
        m.try_inverse().map(|inv| -inv * self.p.column(3))
    }

    /// Principal (optical) axis direction in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        let m = self.p.fixed_view::<3, 3>(0, 0);
        let a = m.row(2).transpose();
        let sign = m.determinant().signum();
        (a * sign).normalize()
    }
}

/// Pixel position of `point`.
pub fn project(
    camera: &CameraProjection,
    point: &Vector3<f64>,
) -> Result<(f64, f64), GeometryError> {
    let x = camera.p * point.push(1.0);
    let scale = camera.p.row(2).norm() * (1.0 + point.norm());
    if x[2].abs() <= 1e-12 * scale {
        return Err(GeometryError::DegenerateProjection);
    }
    Ok((x[0] / x[2], x[1] / x[2]))
}

/// A detected 2D joint in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation2D {
    pub u: f64,
    pub v: f64,
    pub camera_index: usize,
    pub confidence: f64,
}

/// Joint positions in meters; joints with `valid[j] == false` carry no
/// coordinate guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl Pose3D {
    pub fn new(joints: Vec<Vector3<f64>>) -> Self {
        let valid = vec![true; joints.len()];
        Self { joints, valid }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

fn check_views(
    observations: &[Observation2D],
    cameras: &[CameraProjection],
) -> Result<(), GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientViews(observations.len()));
    }
    let mut seen = vec![false; cameras.len()];
    for o in observations {
        if o.camera_index >= cameras.len() {
            return Err(GeometryError::BadCameraIndex(o.camera_index));
        }
        if seen[o.camera_index] {
            return Err(GeometryError::DuplicateCamera(o.camera_index));
        }
        seen[o.camera_index] = true;
        if !(o.u.is_finite() && o.v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
    }
    Ok(())
}

/// Stacks `u p3 - p1` and `v p3 - p2` for every observation.
pub fn build_dlt_matrix(
    observations: &[Observation2D],
    cameras: &[CameraProjection],
) -> Result<DMatrix<f64>, GeometryError> {
    check_views(observations, cameras)?;
    let mut a = DMatrix::zeros(2 * observations.len(), 4);
    for (k, o) in observations.iter().enumerate() {
        let cam = &cameras[o.camera_index];
        let (p1, p2, p3) = (cam.row(0), cam.row(1), cam.row(2));
        a.set_row(2 * k, &(p3 * o.u - p1));
        a.set_row(2 * k + 1, &(p3 * o.v - p2));
    }
    Ok(a)
}

/// Linear triangulation: the right singular vector of the smallest singular
/// value of the DLT matrix, dehomogenized.
pub fn triangulate(
    observations: &[Observation2D],
    cameras: &[CameraProjection],
) -> Result<Vector3<f64>, GeometryError> {
    let mut a = build_dlt_matrix(observations, cameras)?;
    // Row scaling leaves the null space unchanged and equalizes pixel and
    // meter magnitudes.
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateGeometry)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[order[order.len() - 1]];
    if sv[order[1]] <= 1e-12 * largest.max(f64::MIN_POSITIVE) {
        return Err(GeometryError::DegenerateGeometry);
    }
    let row = v_t.row(order[0]);
    let x = Vector4::new(row[0], row[1], row[2], row[3]);
    if x[3].abs() < 1e-12 {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]))
}

/// Mean per-joint position error over joints valid in both poses, or
/// `None` when no joint is jointly valid.
pub fn mpjpe(estimated: &Pose3D, truth: &Pose3D) -> Result<Option<f64>, GeometryError> {
    if estimated.len() != truth.len() {
        return Err(GeometryError::JointCount(estimated.len(), truth.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..truth.len() {
        if estimated.valid[j] && truth.valid[j] {
            sum += (estimated.joints[j] - truth.joints[j]).norm();
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Rig file: header `camera,row,c0,c1,c2,c3`, then one line per matrix row.
pub fn write_rig_csv(cameras: &[CameraProjection]) -> String {
    let mut out = String::from("camera,row,c0,c1,c2,c3\n");
    for (i, cam) in cameras.iter().enumerate() {
        for r in 0..3 {
            let row = cam.p.row(r);
            out.push_str(&format!(
                "{i},{r},{},{},{},{}\n",
                crate::format_float(row[0]),
                crate::format_float(row[1]),
                crate::format_float(row[2]),
                crate::format_float(row[3])
            ));
        }
    }
    out
}

pub fn parse_rig_csv(text: &str) -> Result<Vec<CameraProjection>, GeometryError> {
    let mut rows: Vec<(usize, usize, [f64; 4], usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("camera") {
            continue;
        }
        let err = |msg: &str| GeometryError::RigParse {
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err("expected 6 fields"));
        }
        let camera: usize = fields[0].parse().map_err(|_| err("bad camera index"))?;
        let row: usize = fields[1].parse().map_err(|_| err("bad row index"))?;
        if row > 2 {
            return Err(err("row index must be 0, 1 or 2"));
        }
        let mut c = [0.0; 4];
        for k in 0..4 {
            c[k] = fields[2 + k].parse().map_err(|_| err("bad matrix entry"))?;
        }
        rows.push((camera, row, c, line_no));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut mats = vec![Matrix3x4::<f64>::zeros(); n];
    let mut filled = vec![[false; 3]; n];
    for (camera, row, c, line) in rows {
        if filled[camera][row] {
            return Err(GeometryError::RigParse {
                line,
                msg: format!("camera {camera} row {row} given twice"),
            });
        }
        filled[camera][row] = true;
        mats[camera].set_row(row, &RowVector4::from_row_slice(&c));
    }
    mats.into_iter()
        .zip(filled)
        .enumerate()
        .map(|(i, (p, f))| {
            if f.iter().all(|&x| x) {
                CameraProjection::new(p)
            } else {
                Err(GeometryError::RigParse {
                    line: 0,
                    msg: format!("camera {i} is missing rows"),
                })
            }
        })
        .collect()
}
