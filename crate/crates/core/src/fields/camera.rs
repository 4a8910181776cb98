use rand::Rng;

use crate::math::{self, Vec3};
use crate::{Error, Result};

/// Pinhole camera. Looks down its local -z axis with +y up; `rotation` maps
/// camera-frame directions to world directions and `translation` is the
/// camera center in world units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
    focal_px: f64,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
}

impl CameraModel {
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: Vec3,
        focal_px: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if !rtr.is_finite() || (rtr - expected).abs() > 1e-9 {
                    return Err(Error::Invalid("camera rotation is not orthonormal".into()));
                }
            }
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("camera translation is not finite".into()));
        }
        if !(focal_px > 0.0 && focal_px.is_finite()) {
            return Err(Error::Invalid(format!("focal_px must be positive, got {focal_px}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("camera image size must be positive".into()));
        }
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(Error::Invalid(format!(
                "camera clip range must satisfy 0 < near < far, got near={near} far={far}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
            focal_px,
            width,
            height,
            near,
            far,
        })
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal_px: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let back = math::normalize3(math::sub(eye, target));
        let right = math::normalize3(math::cross(up, back));
        let true_up = math::cross(back, right);
        // Columns are the camera axes expressed in world coordinates.
        let rotation = [
            [right[0], true_up[0], back[0]],
            [right[1], true_up[1], back[1]],
            [right[2], true_up[2], back[2]],
        ];
        Self::new(rotation, eye, focal_px, width, height, near, far)
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }
    pub fn translation(&self) -> Vec3 {
        self.translation
    }
    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn near(&self) -> f64 {
        self.near
    }
    pub fn far(&self) -> f64 {
        self.far
    }
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same pose and intrinsics with a different clip range.
    pub fn with_clip(&self, near: f64, far: f64) -> Result<Self> {
        Self::new(
            self.rotation,
            self.translation,
            self.focal_px,
            self.width,
            self.height,
            near,
            far,
        )
    }

    fn to_world(&self, d: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let q = math::sub(p, self.translation);
        let r = &self.rotation;
        [
            r[0][0] * q[0] + r[1][0] * q[1] + r[2][0] * q[2],
            r[0][1] * q[0] + r[1][1] * q[1] + r[2][1] * q[2],
            r[0][2] * q[0] + r[1][2] * q[1] + r[2][2] * q[2],
        ]
    }

    /// Projects a world point to continuous pixel coordinates `(x, y)` where
    /// pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)`. Also
    /// returns the depth along the optical axis.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let c = self.to_camera(p);
        let depth = -c[2];
        let x = self.focal_px * c[0] / depth + self.width as f64 / 2.0;
        let y = -self.focal_px * c[1] / depth + self.height as f64 / 2.0;
        (x, y, depth)
    }

    /// Ray through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let x = (col as f64 + 0.5 - self.width as f64 / 2.0) / self.focal_px;
        let y = -(row as f64 + 0.5 - self.height as f64 / 2.0) / self.focal_px;
        let direction = math::normalize3(self.to_world([x, y, -1.0]));
        Ray {
            origin: self.translation,
            direction,
            pixel: (row, col),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.direction, t))
    }
}

/// One ray per pixel center, row-major.
pub fn generate_rays(camera: &CameraModel) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(camera.pixel_count());
    for row in 0..camera.height {
        for col in 0..camera.width {
            rays.push(camera.ray(row, col));
        }
    }
    rays
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub t: f64,
    pub delta: f64,
}

/// Stratified samples over `[near, far]`: bin midpoints when `jitter` is off,
/// a uniform offset inside each bin when on.
pub fn sample_ray<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n_samples: usize,
    jitter: bool,
    rng: &mut R,
) -> Vec<RaySample> {
    let mut ts = vec![0.0; n_samples];
    let mut deltas = vec![0.0; n_samples];
    fill_samples(near, far, jitter, rng, &mut ts, &mut deltas);
    ts.into_iter()
        .zip(deltas)
        .map(|(t, delta)| RaySample { t, delta })
        .collect()
}

pub(crate) fn fill_samples<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    jitter: bool,
    rng: &mut R,
    ts: &mut [f64],
    deltas: &mut [f64],
) {
    let n = ts.len();
    let bin = (far - near) / n as f64;
    for (i, t) in ts.iter_mut().enumerate() {
        let u = if jitter { rng.random::<f64>() } else { 0.5 };
        *t = near + (i as f64 + u) * bin;
    }
    for i in 0..n {
        deltas[i] = if i + 1 < n { ts[i + 1] - ts[i] } else { bin };
    }
}
