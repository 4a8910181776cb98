use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::math::{self, Vec3};
use crate::{Error, Result};

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Trilinear stencil: eight vertex indices and their weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

/// Dense voxel-grid field. Values live on grid vertices; vertex `(i, j, k)`
/// sits at `min + (i, j, k) / (n - 1) * (max - min)`.
///
/// `density` is pre-activation (softplus is applied after interpolation).
/// Color and features are interpolated without activation. The background
/// feature is composited behind the volume with weight `1 - accum_opacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    resolution: [usize; 3],
    bounds: Aabb,
    d_m: usize,
    pub density: Vec<f64>,
    /// Pre-sigmoid color per vertex, interpolated then activated.
    pub color: Vec<f64>,
    pub mask_feature: Vec<f64>,
    pub background_feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointQuery {
    pub density: f64,
    pub color: Vec3,
    pub feature: Vec<f64>,
}

impl GridField {
    /// Grid filled with a constant raw density and zero color/features.
    pub fn new(resolution: [usize; 3], bounds: Aabb, d_m: usize, raw_density: f64) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::Invalid(format!(
                "grid resolution must be at least 2 per axis, got {resolution:?}"
            )));
        }
        if d_m == 0 {
            return Err(Error::Invalid("mask feature dimension must be >= 1".into()));
        }
        if (0..3).any(|a| !(bounds.max[a] > bounds.min[a])) {
            return Err(Error::Invalid("grid bounds are empty".into()));
        }
        let n = resolution.iter().product::<usize>();
        Ok(Self {
            resolution,
            bounds,
            d_m,
            density: vec![raw_density; n],
            color: vec![0.0; 3 * n],
            mask_feature: vec![0.0; d_m * n],
            background_feature: vec![0.0; d_m],
        })
    }

    /// Initialization used for training: constant raw density, color and
    /// features drawn from `Normal(0, std)`.
    pub fn initialized<R: Rng + ?Sized>(
        resolution: [usize; 3],
        bounds: Aabb,
        d_m: usize,
        raw_density: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut g = Self::new(resolution, bounds, d_m, raw_density)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        for v in g.color.iter_mut().chain(g.mask_feature.iter_mut()) {
            *v = normal.sample(rng);
        }
        Ok(g)
    }

    /// Rebuilds a grid from raw parameter buffers (checkpoint loading).
    pub fn from_parts(
        resolution: [usize; 3],
        bounds: Aabb,
        d_m: usize,
        density: Vec<f64>,
        color: Vec<f64>,
        mask_feature: Vec<f64>,
        background_feature: Vec<f64>,
    ) -> Result<Self> {
        let mut g = Self::new(resolution, bounds, d_m, 0.0)?;
        let n = g.vertex_count();
        if density.len() != n || color.len() != 3 * n || mask_feature.len() != d_m * n || background_feature.len() != d_m {
            return Err(Error::Shape("grid parameter buffers do not match resolution".into()));
        }
        g.density = density;
        g.color = color;
        g.mask_feature = mask_feature;
        g.background_feature = background_feature;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.density) || !finite(&self.color) || !finite(&self.mask_feature) || !finite(&self.background_feature) {
            return Err(Error::NonFinite("grid field parameters".into()));
        }
        Ok(())
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }
    pub fn bounds(&self) -> Aabb {
        self.bounds
    }
    pub fn d_m(&self) -> usize {
        self.d_m
    }
    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let ijk = [i, j, k];
        let mut p = [0.0; 3];
        for a in 0..3 {
            let f = ijk[a] as f64 / (self.resolution[a] - 1) as f64;
            p[a] = self.bounds.min[a] + f * (self.bounds.max[a] - self.bounds.min[a]);
        }
        p
    }

    /// Stencil for a point, or `None` outside the bounds.
    #[inline]
    pub fn stencil(&self, p: Vec3) -> Option<Stencil> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let lo = self.bounds.min[a];
            let hi = self.bounds.max[a];
            if !(p[a] >= lo && p[a] <= hi) {
                return None;
            }
            let cells = (self.resolution[a] - 1) as f64;
            let g = (p[a] - lo) / (hi - lo) * cells;
            let i0 = (g.floor() as usize).min(self.resolution[a] - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut index = [0usize; 8];
        let mut weight = [0.0; 8];
        for c in 0..8 {
            let dx = c & 1;
            let dy = (c >> 1) & 1;
            let dz = (c >> 2) & 1;
            index[c] = self.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weight[c] = wx * wy * wz;
        }
        Some(Stencil { index, weight })
    }

    #[inline]
    pub(crate) fn raw_density_at(&self, s: &Stencil) -> f64 {
        let mut v = 0.0;
        for c in 0..8 {
            v += s.weight[c] * self.density[s.index[c]];
        }
        v
    }

    #[inline]
    pub(crate) fn color_at(&self, s: &Stencil) -> Vec3 {
        let mut out = [0.0; 3];
        for c in 0..8 {
            let base = 3 * s.index[c];
            let w = s.weight[c];
            out[0] += w * self.color[base];
            out[1] += w * self.color[base + 1];
            out[2] += w * self.color[base + 2];
        }
        out.map(math::sigmoid)
    }

    #[inline]
    pub(crate) fn accumulate_feature(&self, s: &Stencil, scale: f64, out: &mut [f64]) {
        let d = self.d_m;
        for c in 0..8 {
            let w = scale * s.weight[c];
            let base = d * s.index[c];
            for (o, f) in out.iter_mut().zip(&self.mask_feature[base..base + d]) {
                *o += w * f;
            }
        }
    }

    /// Field value at a point: activated density, color and mask feature.
    /// Points outside the bounds are empty space.
    pub fn query(&self, p: Vec3) -> PointQuery {
        match self.stencil(p) {
            None => PointQuery {
                density: 0.0,
                color: [0.0; 3],
                feature: vec![0.0; self.d_m],
            },
            Some(s) => {
                let mut feature = vec![0.0; self.d_m];
                self.accumulate_feature(&s, 1.0, &mut feature);
                PointQuery {
                    density: math::softplus(self.raw_density_at(&s)),
                    color: self.color_at(&s),
                    feature,
                }
            }
        }
    }
}

/// See [`GridField::query`].
pub fn query_grid(field: &GridField, point: Vec3) -> PointQuery {
    field.query(point)
}
