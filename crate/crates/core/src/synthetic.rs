//! Analytic ground-truth scenes: flat-shaded spheres and boxes with optional
//! nested parts, ring cameras, exact label maps, mask supervision and a
//! near-orthogonal codebook standing in for text and image embeddings.
//!
//! The scene is z-up. A part is the region of its parent object above a
//! horizontal cut plane, so a part's pixels are always a subset of its
//! parent's pixels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{SceneDataset, Split, ViewRecord};
use crate::distill::MaskSet;
use crate::fields::{CameraModel, Ray};
use crate::inference::TextEmbeddingSet;
use crate::math::{self, Vec3};
use crate::{Error, Result};

pub const CANONICAL_PHRASES: [&str; 4] = ["object", "things", "stuff", "texture"];
const CLASS_NAMES: [&str; 8] = ["apple", "block", "cup", "drum", "egg", "flask", "gem", "hat"];
/// Masks smaller than this many pixels are dropped.
pub const MIN_MASK_PIXELS: usize = 10;
const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: Vec3 },
}

impl Shape {
    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => math::norm3(half),
        }
    }

    fn half_height(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => half[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub class_id: usize,
    pub albedo: Vec3,
}

impl Primitive {
    /// Nearest positive ray parameter of an intersection.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let oc = math::sub(ray.origin, self.center);
        let d = ray.direction;
        match self.shape {
            Shape::Sphere { radius } => {
                let a = math::dot3(d, d);
                let b = math::dot3(oc, d);
                let c = math::dot3(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 0.0)
            }
            Shape::Box { half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-300 {
                        if oc[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-half[a] - oc[a]) / d[a];
                    let tb = (half[a] - oc[a]) / d[a];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t > 0.0)
            }
        }
    }
}

/// Region of a parent object at or above `cut_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub parent: usize,
    pub cut_z: f64,
    pub class_id: usize,
    pub albedo: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_objects: usize,
    pub with_parts: bool,
    pub num_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub camera_distance: f64,
    pub d_s: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_objects: 3,
            with_parts: false,
            num_cameras: 16,
            width: 64,
            height: 64,
            focal_px: 80.0,
            camera_distance: 1.8,
            d_s: 32,
        }
    }
}

/// Instances are numbered objects first, then parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub seed: u64,
    pub objects: Vec<Primitive>,
    pub parts: Vec<Part>,
    pub class_names: Vec<String>,
    /// Class rows followed by one row per canonical phrase.
    pub codebook: Vec<Vec<f64>>,
    pub cameras: Vec<CameraModel>,
}

impl GroundTruthScene {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_instances(&self) -> usize {
        self.objects.len() + self.parts.len()
    }

    pub fn instance_class(&self, instance: usize) -> usize {
        if instance < self.objects.len() {
            self.objects[instance].class_id
        } else {
            self.parts[instance - self.objects.len()].class_id
        }
    }

    pub fn class_embeddings(&self) -> TextEmbeddingSet {
        TextEmbeddingSet {
            names: self.class_names.clone(),
            embeddings: self.codebook[..self.num_classes()].to_vec(),
        }
    }

    pub fn canonical_embeddings(&self) -> TextEmbeddingSet {
        TextEmbeddingSet {
            names: CANONICAL_PHRASES.iter().map(|s| s.to_string()).collect(),
            embeddings: self.codebook[self.num_classes()..].to_vec(),
        }
    }
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

fn hsv(h: f64, s: f64, v: f64) -> Vec3 {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [round32(r + m), round32(g + m), round32(b + m)]
}

/// `rows` orthonormal vectors of length `dim` from seeded Gaussian draws,
/// rounded to `f32`.
pub fn codebook(rows: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if rows > dim {
        return Err(Error::Invalid(format!("cannot build {rows} orthogonal rows in dimension {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de_b00c);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while out.len() < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for u in &out {
                let d = math::dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = math::norm(&v);
        if n > 1e-6 {
            out.push(v.iter().map(|x| round32(x / n)).collect());
        }
    }
    Ok(out)
}

/// Ring cameras looking at the origin, alternating between two elevations.
pub fn ring_cameras(params: &SceneParams) -> Result<Vec<CameraModel>> {
    let r = params.camera_distance;
    let reach = 3f64.sqrt() * 0.5;
    (0..params.num_cameras)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / params.num_cameras as f64;
            let elevation = if k % 2 == 0 { 25f64 } else { 45f64 }.to_radians();
            let eye = [
                r * elevation.cos() * theta.cos(),
                r * elevation.cos() * theta.sin(),
                r * elevation.sin(),
            ];
            CameraModel::look_at(
                eye,
                [0.0; 3],
                [0.0, 0.0, 1.0],
                params.focal_px,
                params.width,
                params.height,
                r - reach,
                r + reach,
            )
        })
        .collect()
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<GroundTruthScene> {
    let n = params.num_objects;
    if !(1..=8).contains(&n) {
        return Err(Error::Invalid(format!("num_objects must be between 1 and 8, got {n}")));
    }
    if !(8..=16).contains(&params.num_cameras) {
        return Err(Error::Invalid(format!("num_cameras must be between 8 and 16, got {}", params.num_cameras)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue0: f64 = rng.random();
    let mut objects: Vec<Primitive> = Vec::with_capacity(n);
    let mut attempts = 0;
    while objects.len() < n {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Placement { seed, attempts: PLACEMENT_ATTEMPTS });
        }
        let shape = if rng.random::<bool>() {
            Shape::Sphere {
                radius: round32(rng.random_range(0.12..0.2)),
            }
        } else {
            Shape::Box {
                half: [
                    round32(rng.random_range(0.08..0.15)),
                    round32(rng.random_range(0.08..0.15)),
                    round32(rng.random_range(0.08..0.15)),
                ],
            }
        };
        let br = shape.bounding_radius();
        let limit = 0.45 - br;
        let center = [
            round32(rng.random_range(-limit..limit)),
            round32(rng.random_range(-limit..limit)),
            round32(rng.random_range(-limit..limit)),
        ];
        let clear = objects.iter().all(|o| {
            math::norm3(math::sub(o.center, center)) > o.shape.bounding_radius() + br + 0.04
        });
        if clear {
            let k = objects.len();
            objects.push(Primitive {
                shape,
                center,
                class_id: k,
                albedo: hsv(hue0 + k as f64 / n as f64, 0.75, 0.95),
            });
        }
    }
    let mut class_names: Vec<String> = CLASS_NAMES[..n].iter().map(|s| s.to_string()).collect();
    let mut parts = Vec::new();
    if params.with_parts {
        for (k, o) in objects.iter().enumerate() {
            let class_id = class_names.len();
            class_names.push(format!("{} top", CLASS_NAMES[k]));
            parts.push(Part {
                parent: k,
                cut_z: round32(o.center[2] + 0.3 * o.shape.half_height()),
                class_id,
                albedo: hsv(hue0 + (k as f64 + 0.5) / n as f64, 0.9, 0.6),
            });
        }
    }
    let codebook = codebook(class_names.len() + CANONICAL_PHRASES.len(), params.d_s, seed)?;
    Ok(GroundTruthScene {
        seed,
        objects,
        parts,
        class_names,
        codebook,
        cameras: ring_cameras(params)?,
    })
}

/// Exact per-pixel render of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GtView {
    pub height: usize,
    pub width: usize,
    /// `H x W x 3`
    pub rgb: Vec<f64>,
    /// Finest instance hit, `-1` for background.
    pub instance_ids: Vec<i32>,
    pub class_ids: Vec<i32>,
}

impl GtView {
    /// Pixels of an instance including any parts nested in it.
    pub fn instance_mask(&self, scene: &GroundTruthScene, instance: usize) -> Vec<bool> {
        let n_obj = scene.objects.len();
        let members: Vec<i32> = std::iter::once(instance)
            .chain(
                scene
                    .parts
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| instance < n_obj && p.parent == instance)
                    .map(|(i, _)| n_obj + i),
            )
            .map(|i| i as i32)
            .collect();
        self.instance_ids.iter().map(|id| members.contains(id)).collect()
    }
}

pub fn render_gt(scene: &GroundTruthScene, camera: &CameraModel) -> GtView {
    let (h, w) = (camera.height(), camera.width());
    let mut rgb = vec![0.0; 3 * h * w];
    let mut instance_ids = vec![-1; h * w];
    let mut class_ids = vec![-1; h * w];
    for r in 0..h {
        for c in 0..w {
            let ray = camera.ray(r, c);
            let hit = scene
                .objects
                .iter()
                .enumerate()
                .filter_map(|(i, o)| o.intersect(&ray).map(|t| (t, i)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((t, obj)) = hit else { continue };
            let z = ray.at(t)[2];
            let part = scene.parts.iter().position(|p| p.parent == obj && z >= p.cut_z);
            let (instance, class, albedo) = match part {
                Some(p) => (scene.objects.len() + p, scene.parts[p].class_id, scene.parts[p].albedo),
                None => (obj, scene.objects[obj].class_id, scene.objects[obj].albedo),
            };
            let u = r * w + c;
            instance_ids[u] = instance as i32;
            class_ids[u] = class as i32;
            rgb[3 * u..3 * u + 3].copy_from_slice(&albedo);
        }
    }
    GtView {
        height: h,
        width: w,
        rgb,
        instance_ids,
        class_ids,
    }
}

fn morph(mask: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    let mut out = mask.to_vec();
    for r in 0..h {
        for c in 0..w {
            let mut any = false;
            let mut all = true;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    any |= mask[rr * w + cc];
                    all &= mask[rr * w + cc];
                }
            }
            out[r * w + c] = if dilate { any } else { all };
        }
    }
    out
}

/// Grows (positive) or shrinks (negative) a mask by `steps` 3x3 operations.
pub fn jitter_mask(mask: &[bool], height: usize, width: usize, steps: i32) -> Vec<bool> {
    (0..steps.unsigned_abs()).fold(mask.to_vec(), |m, _| morph(&m, height, width, steps > 0))
}

/// Noisy copy of a unit vector: `normalize(v + n)` with `n` Gaussian of
/// expected norm `noise` (per-dimension deviation `noise / sqrt(dim)`).
pub fn noisy_embedding<R: Rng + ?Sized>(v: &[f64], noise: f64, rng: &mut R) -> Vec<f64> {
    if noise <= 0.0 {
        return v.to_vec();
    }
    let normal = Normal::new(0.0, noise / (v.len() as f64).sqrt()).expect("finite noise");
    let mut out: Vec<f64> = v.iter().map(|x| x + normal.sample(rng)).collect();
    let n = math::norm(&out);
    out.iter_mut().for_each(|x| *x = round32(*x / n));
    out
}

/// One binary mask per visible instance (whole objects include their parts)
/// with its class embedding. Mask boundaries move by up to `jitter_px`
/// pixels; embeddings get noise of expected norm `embed_noise`.
pub fn make_masksets(
    scene: &GroundTruthScene,
    views: &[GtView],
    jitter_px: usize,
    embed_noise: f64,
    seed: u64,
) -> Result<Vec<MaskSet>> {
    if !(embed_noise >= 0.0) {
        return Err(Error::Invalid(format!("embed_noise must be non-negative, got {embed_noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_736b);
    let mut sets = Vec::with_capacity(views.len());
    for (v, view) in views.iter().enumerate() {
        let (h, w) = (view.height, view.width);
        let mut masks = Vec::new();
        let mut embeddings = Vec::new();
        for inst in 0..scene.num_instances() {
            let mut m = view.instance_mask(scene, inst);
            if jitter_px > 0 {
                let j = jitter_px as i32;
                m = jitter_mask(&m, h, w, rng.random_range(-j..=j));
            }
            if m.iter().filter(|&&b| b).count() < MIN_MASK_PIXELS {
                continue;
            }
            masks.push(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            embeddings.push(noisy_embedding(&scene.codebook[scene.instance_class(inst)], embed_noise, &mut rng));
        }
        sets.push(MaskSet {
            view_id: v,
            height: h,
            width: w,
            masks,
            embeddings,
        });
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionParams {
    pub jitter_px: usize,
    pub embed_noise: f64,
    pub seed: u64,
    /// Every `holdout_every`-th camera (counting from 1) is held out.
    pub holdout_every: usize,
}

impl Default for SupervisionParams {
    fn default() -> Self {
        Self {
            jitter_px: 0,
            embed_noise: 0.0,
            seed: 0,
            holdout_every: 4,
        }
    }
}

/// Complete dataset for a scene: images, supervision, text embeddings and
/// ground-truth maps for every camera.
pub fn build_dataset(scene: &GroundTruthScene, sup: &SupervisionParams) -> Result<SceneDataset> {
    let cam0 = scene.cameras.first().ok_or_else(|| Error::Invalid("scene has no cameras".into()))?;
    let views: Vec<GtView> = scene.cameras.iter().map(|c| render_gt(scene, c)).collect();
    let sets = make_masksets(scene, &views, sup.jitter_px, sup.embed_noise, sup.seed)?;
    let records = views
        .into_iter()
        .zip(sets)
        .enumerate()
        .map(|(k, (gt, masks))| ViewRecord {
            id: k,
            split: if sup.holdout_every > 0 && (k + 1) % sup.holdout_every == 0 {
                Split::Test
            } else {
                Split::Train
            },
            camera: scene.cameras[k].clone(),
            image: gt.rgb,
            masks,
            gt_labels: Some(gt.class_ids),
            gt_instances: Some(gt.instance_ids),
        })
        .collect();
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "synthetic".into());
    metadata.insert("seed".into(), scene.seed.to_string());
    metadata.insert("objects".into(), scene.objects.len().to_string());
    metadata.insert("parts".into(), scene.parts.len().to_string());
    metadata.insert("jitter_px".into(), sup.jitter_px.to_string());
    metadata.insert("embed_noise".into(), sup.embed_noise.to_string());
    metadata.insert("supervision_seed".into(), sup.seed.to_string());
    let ds = SceneDataset {
        scene: format!("synthetic-{}", scene.seed),
        d_s: scene.codebook[0].len(),
        width: cam0.width(),
        height: cam0.height(),
        views: records,
        classes: Some(scene.class_embeddings()),
        canonicals: Some(scene.canonical_embeddings()),
        metadata,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(7, &p).unwrap(), generate_scene(7, &p).unwrap());
        assert_ne!(generate_scene(7, &p).unwrap().objects, generate_scene(8, &p).unwrap().objects);
    }

    #[test]
    fn rejects_bad_object_counts() {
        for n in [0, 9] {
            let p = SceneParams {
                num_objects: n,
                ..SceneParams::default()
            };
            assert!(generate_scene(1, &p).is_err());
        }
    }

    #[test]
    fn codebook_is_near_orthogonal() {
        let cb = codebook(12, 32, 3).unwrap();
        for i in 0..12 {
            assert!((math::norm(&cb[i]) - 1.0).abs() < 1e-6);
            for j in 0..i {
                assert!(math::dot(&cb[i], &cb[j]).abs() < 0.1);
            }
        }
    }

    fn single_sphere(radius: f64) -> (GroundTruthScene, CameraModel) {
        let cam = CameraModel::look_at([0.0, -2.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0], 60.0, 64, 64, 0.5, 4.0).unwrap();
        let scene = GroundTruthScene {
            seed: 0,
            objects: vec![Primitive {
                shape: Shape::Sphere { radius },
                center: [0.0; 3],
                class_id: 0,
                albedo: [1.0, 0.5, 0.25],
            }],
            parts: vec![],
            class_names: vec!["ball".into()],
            codebook: codebook(5, 8, 0).unwrap(),
            cameras: vec![cam.clone()],
        };
        (scene, cam)
    }

    #[test]
    fn sphere_projects_to_analytic_disk() {
        let r = 0.4;
        let (scene, cam) = single_sphere(r);
        let gt = render_gt(&scene, &cam);
        let count = gt.class_ids.iter().filter(|&&c| c == 0).count() as f64;
        let measured = (count / std::f64::consts::PI).sqrt();
        let d: f64 = 2.0;
        let analytic = 60.0 * r / (d * d - r * r).sqrt();
        assert!((measured - analytic).abs() < 1.0, "{measured} vs {analytic}");
        for (i, c) in gt.instance_ids.iter().zip(&gt.class_ids) {
            assert_eq!(*i >= 0, *c >= 0);
        }
    }

    #[test]
    fn looking_away_sees_nothing() {
        let (scene, _) = single_sphere(0.3);
        let away = CameraModel::look_at([0.0, -2.0, 0.0], [0.0, -5.0, 0.0], [0.0, 0.0, 1.0], 60.0, 16, 16, 0.5, 4.0).unwrap();
        let gt = render_gt(&scene, &away);
        assert!(gt.instance_ids.iter().all(|&i| i == -1));
        assert!(gt.rgb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parts_are_strictly_inside_parents() {
        let p = SceneParams {
            with_parts: true,
            ..SceneParams::default()
        };
        let scene = generate_scene(7, &p).unwrap();
        assert_eq!(scene.parts.len(), scene.objects.len());
        for cam in &scene.cameras {
            let gt = render_gt(&scene, cam);
            for (pi, part) in scene.parts.iter().enumerate() {
                let pm = gt.instance_mask(&scene, scene.objects.len() + pi);
                let whole = gt.instance_mask(&scene, part.parent);
                assert!(pm.iter().zip(&whole).all(|(&a, &b)| !a || b));
                let (np, nw) = (pm.iter().filter(|&&b| b).count(), whole.iter().filter(|&&b| b).count());
                if nw > 0 {
                    assert!(np < nw);
                }
            }
        }
    }

    #[test]
    fn noiseless_supervision_is_exact() {
        let scene = generate_scene(7, &SceneParams::default()).unwrap();
        let views: Vec<GtView> = scene.cameras.iter().map(|c| render_gt(&scene, c)).collect();
        let sets = make_masksets(&scene, &views, 0, 0.0, 1).unwrap();
        for (set, gt) in sets.iter().zip(&views) {
            let visible: Vec<usize> = (0..scene.num_instances())
                .filter(|&i| gt.instance_mask(&scene, i).iter().filter(|&&b| b).count() >= MIN_MASK_PIXELS)
                .collect();
            assert_eq!(set.len(), visible.len());
            for (m, &inst) in set.masks.iter().zip(&visible) {
                let exact: Vec<f64> = gt.instance_mask(&scene, inst).iter().map(|&b| b as u8 as f64).collect();
                assert_eq!(m, &exact);
            }
            for (e, &inst) in set.embeddings.iter().zip(&visible) {
                assert_eq!(e, &scene.codebook[scene.instance_class(inst)]);
            }
        }
    }

    #[test]
    fn noisy_embeddings_stay_close() {
        let cb = codebook(1, 32, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let close = (0..1000)
            .filter(|_| math::dot(&noisy_embedding(&cb[0], 0.1, &mut rng), &cb[0]) > 0.9)
            .count();
        assert!(close >= 990, "{close}");
    }

    #[test]
    fn jitter_moves_boundaries() {
        let mut m = vec![false; 100];
        m[55] = true;
        let grown = jitter_mask(&m, 10, 10, 1);
        assert_eq!(grown.iter().filter(|&&b| b).count(), 9);
        assert_eq!(jitter_mask(&grown, 10, 10, -1), m);
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let scene = generate_scene(3, &SceneParams::default()).unwrap();
        let mut ev = crate::metrics::Evaluator::new(scene.num_classes(), 2);
        for cam in &scene.cameras {
            let gt = render_gt(&scene, cam);
            ev.add_view(&gt.class_ids, &gt.class_ids, gt.height, gt.width).unwrap();
        }
        let r = ev.report(&scene.class_names);
        assert_eq!((r.miou, r.mbiou, r.acc), (1.0, 1.0, 1.0));
    }
}
