use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rle::{decode_mask_rle, encode_mask_rle};
use super::tensor::Tensor;
use crate::distill::MaskSet;
use crate::fields::CameraModel;
use crate::inference::TextEmbeddingSet;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub id: usize,
    pub split: Split,
    pub camera: CameraModel,
    /// `H x W x 3`, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub masks: MaskSet,
    /// Class per pixel, `-1` for background.
    pub gt_labels: Option<Vec<i32>>,
    /// Instance per pixel, `-1` for background.
    pub gt_instances: Option<Vec<i32>>,
}

/// Posed images with mask supervision, optional text embeddings and
/// optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub scene: String,
    pub d_s: usize,
    pub width: usize,
    pub height: usize,
    pub views: Vec<ViewRecord>,
    pub classes: Option<TextEmbeddingSet>,
    pub canonicals: Option<TextEmbeddingSet>,
    /// Free-form provenance (generator settings, model identifiers).
    pub metadata: BTreeMap<String, String>,
}

impl SceneDataset {
    pub fn views_in(&self, split: Split) -> impl Iterator<Item = &ViewRecord> {
        self.views.iter().filter(move |v| v.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        let hw = self.width * self.height;
        if hw == 0 || self.d_s == 0 {
            return Err(Error::Invalid("dataset dimensions must be positive".into()));
        }
        for v in &self.views {
            let cam = &v.camera;
            if cam.width() != self.width || cam.height() != self.height {
                return Err(Error::Shape(format!(
                    "view {}: camera is {}x{}, dataset is {}x{}",
                    v.id,
                    cam.width(),
                    cam.height(),
                    self.width,
                    self.height
                )));
            }
            if v.image.len() != 3 * hw {
                return Err(Error::Shape(format!("view {}: image has {} values, expected {}", v.id, v.image.len(), 3 * hw)));
            }
            if v.masks.view_id != v.id || v.masks.height != self.height || v.masks.width != self.width {
                return Err(Error::Shape(format!("view {}: mask set does not match the view", v.id)));
            }
            v.masks.validate()?;
            if let Some(j) = v.masks.embeddings.iter().position(|e| e.len() != self.d_s) {
                return Err(Error::Shape(format!(
                    "view {} mask {j}: embedding has dimension {}, expected {}",
                    v.id,
                    v.masks.embeddings[j].len(),
                    self.d_s
                )));
            }
            for (name, gt) in [("gt_labels", &v.gt_labels), ("gt_instances", &v.gt_instances)] {
                if gt.as_ref().is_some_and(|g| g.len() != hw) {
                    return Err(Error::Shape(format!("view {}: {name} has the wrong size", v.id)));
                }
            }
        }
        for set in [&self.classes, &self.canonicals].into_iter().flatten() {
            set.validate()?;
            if set.dim() != self.d_s {
                return Err(Error::Shape(format!("text embeddings have dimension {}, expected {}", set.dim(), self.d_s)));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    scene: String,
    d_s: usize,
    width: usize,
    height: usize,
    #[serde(default)]
    text_embeddings: Option<TextRecord>,
    views: Vec<ViewEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TextRecord {
    /// Rows: classes, then canonical phrases.
    file: String,
    class_names: Vec<String>,
    canonical_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CameraEntry {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    focal_px: f64,
    near: f64,
    far: f64,
}

#[derive(Serialize, Deserialize)]
struct MaskEntry {
    rle: String,
    embedding: String,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    id: usize,
    split: Split,
    camera: CameraEntry,
    image: String,
    masks: Vec<MaskEntry>,
    #[serde(default)]
    gt_labels: Option<String>,
    #[serde(default)]
    gt_instances: Option<String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the manifest and every referenced file under `dir`.
pub fn save_dataset(ds: &SceneDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let mut views = Vec::with_capacity(ds.views.len());
    for v in &ds.views {
        let base = format!("views/{:03}", v.id);
        let image = format!("{base}/image.mft");
        write_file(&dir.join(&image), &Tensor::f32_from(vec![ds.height, ds.width, 3], &v.image).encode())?;
        let mut masks = Vec::with_capacity(v.masks.len());
        for (j, (m, e)) in v.masks.masks.iter().zip(&v.masks.embeddings).enumerate() {
            if m.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::Invalid(format!("view {} mask {j} is not binary", v.id)));
            }
            let bits: Vec<bool> = m.iter().map(|&x| x == 1.0).collect();
            let rle = format!("{base}/mask_{j:03}.rle");
            let emb = format!("{base}/mask_{j:03}.mft");
            write_file(&dir.join(&rle), &encode_mask_rle(&bits, ds.height, ds.width))?;
            write_file(&dir.join(&emb), &Tensor::f32_from(vec![ds.d_s], e).encode())?;
            masks.push(MaskEntry { rle, embedding: emb });
        }
        let gt_file = |name: &str, data: &Option<Vec<i32>>| -> Result<Option<String>> {
            data.as_ref()
                .map(|d| {
                    let rel = format!("{base}/{name}.mft");
                    write_file(&dir.join(&rel), &Tensor::i32(vec![ds.height, ds.width], d.clone()).encode())?;
                    Ok(rel)
                })
                .transpose()
        };
        let gt_labels = gt_file("labels", &v.gt_labels)?;
        let gt_instances = gt_file("instances", &v.gt_instances)?;
        let cam = &v.camera;
        views.push(ViewEntry {
            id: v.id,
            split: v.split,
            camera: CameraEntry {
                rotation: *cam.rotation(),
                translation: cam.translation(),
                focal_px: cam.focal_px(),
                near: cam.near(),
                far: cam.far(),
            },
            image,
            masks,
            gt_labels,
            gt_instances,
        });
    }
    let text_embeddings = match (&ds.classes, &ds.canonicals) {
        (None, None) => None,
        (classes, canonicals) => {
            let empty = Vec::new();
            let rows: Vec<f64> = [classes, canonicals]
                .into_iter()
                .flat_map(|s| s.as_ref().map_or(&empty, |s| &s.embeddings))
                .flatten()
                .copied()
                .collect();
            let names = |s: &Option<TextEmbeddingSet>| s.as_ref().map_or_else(Vec::new, |s| s.names.clone());
            let file = "text_embeddings.mft".to_string();
            let n = rows.len() / ds.d_s;
            write_file(&dir.join(&file), &Tensor::f32_from(vec![n, ds.d_s], &rows).encode())?;
            Some(TextRecord {
                file,
                class_names: names(classes),
                canonical_names: names(canonicals),
            })
        }
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        scene: ds.scene.clone(),
        d_s: ds.d_s,
        width: ds.width,
        height: ds.height,
        text_embeddings,
        views,
        metadata: ds.metadata.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn read_f64(path: &Path, dims: &[usize]) -> Result<Vec<f64>> {
    let t = Tensor::read(path)?;
    if t.dims != dims {
        return Err(Error::format(path, format!("tensor has dims {:?}, expected {:?}", t.dims, dims)));
    }
    t.to_f64().ok_or_else(|| Error::format(path, "expected a floating-point tensor"))
}

fn read_i32(path: &Path, dims: &[usize]) -> Result<Vec<i32>> {
    let t = Tensor::read(path)?;
    if t.dims != dims {
        return Err(Error::format(path, format!("tensor has dims {:?}, expected {:?}", t.dims, dims)));
    }
    t.as_i32().map(<[i32]>::to_vec).ok_or_else(|| Error::format(path, "expected an i32 tensor"))
}

/// Reads a dataset written by [`save_dataset`] (or any conforming producer).
/// Every failure names the offending file.
pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported manifest version {} (expected {MANIFEST_VERSION})", m.version),
        ));
    }
    let (h, w, d_s) = (m.height, m.width, m.d_s);
    let resolve = |rel: &str| -> PathBuf { dir.join(rel) };
    let mut views = Vec::with_capacity(m.views.len());
    for v in &m.views {
        let c = &v.camera;
        let camera = CameraModel::new(c.rotation, c.translation, c.focal_px, w, h, c.near, c.far)
            .map_err(|e| Error::format(&manifest_path, format!("view {}: {e}", v.id)))?;
        let image = read_f64(&resolve(&v.image), &[h, w, 3])?;
        let mut masks = Vec::with_capacity(v.masks.len());
        let mut embeddings = Vec::with_capacity(v.masks.len());
        for (j, entry) in v.masks.iter().enumerate() {
            let rle_path = resolve(&entry.rle);
            let bytes = std::fs::read(&rle_path).map_err(|e| Error::io(&rle_path, e))?;
            let (mh, mw, bits) = decode_mask_rle(&bytes).map_err(|msg| Error::format(&rle_path, msg))?;
            if (mh, mw) != (h, w) {
                return Err(Error::format(
                    &rle_path,
                    format!("view {} mask {j} is {mh}x{mw}, images are {h}x{w}", v.id),
                ));
            }
            masks.push(bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect());
            let emb_path = resolve(&entry.embedding);
            let t = Tensor::read(&emb_path)?;
            if t.dims != [d_s] {
                return Err(Error::format(
                    &emb_path,
                    format!("view {} mask {j}: embedding has dims {:?}, expected [{d_s}]", v.id, t.dims),
                ));
            }
            embeddings.push(t.to_f64().ok_or_else(|| Error::format(&emb_path, "expected a floating-point tensor"))?);
        }
        let mask_set = MaskSet {
            view_id: v.id,
            height: h,
            width: w,
            masks,
            embeddings,
        };
        mask_set
            .validate()
            .map_err(|e| Error::format(&manifest_path, format!("view {}: {e}", v.id)))?;
        let gt = |rel: &Option<String>| rel.as_ref().map(|r| read_i32(&resolve(r), &[h, w])).transpose();
        views.push(ViewRecord {
            id: v.id,
            split: v.split,
            camera,
            image,
            masks: mask_set,
            gt_labels: gt(&v.gt_labels)?,
            gt_instances: gt(&v.gt_instances)?,
        });
    }
    let (mut classes, mut canonicals) = (None, None);
    if let Some(t) = &m.text_embeddings {
        let path = resolve(&t.file);
        let n = t.class_names.len() + t.canonical_names.len();
        let rows = read_f64(&path, &[n, d_s])?;
        let mut rows = rows.chunks_exact(d_s).map(<[f64]>::to_vec);
        let mut take = |names: &[String]| -> Result<Option<TextEmbeddingSet>> {
            if names.is_empty() {
                return Ok(None);
            }
            let emb: Vec<Vec<f64>> = rows.by_ref().take(names.len()).collect();
            TextEmbeddingSet::new(names.to_vec(), emb).map(Some).map_err(|e| Error::format(&path, e.to_string()))
        };
        classes = take(&t.class_names)?;
        canonicals = take(&t.canonical_names)?;
    }
    let ds = SceneDataset {
        scene: m.scene,
        d_s,
        width: w,
        height: h,
        views,
        classes,
        canonicals,
        metadata: m.metadata,
    };
    ds.validate().map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    Ok(ds)
}
