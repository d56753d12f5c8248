//! Rendering a scene into its stored payloads, and the on-disk layout
//! `scenes/<id>/{scene.json, *.tsr}` with a hashed manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lidar::{sample_lidar_points, voxelize};
use super::render::{render_depth, render_semantics, render_stereo_features, visible_boxes_2d};
use super::teacher::teacher_features;
use super::{gen_scene, Scene, SceneConfig, SceneGeometry};
use crate::error::{Error, Result};
use crate::tensor::{encode_tsr, read_tsr, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
const SCENES_DIR: &str = "scenes";

/// Everything training and evaluation read for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub scene: Scene,
    /// Visible 2D box per object, `[u0, v0, u1, v1]` in feature pixels.
    pub boxes_2d: Vec<Option<[f64; 4]>>,
    pub depth: Tensor,
    pub valid: Tensor,
    pub feat_left: Tensor,
    pub feat_right: Tensor,
    pub semantics: Tensor,
    pub occupancy: Tensor,
    pub teacher: Tensor,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    #[serde(flatten)]
    scene: Scene,
    boxes_2d: Vec<Option<[f64; 4]>>,
}

impl SceneData {
    pub fn render(scene: Scene, cfg: &SceneConfig) -> Result<Self> {
        let depth = render_depth(&scene)?;
        let stereo = render_stereo_features(&scene, &depth, cfg.noise_sigma)?;
        let semantics = render_semantics(&scene, &depth)?;
        let points = sample_lidar_points(&scene, cfg.points_per_box);
        let occupancy = voxelize(&points, &scene.geometry.grid)?;
        let teacher = teacher_features(&scene, &occupancy)?;
        Ok(SceneData {
            boxes_2d: visible_boxes_2d(&depth, scene.boxes.len()),
            depth: depth.depth,
            valid: depth.valid,
            feat_left: stereo.left,
            feat_right: stereo.right,
            semantics,
            occupancy: occupancy.tensor,
            teacher: teacher.voxel,
            scene,
        })
    }

    fn payloads(&self) -> [(&'static str, &Tensor); 7] {
        [
            ("depth.tsr", &self.depth),
            ("valid.tsr", &self.valid),
            ("featL.tsr", &self.feat_left),
            ("featR.tsr", &self.feat_right),
            ("sem.tsr", &self.semantics),
            ("occupancy.tsr", &self.occupancy),
            ("teacher.tsr", &self.teacher),
        ]
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_hashed(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

/// Writes one scene directory and returns the sha256 of every file in it.
pub fn save_scene(dir: &Path, data: &SceneData) -> Result<BTreeMap<String, String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut hashes = BTreeMap::new();
    let record = SceneFile {
        scene: data.scene.clone(),
        boxes_2d: data.boxes_2d.clone(),
    };
    let json = serde_json::to_vec_pretty(&record)?;
    hashes.insert("scene.json".to_string(), write_hashed(&dir.join("scene.json"), &json)?);
    for (name, t) in data.payloads() {
        hashes.insert(name.to_string(), write_hashed(&dir.join(name), &encode_tsr(t))?);
    }
    Ok(hashes)
}

pub fn load_scene(dir: &Path) -> Result<SceneData> {
    let path = dir.join("scene.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let record: SceneFile = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let load = |name: &str| read_tsr(dir.join(name));
    let data = SceneData {
        depth: load("depth.tsr")?,
        valid: load("valid.tsr")?,
        feat_left: load("featL.tsr")?,
        feat_right: load("featR.tsr")?,
        semantics: load("sem.tsr")?,
        occupancy: load("occupancy.tsr")?,
        teacher: load("teacher.tsr")?,
        boxes_2d: record.boxes_2d,
        scene: record.scene,
    };
    let [h, w] = data.scene.geometry.image;
    if data.depth.shape() != [h, w] {
        return Err(Error::Format {
            path: dir.join("depth.tsr"),
            reason: format!("expected [{h}, {w}], got {:?}", data.depth.shape()),
        });
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SceneConfig,
    pub geometry: SceneGeometry,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn scene_dir(root: &Path, id: &str) -> PathBuf {
        root.join(SCENES_DIR).join(id)
    }
}

/// Generates `cfg.count` scenes under `root` and writes the manifest. Scene
/// `i` is named `scene_{i:04}` and seeded from the set seed and `i`.
pub fn generate_scene_set(root: &Path, cfg: &SceneConfig, geometry: &SceneGeometry) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(root.join(SCENES_DIR)).map_err(|e| Error::io(root, e))?;
    let mut scenes = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let id = format!("scene_{i:04}");
        let seed = cfg.scene_seed(i);
        let scene = gen_scene(&id, seed, cfg, geometry)?;
        let data = SceneData::render(scene, cfg)?;
        let files = save_scene(&Manifest::scene_dir(root, &id), &data)?;
        scenes.push(ManifestEntry { id, seed, files });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        geometry: *geometry,
        scenes,
    };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hashes_repeat() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            count: 2,
            ..SceneConfig::default()
        };
        let g = SceneGeometry::desk();
        let a = generate_scene_set(dir.path(), &cfg, &g).unwrap();
        let b = generate_scene_set(dir.path(), &cfg, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_manifest(dir.path()).unwrap(), a);
        let loaded = load_scene(&Manifest::scene_dir(dir.path(), "scene_0001")).unwrap();
        let fresh = SceneData::render(gen_scene("scene_0001", cfg.scene_seed(1), &cfg, &g).unwrap(), &cfg).unwrap();
        assert_eq!(loaded.scene, fresh.scene);
        assert_eq!(loaded.boxes_2d, fresh.boxes_2d);
        for ((n, a), (_, b)) in loaded.payloads().iter().zip(fresh.payloads().iter()) {
            assert_eq!(a, b, "{n}");
        }
    }

    #[test]
    fn empty_set_has_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            count: 0,
            ..SceneConfig::default()
        };
        let m = generate_scene_set(dir.path(), &cfg, &SceneGeometry::desk()).unwrap();
        assert!(m.scenes.is_empty());
    }
}
