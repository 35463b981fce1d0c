//! Dataset container: a JSON manifest plus fixed-layout little-endian binary
//! records, byte-reproducible from `(config, seed)`.
//!
//! Record layout (all floats are little-endian f64):
//!
//! ```text
//! kind: u8
//! camera: fx fy cx cy
//! body pose: root axis-angle (3) | root translation (3)
//!            | local rotations as axis-angle (3·(J−1)) | shape (B)
//! per side (left, right):
//!   detected: u8
//!   latent (8) | hand shape (10) | wrist_cam payload (3) | crop box (3)
//!   crop grid: h w c (u32) | affine (6) | data (h·w·c)
//! body grid: h w c (u32) | affine (6) | data (h·w·c)
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::backbone::content_hash;
use crate::config::PipelineConfig;
use crate::geom::{axis_angle_to_matrix, matrix_to_axis_angle, Affine2D, AxisAngle, TokenGrid};
use crate::model::{
    generate_toy_spec, save_model_spec, ArticulatedModelSpec, Camera, HandSide, ModelKind,
    PoseState,
};
use crate::train::SampleKind;

use super::scene::{render_body_grid, render_hand_crop, sample_scene, Scene};
use super::DataError;

pub const DATASET_VERSION: &str = "posefuse-dataset-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    pub sample_count: usize,
    pub body_spec_hash: String,
    pub hand_spec_hash: String,
    pub splits: BTreeMap<String, Vec<usize>>,
    pub record_offsets: Vec<u64>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone)]
pub struct HandRecord {
    pub detected: bool,
    pub latent: Vec<f64>,
    pub beta: Vec<f64>,
    pub wrist_cam_payload: [f64; 6],
    pub crop_box: (f64, f64, f64),
    pub crop_grid: TokenGrid,
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub index: usize,
    pub kind: SampleKind,
    pub camera: Camera,
    pub body_pose: PoseState,
    pub hands: BTreeMap<HandSide, HandRecord>,
    pub body_grid: TokenGrid,
}

impl SampleRecord {
    pub fn hand(&self, side: HandSide) -> &HandRecord {
        &self.hands[&side]
    }

    pub fn theta(&self, side: HandSide) -> Vec<AxisAngle> {
        super::protocol::theta_from_latent(&self.hands[&side].latent)
    }
}

struct RecordWriter {
    buf: Vec<u8>,
}

impl RecordWriter {
    fn new() -> Self {
        RecordWriter { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    fn vec3(&mut self, v: &Vector3<f64>) {
        self.f64(v.x);
        self.f64(v.y);
        self.f64(v.z);
    }

    fn grid(&mut self, g: &TokenGrid) {
        self.u32(g.h as u32);
        self.u32(g.w as u32);
        self.u32(g.channels as u32);
        self.f64s(&g.affine.to_flat());
        self.f64s(&g.data);
    }
}

struct RecordReader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> RecordReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        RecordReader { buf, at: 0 }
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        let v = *self
            .buf
            .get(self.at)
            .ok_or_else(|| DataError::Malformed("record truncated".into()))?;
        self.at += 1;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let end = self.at + 4;
        let bytes = self
            .buf
            .get(self.at..end)
            .ok_or_else(|| DataError::Malformed("record truncated".into()))?;
        self.at = end;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        let end = self.at + 8;
        let bytes = self
            .buf
            .get(self.at..end)
            .ok_or_else(|| DataError::Malformed("record truncated".into()))?;
        self.at = end;
        Ok(f64::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, DataError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn grid(&mut self) -> Result<TokenGrid, DataError> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        let c = self.u32()? as usize;
        let flat: [f64; 6] = self.f64s(6)?.try_into().unwrap();
        let affine = Affine2D::from_flat(&flat);
        let data = self.f64s(h * w * c)?;
        Ok(TokenGrid {
            h,
            w,
            channels: c,
            data,
            affine,
        })
    }
}

fn encode_record(scene: &Scene, body_grid: &TokenGrid, crops: &BTreeMap<HandSide, TokenGrid>) -> Vec<u8> {
    let mut w = RecordWriter::new();
    w.u8(scene.kind.as_u8());
    w.f64(scene.camera.focal.0);
    w.f64(scene.camera.focal.1);
    w.f64(scene.camera.principal.0);
    w.f64(scene.camera.principal.1);

    let pose = &scene.body_pose;
    w.vec3(&matrix_to_axis_angle(&pose.root_orientation).map(|v| v.0).unwrap());
    w.vec3(&pose.root_translation);
    for rot in &pose.local_rotations {
        w.vec3(&matrix_to_axis_angle(rot).map(|v| v.0).unwrap());
    }
    w.f64s(&pose.shape);

    for side in [HandSide::Left, HandSide::Right] {
        let truth = &scene.hands[&side];
        w.u8(truth.detected as u8);
        w.f64s(&truth.latent);
        w.f64s(&truth.beta);
        w.f64s(&truth.wrist_cam_payload);
        w.f64(truth.crop_box.0);
        w.f64(truth.crop_box.1);
        w.f64(truth.crop_box.2);
        w.grid(&crops[&side]);
    }
    w.grid(body_grid);
    w.buf
}

fn decode_record(
    index: usize,
    bytes: &[u8],
    joint_count: usize,
    shape_dim: usize,
) -> Result<SampleRecord, DataError> {
    let mut r = RecordReader::new(bytes);
    let kind = SampleKind::from_u8(r.u8()?)
        .ok_or_else(|| DataError::Malformed("bad kind tag".into()))?;
    let camera = Camera::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let root_aa = r.vec3()?;
    let root_t = r.vec3()?;
    let mut locals = Vec::with_capacity(joint_count - 1);
    for _ in 0..joint_count - 1 {
        locals.push(axis_angle_to_matrix(&AxisAngle(r.vec3()?)));
    }
    let shape = r.f64s(shape_dim)?;
    let body_pose = PoseState {
        root_orientation: axis_angle_to_matrix(&AxisAngle(root_aa)),
        root_translation: root_t,
        local_rotations: locals,
        shape,
    };
    let mut hands = BTreeMap::new();
    for side in [HandSide::Left, HandSide::Right] {
        let detected = r.u8()? != 0;
        let latent = r.f64s(super::protocol::HAND_LATENT_DIM)?;
        let beta = r.f64s(super::protocol::HAND_SHAPE_DIM)?;
        let wrist_cam_payload: [f64; 6] = r.f64s(6)?.try_into().unwrap();
        let crop_box = (r.f64()?, r.f64()?, r.f64()?);
        let crop_grid = r.grid()?;
        hands.insert(
            side,
            HandRecord {
                detected,
                latent,
                beta,
                wrist_cam_payload,
                crop_box,
                crop_grid,
            },
        );
    }
    let body_grid = r.grid()?;
    Ok(SampleRecord {
        index,
        kind,
        camera,
        body_pose,
        hands,
        body_grid,
    })
}

/// Generates a dataset directory: `manifest.json`, `records.bin`,
/// `body_spec.json`, `hand_spec.json`. Byte-identical for identical
/// `(config, seed)`.
pub fn generate_dataset(
    config: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, DataError> {
    if config.generate.train_scenes == 0 && config.generate.heldout_scenes == 0 {
        return Err(DataError::ConfigError("no scenes requested".into()));
    }
    let mixture_sum: f64 = config.generate.kind_mixture.iter().sum();
    if !(mixture_sum > 0.0) {
        return Err(DataError::ConfigError("kind mixture must be positive".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let body_spec = generate_toy_spec(ModelKind::Body, config.model_seed);
    let hand_spec = generate_toy_spec(ModelKind::Hand, config.model_seed);
    save_model_spec(&body_spec, &out_dir.join("body_spec.json"))
        .map_err(|e| DataError::ConfigError(e.to_string()))?;
    save_model_spec(&hand_spec, &out_dir.join("hand_spec.json"))
        .map_err(|e| DataError::ConfigError(e.to_string()))?;

    let total = config.generate.train_scenes + config.generate.heldout_scenes;
    let mut offsets = Vec::with_capacity(total);
    let mut records = std::io::BufWriter::new(std::fs::File::create(out_dir.join("records.bin"))?);
    let mut at = 0u64;
    for index in 0..total {
        let scene = sample_scene(&config.generate, &body_spec, &hand_spec, index, total, seed)?;
        let body_grid = render_body_grid(
            &scene,
            &body_spec,
            &config.generate,
            config.backbone.grid_h,
            config.backbone.grid_w,
        )?;
        let (_, hand_kps) = super::scene::ground_truth_mesh(
            &scene,
            &body_spec,
            &hand_spec,
            &config.smoothing.clone().into(),
        )?;
        let mut crops = BTreeMap::new();
        for side in [HandSide::Left, HandSide::Right] {
            let crop = render_hand_crop(&scene, side, &hand_kps[&side], &config.generate)?;
            crops.insert(side, crop);
        }
        let bytes = encode_record(&scene, &body_grid, &crops);
        offsets.push(at);
        at += bytes.len() as u64;
        records.write_all(&bytes)?;
    }
    records.flush()?;

    let mut splits = BTreeMap::new();
    splits.insert(
        "train".to_string(),
        (0..config.generate.train_scenes).collect(),
    );
    splits.insert(
        "heldout".to_string(),
        (config.generate.train_scenes..total).collect(),
    );

    let manifest = DatasetManifest {
        version: DATASET_VERSION.to_string(),
        seed,
        sample_count: total,
        body_spec_hash: content_hash(&body_spec),
        hand_spec_hash: content_hash(&hand_spec),
        splits,
        record_offsets: offsets,
        config: config.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DataError::ConfigError(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// An opened dataset directory with positioned-read access to the records.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub body_spec: ArticulatedModelSpec,
    pub hand_spec: ArticulatedModelSpec,
    records: std::fs::File,
    records_len: u64,
    dir: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset, DataError> {
        let manifest_bytes = std::fs::read(dir.join("manifest.json"))?;
        let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| DataError::Malformed(e.to_string()))?;
        if manifest.version != DATASET_VERSION {
            return Err(DataError::Malformed(format!(
                "dataset version {} does not match {DATASET_VERSION}",
                manifest.version
            )));
        }
        let body_spec = crate::model::load_model_spec(&dir.join("body_spec.json"))
            .map_err(|e| DataError::Malformed(e.to_string()))?;
        let hand_spec = crate::model::load_model_spec(&dir.join("hand_spec.json"))
            .map_err(|e| DataError::Malformed(e.to_string()))?;
        if content_hash(&body_spec) != manifest.body_spec_hash
            || content_hash(&hand_spec) != manifest.hand_spec_hash
        {
            return Err(DataError::Malformed(
                "spec hashes do not match the shipped spec files".into(),
            ));
        }
        let records = std::fs::File::open(dir.join("records.bin"))?;
        let records_len = records.metadata()?.len();
        Ok(Dataset {
            manifest,
            body_spec,
            hand_spec,
            records,
            records_len,
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn split(&self, name: &str) -> Result<&[usize], DataError> {
        match self.manifest.splits.get(name) {
            Some(indices) if !indices.is_empty() => Ok(indices),
            _ => Err(DataError::EmptySplit(name.to_string())),
        }
    }

    pub fn read_sample(&self, index: usize) -> Result<SampleRecord, DataError> {
        let offsets = &self.manifest.record_offsets;
        if index >= offsets.len() {
            return Err(DataError::Malformed(format!("sample {index} out of range")));
        }
        let start = offsets[index];
        let end = if index + 1 < offsets.len() {
            offsets[index + 1]
        } else {
            self.records_len
        };
        let mut buf = vec![0u8; (end - start) as usize];
        self.records.read_exact_at(&mut buf, start)?;
        decode_record(
            index,
            &buf,
            self.body_spec.joint_count,
            self.body_spec.shape_dim(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::project_points;
    use crate::transfer::SmoothingConfig;

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.generate.train_scenes = 12;
        cfg.generate.heldout_scenes = 4;
        cfg
    }

    #[test]
    fn generation_is_byte_identical() {
        let base = std::env::temp_dir().join("posefuse_dataset_determinism");
        let a = base.join("a");
        let b = base.join("b");
        let _ = std::fs::remove_dir_all(&base);
        let cfg = small_config();
        generate_dataset(&cfg, 42, &a).unwrap();
        generate_dataset(&cfg, 42, &b).unwrap();
        for name in ["manifest.json", "records.bin", "body_spec.json", "hand_spec.json"] {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert_eq!(fa, fb, "file {name} differs");
        }
    }

    #[test]
    fn kind_ratios_match_mixture_within_one() {
        let cfg = small_config();
        let total = 16;
        let mut counts = [0usize; 3];
        for i in 0..total {
            let kind = super::super::scene::kind_for_index(i, total, &cfg.generate.kind_mixture);
            counts[kind.as_u8() as usize] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let expected = cfg.generate.kind_mixture[k] * total as f64;
            assert!(
                (c as f64 - expected).abs() <= 1.0,
                "kind {k}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn records_round_trip_and_crop_boxes_contain_keypoints() {
        let dir = std::env::temp_dir().join("posefuse_dataset_roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = small_config();
        generate_dataset(&cfg, 7, &dir).unwrap();
        let ds = Dataset::open(&dir).unwrap();
        assert_eq!(ds.manifest.sample_count, 16);
        // Splits disjoint.
        let train = ds.split("train").unwrap();
        let heldout = ds.split("heldout").unwrap();
        assert!(train.iter().all(|i| !heldout.contains(i)));

        for &idx in train.iter().chain(heldout) {
            let rec = ds.read_sample(idx).unwrap();
            assert!(rec.body_grid.is_finite());
            // Single-hand invariant.
            let detected = rec.hands.values().filter(|h| h.detected).count();
            if rec.kind == SampleKind::SingleHand {
                assert_eq!(detected, 1);
            }
            // Crop boxes contain every projected GT hand keypoint and stay
            // inside the image.
            let scene_like = super::super::scene::ground_truth_mesh(
                &Scene {
                    index: rec.index,
                    kind: rec.kind,
                    camera: rec.camera,
                    body_pose: rec.body_pose.clone(),
                    hands: rec
                        .hands
                        .iter()
                        .map(|(side, h)| {
                            (
                                *side,
                                super::super::scene::HandTruth {
                                    detected: h.detected,
                                    latent: h.latent.clone(),
                                    theta: super::super::protocol::theta_from_latent(&h.latent),
                                    beta: h.beta.clone(),
                                    wrist_cam_payload: h.wrist_cam_payload,
                                    crop_box: h.crop_box,
                                },
                            )
                        })
                        .collect(),
                    noise_seed: 0,
                },
                &ds.body_spec,
                &ds.hand_spec,
                &SmoothingConfig::default(),
            )
            .unwrap();
            for side in [HandSide::Left, HandSide::Right] {
                let (x0, y0, side_px) = rec.hands[&side].crop_box;
                assert!(x0 >= 0.0 && y0 >= 0.0);
                assert!(x0 + side_px <= cfg.generate.camera.image_w + 1e-9);
                assert!(y0 + side_px <= cfg.generate.camera.image_h + 1e-9);
                let projected = project_points(&rec.camera, &scene_like.1[&side]).unwrap();
                for p in projected {
                    assert!(
                        p.x >= x0 - 1e-9 && p.x <= x0 + side_px + 1e-9,
                        "sample {idx} {side:?} x {p:?} outside [{x0}, {}]",
                        x0 + side_px
                    );
                    assert!(p.y >= y0 - 1e-9 && p.y <= y0 + side_px + 1e-9);
                }
            }
        }
    }
}
