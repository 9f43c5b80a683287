//! Datasets, synthetic scene generation, image files and checkpoints.
//!
//! A dataset directory holds a NeRF-style `transforms.json` (horizontal field
//! of view plus one camera-to-world matrix and image path per frame), PNG
//! frames, and optionally `points.ply` with initial points. Every eighth view
//! in filename order is held out for testing.

mod checkpoint;
mod images;
mod synth;

pub use checkpoint::{load_checkpoint, load_meta, meta_path, property_names, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use images::{heatmap, quantize, read_ngsf, read_png, write_ngsf, write_png, NGSF_MAGIC};
pub use synth::{arc_cameras, generate_synthetic, synthesize, Pattern, SynthSpec, SUPERSAMPLE};

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Mat3, UnitQuaternion, Vec3};
use crate::image::Image;

/// A camera and the ground-truth image it observed.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub initial_points: Vec<Vec3>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const TEST_EVERY: usize = 8;

impl Dataset {
    /// Assigns every eighth view (starting with the first) to the test split.
    pub fn with_split(views: Vec<View>, initial_points: Vec<Vec3>) -> Self {
        let (test, train) = (0..views.len()).partition(|i| i % TEST_EVERY == 0);
        Dataset {
            views,
            initial_points,
            train,
            test,
        }
    }

    pub fn train_views(&self) -> Vec<&View> {
        self.train.iter().map(|&i| &self.views[i]).collect()
    }

    pub fn test_views(&self) -> Vec<&View> {
        self.test.iter().map(|&i| &self.views[i]).collect()
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera).collect()
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub(crate) fn write_atomic(path: &Path, fill: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let res = fill(&mut f).and_then(|_| f.sync_all().map_err(|e| Error::io(&tmp, e)));
    drop(f);
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct Transforms {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn camera_to_matrix(c: &Camera) -> [[f64; 4]; 4] {
    let r = c.rotation.to_matrix();
    let p = c.position;
    [
        [r.m[0][0], r.m[0][1], r.m[0][2], p.x],
        [r.m[1][0], r.m[1][1], r.m[1][2], p.y],
        [r.m[2][0], r.m[2][1], r.m[2][2], p.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let tpath = dir.join("transforms.json");
    let text = fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let t: Transforms = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: tpath.clone(),
        message: e.to_string(),
    })?;
    if t.frames.is_empty() {
        return Err(Error::MalformedJson {
            path: tpath,
            message: "no frames".into(),
        });
    }
    let mut frames = t.frames;
    frames.sort_by(|a, b| a.file_path.cmp(&b.file_path));
    let images: Vec<(PathBuf, Image)> = frames
        .par_iter()
        .map(|f| {
            let p = resolve_image(dir, &f.file_path);
            read_png(&p).map(|img| (p, img))
        })
        .collect::<Result<_>>()?;
    let (h0, w0) = (images[0].1.height, images[0].1.width);
    let mut views = Vec::with_capacity(frames.len());
    for (f, (path, image)) in frames.iter().zip(images) {
        if (image.height, image.width) != (h0, w0) {
            return Err(Error::DimensionMismatch {
                path,
                message: format!("{}x{} image, dataset is {h0}x{w0}", image.height, image.width),
            });
        }
        let m = &f.transform_matrix;
        let rot = Mat3 {
            m: [[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]], [m[2][0], m[2][1], m[2][2]]],
        };
        let fx = 0.5 * w0 as f64 / (0.5 * t.camera_angle_x).tan();
        let camera = Camera::new(
            Vec3::new(m[0][3], m[1][3], m[2][3]),
            UnitQuaternion::from_matrix(&rot),
            fx,
            fx,
            0.5 * w0 as f64,
            0.5 * h0 as f64,
            w0 as u32,
            h0 as u32,
        )
        .map_err(|e| Error::MalformedJson {
            path: tpath.clone(),
            message: format!("frame {}: {e}", f.file_path),
        })?;
        let name = Path::new(&f.file_path)
            .file_stem()
            .map_or_else(|| f.file_path.clone(), |s| s.to_string_lossy().into_owned());
        views.push(View { name, camera, image });
    }
    let ppath = dir.join("points.ply");
    let points = if ppath.exists() { read_points(&ppath)? } else { Vec::new() };
    Ok(Dataset::with_split(views, points))
}

/// Writes a dataset readable by [`load_dataset`]. All views must share
/// intrinsics with a centered principal point and square pixels.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let first = ds.views.first().ok_or_else(|| Error::Config("empty dataset".into()))?.camera;
    let frames = ds
        .views
        .iter()
        .map(|v| {
            let file_path = format!("images/{}.png", v.name);
            write_png(&dir.join(&file_path), &v.image)?;
            Ok(Frame {
                file_path,
                transform_matrix: camera_to_matrix(&v.camera),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let t = Transforms {
        camera_angle_x: 2.0 * (0.5 * first.width as f64 / first.fx).atan(),
        frames,
    };
    let json = serde_json::to_vec_pretty(&t).expect("transforms serialize");
    let tpath = dir.join("transforms.json");
    write_atomic(&tpath, |f| f.write_all(&json).map_err(|e| Error::io(&tpath, e)))?;
    write_points(&dir.join("points.ply"), &ds.initial_points)
}

pub fn write_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )
    .into_bytes();
    for p in points {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(path, |f| f.write_all(&out).map_err(|e| Error::io(path, e)))
}

/// Reads x, y, z from a PLY vertex element, ASCII or binary little-endian,
/// with float or double properties.
pub fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = checkpoint::parse_ply_header(path, &bytes)?;
    let corrupt = |m: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        message: m,
    };
    let pos = |n: &str| {
        hdr.properties
            .iter()
            .position(|(_, name)| name == n)
            .ok_or_else(|| corrupt(format!("no `{n}` property")))
    };
    let idx = [pos("x")?, pos("y")?, pos("z")?];
    let body = &bytes[hdr.body_offset..];
    let mut points = Vec::with_capacity(hdr.vertices);
    if hdr.binary {
        let sizes: Vec<usize> = hdr
            .properties
            .iter()
            .map(|(ty, _)| match ty.as_str() {
                "float" | "float32" | "int" | "uint" | "int32" | "uint32" => Ok(4),
                "double" | "float64" => Ok(8),
                "uchar" | "char" | "uint8" | "int8" => Ok(1),
                "short" | "ushort" | "int16" | "uint16" => Ok(2),
                other => Err(corrupt(format!("unsupported property type `{other}`"))),
            })
            .collect::<Result<_>>()?;
        let stride: usize = sizes.iter().sum();
        if body.len() < stride * hdr.vertices {
            return Err(corrupt("truncated vertex data".into()));
        }
        let offsets: Vec<usize> = sizes.iter().scan(0, |o, s| Some(std::mem::replace(o, *o + s))).collect();
        for v in body.chunks_exact(stride).take(hdr.vertices) {
            let read = |k: usize| -> Result<f64> {
                let b = &v[offsets[k]..offsets[k] + sizes[k]];
                match (hdr.properties[k].0.as_str(), sizes[k]) {
                    (_, 8) => Ok(f64::from_le_bytes(b.try_into().unwrap())),
                    ("float" | "float32", 4) => Ok(f32::from_le_bytes(b.try_into().unwrap()) as f64),
                    (ty, _) => Err(corrupt(format!("coordinate property of type `{ty}`"))),
                }
            };
            points.push(Vec3::new(read(idx[0])?, read(idx[1])?, read(idx[2])?));
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| corrupt("ASCII body is not UTF-8".into()))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()).take(hdr.vertices) {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let get = |k: usize| -> Result<f64> {
                tok.get(k)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| corrupt(format!("bad vertex line `{line}`")))
            };
            points.push(Vec3::new(get(idx[0])?, get(idx[1])?, get(idx[2])?));
        }
        if points.len() != hdr.vertices {
            return Err(corrupt("truncated vertex data".into()));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n_views: usize) -> SynthSpec {
        SynthSpec {
            image_size: 16,
            cell_px: 4.0,
            n_views,
            n_init_points: 10,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_every_eighth() {
        let ds = synthesize(&small_spec(17)).unwrap();
        assert_eq!(ds.test, vec![0, 8, 16]);
        assert_eq!(ds.train.len(), 14);
        assert!(ds.train.iter().all(|i| !ds.test.contains(i)));
        for n in 1..30 {
            let d = Dataset::with_split(ds.views.iter().cycle().take(n).cloned().collect(), vec![]);
            assert_eq!(d.test.len(), n.div_ceil(8));
        }
    }

    #[test]
    fn generator_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small_spec(5), dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.views.len(), 5);
        for (a, b) in ds.views.iter().zip(&back.views) {
            assert_eq!(a.name, b.name);
            let (ca, cb) = (a.camera, b.camera);
            assert!((ca.position - cb.position).norm() < 1e-9);
            let (ra, rb) = (ca.rotation.to_matrix(), cb.rotation.to_matrix());
            for i in 0..3 {
                for j in 0..3 {
                    assert!((ra.m[i][j] - rb.m[i][j]).abs() < 1e-9);
                }
            }
            assert!((ca.fx - cb.fx).abs() < 1e-9 && (ca.cx - cb.cx).abs() < 1e-12);
            // stored GT within 8-bit quantization of the analytic render
            for (x, y) in a.image.data.iter().zip(&b.image.data) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
        assert_eq!(back.initial_points.len(), 10);
        for (p, q) in ds.initial_points.iter().zip(&back.initial_points) {
            assert!((*p - *q).norm() < 1e-6);
        }
    }

    #[test]
    fn intrinsics_follow_pinhole_relation() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize(&small_spec(2)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("transforms.json")).unwrap();
        let angle: f64 = serde_json::from_str::<serde_json::Value>(&text).unwrap()["camera_angle_x"].as_f64().unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.views.len(), 2);
        assert!((back.views[0].camera.fx - 0.5 * 16.0 / (0.5 * angle).tan()).abs() < 1e-12);
    }

    #[test]
    fn dataset_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&small_spec(3), dir.path()).unwrap();
        let img = dir.path().join("images/r_001.png");
        fs::remove_file(&img).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap_err(), Error::MissingFile(img.clone()));

        write_png(&img, &Image::new(8, 8, 3)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::DimensionMismatch { path, .. }) if path == img));

        fs::write(dir.path().join("transforms.json"), "{\"frames\": [").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MalformedJson { .. })));
        assert_eq!(
            load_dataset(&dir.path().join("nope")).unwrap_err(),
            Error::MissingFile(dir.path().join("nope/transforms.json"))
        );
    }

    #[test]
    fn ascii_points_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.ply");
        fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nend_header\n1 2 3 255\n-1 0.5 0 7\n").unwrap();
        assert_eq!(read_points(&p).unwrap(), vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)]);
    }
}
