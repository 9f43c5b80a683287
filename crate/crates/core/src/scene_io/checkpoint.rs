//! Binary little-endian PLY checkpoints with a JSON sidecar.
//!
//! Each vertex holds `x y z rot_w rot_x rot_y rot_z log_scale_u log_scale_v
//! raw_opacity h_000 ...` as `f32`, in flatten order. The sidecar
//! `<path>.meta.json` records the head shape, iteration and config echo.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitive::{flatten_into, unflatten_with_head, HeadKind, SplatPrimitive, GEOMETRY_PARAMS};

use super::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;

const GEOMETRY_NAMES: [&str; GEOMETRY_PARAMS] = [
    "x",
    "y",
    "z",
    "rot_w",
    "rot_x",
    "rot_y",
    "rot_z",
    "log_scale_u",
    "log_scale_v",
    "raw_opacity",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    /// `"siren"` or `"sh"`.
    pub head_kind: String,
    pub d_in: Option<usize>,
    pub hidden: Option<usize>,
    pub omega0: Option<f64>,
    pub sh_degree: Option<usize>,
    pub iteration: usize,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(kind: HeadKind, omega0: f64, iteration: usize, config: serde_json::Value) -> Self {
        let (head_kind, d_in, hidden, omega0, sh_degree) = match kind {
            HeadKind::Siren { d_in, hidden } => ("siren", Some(d_in), Some(hidden), Some(omega0), None),
            HeadKind::Sh { degree } => ("sh", None, None, None, Some(degree)),
        };
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            head_kind: head_kind.to_string(),
            d_in,
            hidden,
            omega0,
            sh_degree,
            iteration,
            config,
        }
    }

    pub fn head(&self) -> Result<HeadKind> {
        let missing = |f: &str| Error::Config(format!("checkpoint meta lacks `{f}`"));
        match self.head_kind.as_str() {
            "siren" => Ok(HeadKind::Siren {
                d_in: self.d_in.ok_or_else(|| missing("d_in"))?,
                hidden: self.hidden.ok_or_else(|| missing("hidden"))?,
            }),
            "sh" => Ok(HeadKind::Sh {
                degree: self.sh_degree.ok_or_else(|| missing("sh_degree"))?,
            }),
            other => Err(Error::Config(format!("unknown head kind `{other}`"))),
        }
    }

    pub fn properties_per_vertex(&self) -> Result<usize> {
        Ok(GEOMETRY_PARAMS + self.head()?.param_count())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub primitives: Vec<SplatPrimitive>,
    pub meta: CheckpointMeta,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn property_names(head_params: usize) -> Vec<String> {
    GEOMETRY_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((0..head_params).map(|i| format!("h_{i:03}")))
        .collect()
}

fn header(n: usize, props: &[String]) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
    for p in props {
        h.push_str(&format!("property float {p}\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn save_checkpoint(path: &Path, primitives: &[SplatPrimitive], meta: &CheckpointMeta) -> Result<()> {
    let per = meta.properties_per_vertex()?;
    let kind = meta.head()?;
    let mut body = Vec::with_capacity(primitives.len() * per * 4);
    let mut flat = Vec::with_capacity(per);
    for p in primitives {
        if p.head_kind() != kind {
            return Err(Error::Config(format!("primitive head {:?} does not match checkpoint head {kind:?}", p.head_kind())));
        }
        flat.clear();
        flatten_into(p, &mut flat);
        for &v in &flat {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let head = header(primitives.len(), &property_names(per - GEOMETRY_PARAMS));
    write_atomic(path, |f| {
        f.write_all(head.as_bytes())
            .and_then(|_| f.write_all(&body))
            .map_err(|e| Error::io(path, e))
    })?;
    let json = serde_json::to_vec_pretty(meta).expect("meta serializes");
    let mp = meta_path(path);
    write_atomic(&mp, |f| f.write_all(&json).map_err(|e| Error::io(&mp, e)))
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: meta.version,
        });
    }
    Ok(meta)
}

/// Parsed PLY header: vertex count, property names and the body offset.
pub(crate) struct PlyHeader {
    pub vertices: usize,
    pub properties: Vec<(String, String)>,
    pub body_offset: usize,
    pub binary: bool,
}

pub(crate) fn parse_ply_header(path: &Path, bytes: &[u8]) -> Result<PlyHeader> {
    let corrupt = |m: &str| Error::CorruptHeader {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| corrupt("no end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(corrupt("missing ply magic"));
    }
    let mut vertices = None;
    let mut properties = Vec::new();
    let mut binary = None;
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", "ascii", _] => binary = Some(false),
            ["format", ..] => return Err(corrupt(&format!("unsupported format `{line}`"))),
            ["element", "vertex", n] => {
                vertices = Some(n.parse().map_err(|_| corrupt("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => properties.push((ty.to_string(), name.to_string())),
            ["property", ..] if in_vertex => return Err(corrupt(&format!("unsupported property `{line}`"))),
            ["comment", ..] | ["obj_info", ..] | [] | ["property", ..] => {}
            _ => return Err(corrupt(&format!("unexpected header line `{line}`"))),
        }
    }
    Ok(PlyHeader {
        vertices: vertices.ok_or_else(|| corrupt("no vertex element"))?,
        properties,
        body_offset: end + END.len(),
        binary: binary.ok_or_else(|| corrupt("no format line"))?,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let meta = load_meta(path)?;
    let kind = meta.head()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = parse_ply_header(path, &bytes)?;
    let corrupt = |m: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        message: m,
    };
    if !hdr.binary {
        return Err(corrupt("checkpoint must be binary_little_endian".into()));
    }
    let per = meta.properties_per_vertex()?;
    if hdr.properties.len() != per {
        return Err(Error::PropertyCountMismatch {
            header: hdr.properties.len(),
            meta: per,
        });
    }
    let expected = property_names(per - GEOMETRY_PARAMS);
    for ((ty, name), want) in hdr.properties.iter().zip(&expected) {
        if ty != "float" || name != want {
            return Err(corrupt(format!("property `{ty} {name}`, expected `float {want}`")));
        }
    }
    let body = &bytes[hdr.body_offset..];
    let need = hdr.vertices * per * 4;
    if body.len() != need {
        return Err(corrupt(format!("body has {} bytes, header implies {need}", body.len())));
    }
    let omega0 = meta.omega0.unwrap_or(crate::primitive::DEFAULT_OMEGA0);
    let template = kind.zeroed(omega0);
    let mut primitives = Vec::with_capacity(hdr.vertices);
    let mut flat = vec![0.0; per];
    for v in body.chunks_exact(per * 4) {
        for (dst, b) in flat.iter_mut().zip(v.chunks_exact(4)) {
            *dst = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
        primitives.push(unflatten_with_head(&flat, template.clone())?);
    }
    Ok(Checkpoint { primitives, meta })
}
