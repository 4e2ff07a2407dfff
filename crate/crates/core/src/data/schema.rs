//! JSON-lines grasp datasets.
//!
//! Line 1 is a header `{"schema":"xgrasp-grasps","version":1,"hands":{id: urdf}}`.
//! Every following line is one grasp record. Clouds with more than
//! [`INLINE_CLOUD_MAX`] points live in XYZ text files referenced by path.
//! Relative paths resolve against the dataset's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{matrix_from_r6, WristPose};
use crate::urdf::{parse_urdf_with, HandModel, MeshFileBounds};

pub const SCHEMA_NAME: &str = "xgrasp-grasps";
pub const SCHEMA_VERSION: u32 = 1;
pub const INLINE_CLOUD_MAX: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspSample {
    pub hand_id: String,
    pub object_id: String,
    /// Centroid-normalized points, meters.
    pub cloud: Vec<[f64; 3]>,
    /// Where the cloud is stored when it is not inline.
    pub cloud_ref: Option<PathBuf>,
    pub wrist: WristPose,
    pub q: Vec<f64>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Hand id to URDF path as written in the header.
    pub hands: BTreeMap<String, PathBuf>,
    pub samples: Vec<GraspSample>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    hands: BTreeMap<String, PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    hand_id: String,
    object_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cloud: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cloud_ref: Option<PathBuf>,
    wrist: WristPose,
    q: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

impl Dataset {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            hands: BTreeMap::new(),
            samples: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Sample indices per hand, in dataset order.
    pub fn by_hand(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            out.entry(s.hand_id.clone()).or_default().push(i);
        }
        out
    }

    pub fn hand_urdf(&self, id: &str) -> Result<String> {
        let rel = self
            .hands
            .get(id)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown hand id {id}")))?;
        let path = self.resolve(rel);
        fs::read_to_string(&path).map_err(|e| Error::io(path, e))
    }

    pub fn hand_model(&self, id: &str) -> Result<HandModel> {
        let text = self.hand_urdf(id)?;
        let dir = self.resolve(&self.hands[id]).parent().map(Path::to_path_buf).unwrap_or_default();
        parse_urdf_with(&text, &MeshFileBounds::new(dir))
    }

    pub fn hand_models(&self) -> Result<BTreeMap<String, HandModel>> {
        self.hands.keys().map(|id| Ok((id.clone(), self.hand_model(id)?))).collect()
    }
}

/// Translates a cloud so its centroid is the origin.
pub fn cloud_centroid(cloud: &[[f64; 3]]) -> Result<[f64; 3]> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = cloud.len() as f64;
    let mut c = [0.0; 3];
    for p in cloud {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    Ok(c.map(|x| x / n))
}

/// Centres a cloud and moves the wrist with it, keeping their relative placement.
pub fn normalize_scene(cloud: &[[f64; 3]], wrist: &WristPose) -> Result<(Vec<[f64; 3]>, WristPose)> {
    let c = cloud_centroid(cloud)?;
    if is_centred(&c) {
        return Ok((cloud.to_vec(), *wrist));
    }
    let mut w = *wrist;
    for k in 0..3 {
        w.t[k] -= c[k];
    }
    Ok((shift(cloud, &c), w))
}

/// Clouds whose centroid is within 1e-12 of the origin count as centred.
fn is_centred(c: &[f64; 3]) -> bool {
    c.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-12
}

fn shift(cloud: &[[f64; 3]], c: &[f64; 3]) -> Vec<[f64; 3]> {
    cloud.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect()
}

pub fn normalize_cloud(cloud: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let c = cloud_centroid(cloud)?;
    if is_centred(&c) {
        return Ok(cloud.to_vec());
    }
    Ok(shift(cloud, &c))
}

pub fn read_xyz(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingCloud(path.to_path_buf()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Schema {
                    line: i + 1,
                    message: format!("{}: not numeric", path.display()),
                })?;
            match v.as_slice() {
                [x, y, z] => Ok([*x, *y, *z]),
                _ => Err(Error::Schema {
                    line: i + 1,
                    message: format!("{}: expected 3 values", path.display()),
                }),
            }
        })
        .collect()
}

pub fn write_xyz(path: &Path, cloud: &[[f64; 3]]) -> Result<()> {
    let text: String = cloud.iter().map(|p| format!("{} {} {}\n", p[0], p[1], p[2])).collect();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn schema(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

/// Reads and validates a dataset. Clouds are centroid-normalized.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| schema(1, "missing header line"))?;
    let header: Header = serde_json::from_str(head).map_err(|e| schema(1, format!("bad header: {e}")))?;
    if header.schema != SCHEMA_NAME {
        return Err(schema(1, format!("schema is {:?}, expected {SCHEMA_NAME:?}", header.schema)));
    }
    if header.version != SCHEMA_VERSION {
        return Err(schema(1, format!("version {} unsupported (expected {SCHEMA_VERSION})", header.version)));
    }
    let mut ds = Dataset {
        hands: header.hands,
        samples: Vec::new(),
        base_dir,
    };
    let mut dofs: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let ln = i + 1;
        let rec: Record = serde_json::from_str(line).map_err(|e| schema(ln, e.to_string()))?;
        if !ds.hands.contains_key(&rec.hand_id) {
            return Err(schema(ln, format!("unknown hand_id {:?}", rec.hand_id)));
        }
        let d = match dofs.get(&rec.hand_id) {
            Some(&d) => d,
            None => {
                let d = ds.hand_model(&rec.hand_id)?.dof();
                dofs.insert(rec.hand_id.clone(), d);
                d
            }
        };
        if rec.q.len() != d {
            return Err(schema(
                ln,
                format!("record {} ({}): q has {} entries, hand {} has {d} DoF", ds.samples.len(), rec.object_id, rec.q.len(), rec.hand_id),
            ));
        }
        if rec.q.iter().chain(&rec.wrist.t).chain(&rec.wrist.r6).any(|x| !x.is_finite()) {
            return Err(schema(ln, "non-finite value"));
        }
        matrix_from_r6(&rec.wrist.r6).map_err(|e| schema(ln, format!("wrist rotation: {e}")))?;
        let raw = match (&rec.cloud, &rec.cloud_ref) {
            (Some(c), None) => c.clone(),
            (None, Some(r)) => read_xyz(&ds.resolve(r))?,
            _ => return Err(schema(ln, "exactly one of cloud and cloud_ref is required")),
        };
        let (cloud, wrist) = normalize_scene(&raw, &rec.wrist).map_err(|_| schema(ln, "empty cloud"))?;
        ds.samples.push(GraspSample {
            hand_id: rec.hand_id,
            object_id: rec.object_id,
            cloud,
            cloud_ref: rec.cloud_ref,
            wrist,
            q: rec.q,
            label: rec.label,
        });
    }
    Ok(ds)
}

/// Writes the dataset file plus any external cloud files next to it.
/// Large clouds without a reference get one under `<stem>_clouds/`.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let header = Header {
        schema: SCHEMA_NAME.into(),
        version: SCHEMA_VERSION,
        hands: ds.hands.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (i, s) in ds.samples.iter().enumerate() {
        let (cloud, cloud_ref) = if s.cloud.len() <= INLINE_CLOUD_MAX && s.cloud_ref.is_none() {
            (Some(s.cloud.clone()), None)
        } else {
            let rel = s
                .cloud_ref
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{stem}_clouds/{i:06}.xyz")));
            let abs = if rel.is_absolute() { rel.clone() } else { base.join(&rel) };
            write_xyz(&abs, &s.cloud)?;
            (None, Some(rel))
        };
        let rec = Record {
            hand_id: s.hand_id.clone(),
            object_id: s.object_id.clone(),
            cloud,
            cloud_ref,
            wrist: s.wrist,
            q: s.q.clone(),
            label: s.label,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
