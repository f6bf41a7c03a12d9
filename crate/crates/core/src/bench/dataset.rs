use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::io::{load_cloud, save_cloud, CloudFormat};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::train::PoseTaggedCloud;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    /// World-from-sensor pose.
    pub pose: RigidTransform,
}

/// An evaluation pair; `relative` maps cloud `a` coordinates into cloud `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEntry {
    pub a: usize,
    pub b: usize,
    pub relative: RigidTransform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub pairs: Vec<PairEntry>,
}

const MANIFEST_HEADER: [&str; 9] = ["id", "path", "tx", "ty", "tz", "qw", "qx", "qy", "qz"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format {
            offset,
            message: format!("{}: {kind:?}", path.display()),
        },
    }
}

fn field_err(path: &Path, rec: &csv::StringRecord, msg: String) -> Error {
    Error::Format {
        offset: rec.position().map_or(0, |p| p.byte()),
        message: format!("{}: {msg}", path.display()),
    }
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, k: usize) -> Result<f64> {
    let s = rec.get(k).unwrap_or("");
    s.trim()
        .parse()
        .map_err(|_| field_err(path, rec, format!("column {}: bad number {s:?}", k + 1)))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: expected header {}", path.display(), want.join(",")),
        });
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

/// `id_a,id_b` then row-major `[R | t]`: `r00,r01,r02,t0,r10,...`.
fn pair_header() -> Vec<String> {
    let mut h = vec!["id_a".to_string(), "id_b".to_string()];
    for r in 0..3 {
        for c in 0..3 {
            h.push(format!("r{r}{c}"));
        }
        h.push(format!("t{r}"));
    }
    h
}

impl DatasetManifest {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if seen.insert(e.id.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate cloud id {:?}", e.id)));
            }
            e.pose.validate()?;
        }
        for p in &self.pairs {
            if p.a >= self.entries.len() || p.b >= self.entries.len() {
                return Err(Error::invalid(format!("pair ({}, {}) out of range", p.a, p.b)));
            }
            p.relative.validate()?;
        }
        Ok(())
    }

    /// Writes `id,path,tx,ty,tz,qw,qx,qy,qz`.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            let t = e.pose.translation;
            let q = e.pose.quaternion();
            let mut rec = vec![e.id.clone(), e.path.display().to_string()];
            rec.extend([t.x, t.y, t.z, q[0], q[1], q[2], q[3]].iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `id_a,id_b` and the 12 row-major entries of `[R | t]`.
    pub fn write_pairs(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(pair_header()).map_err(|e| csv_err(path, e))?;
        for p in &self.pairs {
            let mut rec = vec![self.entries[p.a].id.clone(), self.entries[p.b].id.clone()];
            rec.extend(p.relative.to_row_major().iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and, optionally, a pair file referencing its ids.
    pub fn read(manifest: impl AsRef<Path>, pairs: Option<&Path>) -> Result<Self> {
        let path = manifest.as_ref();
        let mut rdr = open_csv(path)?;
        check_header(path, &mut rdr, &MANIFEST_HEADER)?;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let v: Vec<f64> = (2..9).map(|k| parse_f64(path, &rec, k)).collect::<Result<_>>()?;
            let pose = RigidTransform::from_quaternion([v[3], v[4], v[5], v[6]], Vector3::new(v[0], v[1], v[2]))
                .map_err(|e| field_err(path, &rec, e.to_string()))?;
            entries.push(ManifestEntry {
                id: rec[0].trim().to_string(),
                path: PathBuf::from(rec[1].trim()),
                pose,
            });
        }
        let mut manifest = DatasetManifest {
            entries,
            pairs: Vec::new(),
        };
        if let Some(pp) = pairs {
            let mut rdr = open_csv(pp)?;
            let header = pair_header();
            let want: Vec<&str> = header.iter().map(String::as_str).collect();
            check_header(pp, &mut rdr, &want)?;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_err(pp, e))?;
                let lookup = |k: usize| {
                    let id = rec[k].trim();
                    manifest
                        .index_of(id)
                        .ok_or_else(|| field_err(pp, &rec, format!("unknown cloud id {id:?}")))
                };
                let (a, b) = (lookup(0)?, lookup(1)?);
                let mut m = [0.0; 12];
                for (k, slot) in m.iter_mut().enumerate() {
                    *slot = parse_f64(pp, &rec, k + 2)?;
                }
                let relative = RigidTransform::from_row_major(&m).map_err(|e| field_err(pp, &rec, e.to_string()))?;
                manifest.pairs.push(PairEntry { a, b, relative });
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Resolves an entry's path against `base`.
    pub fn resolve(&self, base: &Path, i: usize) -> PathBuf {
        let p = &self.entries[i].path;
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    }

    /// Loads every referenced cloud; a missing file is an error.
    pub fn load_clouds(&self, base: &Path, format: CloudFormat, traversal_id: &str) -> Result<Vec<PoseTaggedCloud>> {
        (0..self.entries.len())
            .map(|i| {
                let path = self.resolve(base, i);
                let format = CloudFormat::from_path(&path, format);
                let cloud = load_cloud(&path, format)?.with_id(self.entries[i].id.clone());
                Ok(PoseTaggedCloud {
                    cloud,
                    pose: self.entries[i].pose,
                    traversal_id: traversal_id.to_string(),
                })
            })
            .collect()
    }
}

/// A loaded dataset: clouds plus their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clouds: Vec<PoseTaggedCloud>,
}

impl Dataset {
    /// Loads `manifest.csv` (and `pairs.csv` if present) from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>, format: CloudFormat) -> Result<Self> {
        let dir = dir.as_ref();
        let pairs = dir.join("pairs.csv");
        let manifest = DatasetManifest::read(dir.join("manifest.csv"), pairs.exists().then_some(pairs.as_path()))?;
        let traversal = dir.file_name().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
        let clouds = manifest.load_clouds(dir, format, &traversal)?;
        Ok(Self { manifest, clouds })
    }

    /// Writes clouds, `manifest.csv` and `pairs.csv` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = self.manifest.clone();
        for (e, c) in manifest.entries.iter_mut().zip(&self.clouds) {
            e.path = PathBuf::from(format!("{}.{}", e.id, format.extension()));
            save_cloud(&c.cloud, dir.join(&e.path), format)?;
        }
        manifest.write_manifest(dir.join("manifest.csv"))?;
        manifest.write_pairs(dir.join("pairs.csv"))
    }
}
