use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;

use crate::autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Layer widths of the detector and descriptor networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    /// Detector per-point MLP widths (input is xyz).
    pub detector_point: Vec<usize>,
    /// Detector post-pool MLP widths, before the two heads.
    pub detector_pooled: Vec<usize>,
    /// Descriptor per-point MLP widths.
    pub descriptor_point: Vec<usize>,
    /// Width `d′` of the layer applied to `[point feature | cluster feature]`.
    pub context_dim: usize,
    /// Descriptor dimension `d`.
    pub descriptor_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            detector_point: vec![64, 128, 256],
            detector_pooled: vec![128, 64],
            descriptor_point: vec![64, 128, 256],
            context_dim: 128,
            descriptor_dim: 32,
        }
    }
}

impl Architecture {
    pub fn with_dims(context_dim: usize, descriptor_dim: usize) -> Self {
        Self {
            context_dim,
            descriptor_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .detector_point
            .iter()
            .chain(&self.detector_pooled)
            .chain(&self.descriptor_point)
            .chain([&self.context_dim, &self.descriptor_dim]);
        if self.detector_point.is_empty()
            || self.detector_pooled.is_empty()
            || self.descriptor_point.is_empty()
            || all.clone().any(|&w| w == 0)
        {
            return Err(Error::Config("all layer lists non-empty and widths >= 1".into()));
        }
        Ok(())
    }

    /// `(name, fan_in, fan_out)` for every layer, detector first.
    pub fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fin = 3;
        for (i, &w) in self.detector_point.iter().enumerate() {
            out.push((format!("det.point{i}"), fin, w));
            fin = w;
        }
        for (i, &w) in self.detector_pooled.iter().enumerate() {
            out.push((format!("det.pooled{i}"), fin, w));
            fin = w;
        }
        out.push(("det.orient".into(), fin, 2));
        out.push(("det.attention".into(), fin, 1));
        let mut fin = 3;
        for (i, &w) in self.descriptor_point.iter().enumerate() {
            out.push((format!("desc.point{i}"), fin, w));
            fin = w;
        }
        out.push(("desc.context".into(), 2 * fin, self.context_dim));
        out.push(("desc.out".into(), self.context_dim, self.descriptor_dim));
        out
    }

    fn from_layers(shapes: &[(String, Vec<usize>)]) -> Result<Self> {
        let width = |prefix: &str| -> Vec<usize> {
            let mut ws = Vec::new();
            for i in 0.. {
                let name = format!("{prefix}{i}.w");
                match shapes.iter().find(|(n, _)| *n == name) {
                    Some((_, s)) if s.len() == 2 => ws.push(s[1]),
                    _ => break,
                }
            }
            ws
        };
        let col = |name: &str| -> Result<usize> {
            shapes
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, s)| s.get(1).copied())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))
        };
        Ok(Self {
            detector_point: width("det.point"),
            detector_pooled: width("det.pooled"),
            descriptor_point: width("desc.point"),
            context_dim: col("desc.context.w")?,
            descriptor_dim: col("desc.out.w")?,
        })
    }
}

/// Learnable tensors of both networks. Values are kept exactly representable
/// as `f32` so that checkpoints round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    arch: Architecture,
    tensors: Vec<(String, Tensor)>,
}

pub(crate) fn round_to_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

impl ModelWeights {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut tensors = Vec::new();
        for (name, fin, fout) in arch.layers() {
            let limit = (6.0 / (fin + fout) as f64).sqrt();
            let data = (0..fin * fout)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let mut w = Tensor::new(vec![fin, fout], data)?;
            round_to_f32(&mut w);
            tensors.push((format!("{name}.w"), w));
            tensors.push((format!("{name}.b"), Tensor::zeros(&[fout])));
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let shapes: Vec<(String, Vec<usize>)> = tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        let arch = Architecture::from_layers(&shapes)?;
        arch.validate()?;
        let expected: Vec<(String, Vec<usize>)> = arch
            .layers()
            .into_iter()
            .flat_map(|(n, fin, fout)| [(format!("{n}.w"), vec![fin, fout]), (format!("{n}.b"), vec![fout])])
            .collect();
        if expected != shapes {
            return Err(Error::Config(
                "tensor names or shapes do not describe a detector/descriptor pair".into(),
            ));
        }
        Ok(Self { arch, tensors })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_detector(name: &str) -> bool {
        name.starts_with("det.")
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for (_, t) in &mut self.tensors {
            round_to_f32(t);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(BufWriter::new(f), &self.tensors).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_tensors(read_checkpoint(BufReader::new(f))?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.tensors).expect("writing to a Vec");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_tensors(read_checkpoint(bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn default_shapes() {
        let w = ModelWeights::init(&Architecture::default(), &mut seeded_rng(0)).unwrap();
        assert_eq!(w.get("det.point2.w").unwrap().shape(), &[128, 256]);
        assert_eq!(w.get("det.pooled1.w").unwrap().shape(), &[128, 64]);
        assert_eq!(w.get("det.orient.w").unwrap().shape(), &[64, 2]);
        assert_eq!(w.get("det.attention.w").unwrap().shape(), &[64, 1]);
        assert_eq!(w.get("desc.context.w").unwrap().shape(), &[512, 128]);
        assert_eq!(w.get("desc.out.w").unwrap().shape(), &[128, 32]);
        assert!(w.get("desc.out.b").unwrap().data().iter().all(|v| *v == 0.0));
        let lim = (6.0f64 / (3 + 64) as f64).sqrt();
        assert!(w.get("det.point0.w").unwrap().data().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn bytes_round_trip_is_exact() {
        let arch = Architecture::with_dims(64, 16);
        let w = ModelWeights::init(&arch, &mut seeded_rng(3)).unwrap();
        let bytes = w.to_bytes();
        let back = ModelWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.architecture(), &arch);
    }

    #[test]
    fn rejects_foreign_tensor_sets() {
        let t = vec![("x".to_string(), Tensor::zeros(&[2, 2]))];
        assert!(ModelWeights::from_tensors(t).is_err());
    }
}
