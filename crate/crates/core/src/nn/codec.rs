//! Binary tensor container: magic, format version, a JSON manifest, then
//! length-prefixed little-endian f64 tensors in manifest order.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Linear};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DPCGANS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn matrix(name: String, a: &Array2<f64>) -> Self {
        NamedTensor { name, shape: a.shape().to_vec(), data: a.iter().copied().collect() }
    }

    fn vector(name: String, a: &Array1<f64>) -> Self {
        NamedTensor { name, shape: vec![a.len()], data: a.to_vec() }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A manifest plus its tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::ModelFormat(format!("corrupt payload: {what}"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(format!("truncated {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let body: usize = self.tensors.iter().map(|t| 8 + 8 * t.data.len()).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 4 + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "header")? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let len = usize::try_from(r.u64("manifest length")?).map_err(|_| corrupt("manifest length"))?;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len, "manifest")?).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        if count != manifest.tensors.len() {
            return Err(corrupt(format!("{count} tensors stored, manifest lists {}", manifest.tensors.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for entry in manifest.tensors {
            let n = usize::try_from(r.u64("tensor length")?).map_err(|_| corrupt("tensor length"))?;
            let expected: usize = entry.shape.iter().product();
            if n != expected {
                return Err(corrupt(format!("tensor {} has {n} values, shape {:?}", entry.name, entry.shape)));
            }
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor length"))?, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name: entry.name, shape: entry.shape, data });
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Container { meta: manifest.meta, tensors })
    }
}

/// Name-indexed view of a tensor list for reconstruction.
pub struct TensorMap(HashMap<String, NamedTensor>);

impl TensorMap {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        TensorMap(tensors.into_iter().map(|t| (t.name.clone(), t)).collect())
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self.0.remove(name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data)
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((rows, cols), self.take(name, &[rows, cols])?).expect("shape checked"))
    }

    pub fn vector(&mut self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.take(name, &[len])?))
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), output, input)?,
            bias: self.vector(&format!("{prefix}.bias"), output)?,
        })
    }
}

fn push_linear(out: &mut Vec<NamedTensor>, prefix: &str, l: &Linear) {
    out.push(NamedTensor::matrix(format!("{prefix}.weight"), &l.weight));
    out.push(NamedTensor::vector(format!("{prefix}.bias"), &l.bias));
}

impl Generator {
    pub fn export_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, (linear, bn)) in self.hidden.iter().enumerate() {
            let p = format!("{prefix}.hidden{i}");
            push_linear(&mut out, &p, linear);
            out.push(NamedTensor::vector(format!("{p}.bn.gamma"), &bn.gamma));
            out.push(NamedTensor::vector(format!("{p}.bn.beta"), &bn.beta));
            out.push(NamedTensor::vector(format!("{p}.bn.running_mean"), &bn.running_mean));
            out.push(NamedTensor::vector(format!("{p}.bn.running_var"), &bn.running_var));
        }
        push_linear(&mut out, &format!("{prefix}.output"), &self.output);
        out
    }

    pub fn import_tensors(config: GeneratorConfig, map: &mut TensorMap, prefix: &str) -> Result<Self> {
        config.validate().map_err(|e| corrupt(e))?;
        let mut width = config.input_dim();
        let mut hidden = Vec::new();
        for (i, &h) in config.hidden.iter().enumerate() {
            let p = format!("{prefix}.hidden{i}");
            let linear = map.linear(&p, width, h)?;
            let bn = BatchNorm {
                gamma: map.vector(&format!("{p}.bn.gamma"), h)?,
                beta: map.vector(&format!("{p}.bn.beta"), h)?,
                running_mean: map.vector(&format!("{p}.bn.running_mean"), h)?,
                running_var: map.vector(&format!("{p}.bn.running_var"), h)?,
            };
            hidden.push((linear, bn));
            width = h;
        }
        let output = map.linear(&format!("{prefix}.output"), width, config.output_dim)?;
        Ok(Generator { config, hidden, output })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Container {
            meta: serde_json::json!({ "kind": "generator", "config": self.config }),
            tensors: self.export_tensors("generator"),
        }
        .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        let config = net_config(&c.meta, "generator")?;
        Generator::import_tensors(config, &mut TensorMap::new(c.tensors), "generator")
    }
}

impl Discriminator {
    pub fn export_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, linear) in self.hidden.iter().enumerate() {
            push_linear(&mut out, &format!("{prefix}.hidden{i}"), linear);
        }
        push_linear(&mut out, &format!("{prefix}.output"), &self.output);
        out
    }

    pub fn import_tensors(config: DiscriminatorConfig, map: &mut TensorMap, prefix: &str) -> Result<Self> {
        config.validate().map_err(|e| corrupt(e))?;
        let mut width = config.input_dim();
        let mut hidden = Vec::new();
        for (i, &h) in config.hidden.iter().enumerate() {
            hidden.push(map.linear(&format!("{prefix}.hidden{i}"), width, h)?);
            width = h;
        }
        let output = map.linear(&format!("{prefix}.output"), width, 1)?;
        Ok(Discriminator { config, hidden, output })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Container {
            meta: serde_json::json!({ "kind": "discriminator", "config": self.config }),
            tensors: self.export_tensors("discriminator"),
        }
        .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        let config = net_config(&c.meta, "discriminator")?;
        Discriminator::import_tensors(config, &mut TensorMap::new(c.tensors), "discriminator")
    }
}

fn net_config<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, kind: &str) -> Result<T> {
    if meta.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(corrupt(format!("payload is not a {kind}")));
    }
    serde_json::from_value(meta["config"].clone()).map_err(|e| corrupt(format!("{kind} config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::functional::gumbel_matrix;
    use crate::nn::{Mode, OutputSpan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generator(rng: &mut ChaCha8Rng) -> Generator {
        let cfg = GeneratorConfig {
            noise_dim: 3,
            cond_dim: 2,
            hidden: vec![5, 4],
            output_dim: 3,
            spans: vec![OutputSpan::Tanh { offset: 0 }, OutputSpan::Softmax { offset: 1, width: 2 }],
            tau: 0.2,
        };
        let mut g = Generator::new(cfg, rng).unwrap();
        g.hidden[0].1.running_mean[2] = 0.25;
        g.hidden[1].1.running_var[1] = 1.75;
        g
    }

    #[test]
    fn generator_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = generator(&mut rng);
        let back = Generator::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        let z = Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>());
        let c = Array2::zeros((4, 2));
        let gn = gumbel_matrix(4, 3, &mut rng);
        let a = g.forward(z.view(), c.view(), gn.view(), Mode::Eval).unwrap();
        let b = back.forward(z.view(), c.view(), gn.view(), Mode::Eval).unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn discriminator_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Discriminator::new(DiscriminatorConfig::new(3, vec![4, 4]), &mut rng).unwrap();
        assert_eq!(Discriminator::from_bytes(&d.to_bytes()).unwrap(), d);
        assert!(Generator::from_bytes(&d.to_bytes()).is_err());
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bytes = generator(&mut rng).to_bytes();
        for cut in [0, 5, 12, 40, bytes.len() - 1] {
            let err = Generator::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("corrupt payload"), "{err}");
        }
    }

    #[test]
    fn bumped_version_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut bytes = generator(&mut rng).to_bytes();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let err = Generator::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported format version 2"), "{err}");
    }
}
