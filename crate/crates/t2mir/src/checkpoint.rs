//! Self-describing checkpoint container: versioned header, the model config
//! as JSON, every parameter tensor (including the momentum key router) as
//! named 32-bit float arrays, optimizer moments, and the training step.

use crate::error::{Error, Result};
use crate::math::Real;
use crate::model::{ModelConfig, PolicyModel};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"T2MIRCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<(String, Vec<f32>)>,
    pub adam_t: u64,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

pub fn save_checkpoint<F: Real>(
    path: &Path,
    model: &PolicyModel<F>,
    step: u64,
    adam: Option<(u64, &[F], &[F])>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&model.cfg)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&step.to_le_bytes())?;

    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        write_name(&mut w, &t.name)?;
        write_f32s(&mut w, t.data.iter().map(|v| v.as_f64() as f32))?;
    }
    match adam {
        Some((t, m, v)) => {
            w.write_all(&1u8.to_le_bytes())?;
            w.write_all(&t.to_le_bytes())?;
            write_f32s(&mut w, m.iter().map(|x| x.as_f64() as f32))?;
            write_f32s(&mut w, v.iter().map(|x| x.as_f64() as f32))?;
        }
        None => w.write_all(&0u8.to_le_bytes())?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
    let step = read_u64(&mut r)?;

    let n = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = read_name(&mut r)?;
        tensors.push((name, read_f32s(&mut r)?));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let (adam_t, adam_m, adam_v) = if flag[0] == 1 {
        (read_u64(&mut r)?, read_f32s(&mut r)?, read_f32s(&mut r)?)
    } else {
        (0, Vec::new(), Vec::new())
    };
    Ok(Checkpoint { config, step, tensors, adam_t, adam_m, adam_v })
}

/// Rebuild a model from a checkpoint; every stored tensor must match a
/// parameter by name and length.
pub fn model_from_checkpoint<F: Real>(ckpt: &Checkpoint) -> Result<PolicyModel<F>> {
    let mut model: PolicyModel<F> = PolicyModel::init(ckpt.config.clone(), 0)?;
    let stored: std::collections::BTreeMap<&str, &Vec<f32>> =
        ckpt.tensors.iter().map(|(n, d)| (n.as_str(), d)).collect();
    for t in model.params.tensors_mut() {
        let data = stored
            .get(t.name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", t.name)))?;
        if data.len() != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} length {} != expected {}",
                t.name,
                data.len(),
                t.data.len()
            )));
        }
        for (dst, &src) in t.data.iter_mut().zip(data.iter()) {
            *dst = F::from_f64(src as f64);
        }
    }
    Ok(model)
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad tensor name: {e}")))
}

fn write_f32s<W: Write, I: ExactSizeIterator<Item = f32>>(w: &mut W, data: I) -> Result<()> {
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R) -> Result<Vec<f32>> {
    let n = read_u32(r)? as usize;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::tests_support::tiny_config;

    #[test]
    fn round_trip_is_lossless_for_f32_models() {
        let model: PolicyModel<f32> = PolicyModel::init(tiny_config(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.t2mir");
        let m = vec![0.5f32; 3];
        let v = vec![0.25f32; 3];
        save_checkpoint(&path, &model, 42, Some((9, &m, &v))).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.step, 42);
        assert_eq!(ck.adam_t, 9);
        assert_eq!(ck.adam_m, m);
        let re: PolicyModel<f32> = model_from_checkpoint(&ck).unwrap();
        for (a, b) in model.params.tensors().iter().zip(re.params.tensors().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data, "tensor {}", a.name);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.t2mir");
        std::fs::write(&path, b"NOTACKPT________").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
