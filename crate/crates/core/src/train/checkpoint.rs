//! Checkpoint container.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic        8 bytes "SSMRULCK"
//! version      u32     1
//! config       u64 length + UTF-8 JSON of the training config
//! target_scale f64
//! steps        u64
//! rng          32-byte seed, u64 stream, u128 word position
//! normalizer   u64 F, F x f64 mean, F x f64 std
//! params       u64 count, each: u32 name length, name, u8 group,
//!              u32 rank, rank x u64 dims, f64 values
//! ```

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainConfig, TrainError};
use crate::data::Normalizer;
use crate::model::{build_model, Model, ParamGroup};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SSMRULCK";
const VERSION: u32 = 1;

/// Everything needed to resume evaluation: parameters, the config that
/// built them, the fitted normalizer, the target scale and the training
/// random stream.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub normalizer: Normalizer,
    pub target_scale: f64,
    pub rng: ChaCha8Rng,
    pub steps: u64,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let json = ckpt.config.to_json();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(json.as_bytes())?;
    w.write_all(&ckpt.target_scale.to_le_bytes())?;
    w.write_all(&ckpt.steps.to_le_bytes())?;
    w.write_all(&ckpt.rng.get_seed())?;
    w.write_all(&ckpt.rng.get_stream().to_le_bytes())?;
    w.write_all(&ckpt.rng.get_word_pos().to_le_bytes())?;
    let n = &ckpt.normalizer;
    w.write_all(&(n.num_features() as u64).to_le_bytes())?;
    for v in n.mean.iter().chain(&n.std) {
        w.write_all(&v.to_le_bytes())?;
    }
    let params = ckpt.model.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[match p.group {
            ParamGroup::Standard => 0u8,
            ParamGroup::Ssm => 1u8,
        }])?;
        w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&p.value.to_le_bytes())?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn length<R: Read>(r: &mut R, limit: u64) -> Result<usize> {
    let v = u64::from_le_bytes(array(r)?);
    if v > limit {
        return Err(bad(format!("length {v} exceeds {limit}")));
    }
    Ok(v as usize)
}

fn floats<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(array(r)?))).collect()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &array::<_, 8>(&mut r)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(array(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let json_len = length(&mut r, 1 << 24)?;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let config: TrainConfig =
        serde_json::from_slice(&json).map_err(|e| bad(format!("config: {e}")))?;
    let target_scale = f64::from_le_bytes(array(&mut r)?);
    let steps = u64::from_le_bytes(array(&mut r)?);
    let mut rng = ChaCha8Rng::from_seed(array(&mut r)?);
    rng.set_stream(u64::from_le_bytes(array(&mut r)?));
    rng.set_word_pos(u128::from_le_bytes(array(&mut r)?));
    let f = length(&mut r, 1 << 20)?;
    let mean = floats(&mut r, f)?;
    let std = floats(&mut r, f)?;

    let mut model_cfg = config.model.clone();
    model_cfg.seed = config.seed;
    let mut model = build_model(&model_cfg)?;
    let count = length(&mut r, 1 << 20)?;
    if count != model.params().len() {
        return Err(bad(format!(
            "{count} parameters stored, config builds {}",
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for p in model.params().iter() {
        let name_len = u32::from_le_bytes(array(&mut r)?) as usize;
        if name_len > 4096 {
            return Err(bad(format!("parameter name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        if name != p.name.as_bytes() {
            return Err(bad(format!(
                "expected parameter {}, found {}",
                p.name,
                String::from_utf8_lossy(&name)
            )));
        }
        let group = array::<_, 1>(&mut r)?[0];
        let want = match p.group {
            ParamGroup::Standard => 0,
            ParamGroup::Ssm => 1,
        };
        if group != want {
            return Err(bad(format!("parameter {} has the wrong group", p.name)));
        }
        let rank = u32::from_le_bytes(array(&mut r)?) as usize;
        let shape = (0..rank)
            .map(|_| length(&mut r, 1 << 32))
            .collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(bad(format!(
                "parameter {} has shape {shape:?}, config builds {:?}",
                p.name,
                p.value.shape()
            )));
        }
        values.push(Tensor::new(shape, floats(&mut r, p.value.numel())?)?);
    }
    model.params_mut().set_values(values)?;
    Ok(Checkpoint {
        config,
        model,
        normalizer: Normalizer { mean, std },
        target_scale,
        rng,
        steps,
    })
}
