//! Binary checkpoints: config plus every named parameter, bit-exact.
//!
//! Layout: an 8-byte magic, a length-prefixed config JSON blob, then the
//! parameters in canonical order, each as length-prefixed name, shape,
//! and little-endian f64 data. Loading validates names and shapes
//! against a freshly built parameter set; auxiliary heads may be absent
//! (a translation-only checkpoint) and are then freshly initialized.

use std::io::{Read, Write};

use autodiff::Real;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::{ModelError, ModelResult};

const MAGIC: &[u8; 8] = b"NCTCKPT1";

/// What a load actually did: which parameters came from the file and
/// which were freshly initialized.
#[derive(Debug, Clone)]
pub struct LoadManifest {
    pub loaded: Vec<String>,
    pub fresh: Vec<String>,
}

impl LoadManifest {
    pub fn describe(&self) -> String {
        if self.fresh.is_empty() {
            format!("{} parameters loaded", self.loaded.len())
        } else {
            format!(
                "{} parameters loaded; freshly initialized: {}",
                self.loaded.len(),
                self.fresh.join(", ")
            )
        }
    }
}

/// Write all parameters. `theta_only` drops the auxiliary heads,
/// producing a stage-1 artifact.
pub fn save_checkpoint<W: Write>(
    params: &ModelParams,
    w: &mut W,
    theta_only: bool,
) -> ModelResult<()> {
    w.write_all(MAGIC)?;
    let config = serde_json::to_vec(&params.config)
        .map_err(|e| ModelError::Checkpoint(format!("config serialization: {e}")))?;
    write_u32(w, config.len() as u32)?;
    w.write_all(&config)?;

    let saved: Vec<_> = params
        .iter()
        .filter(|p| !(theta_only && ModelParams::is_aux(&p.name)))
        .collect();
    write_u32(w, saved.len() as u32)?;
    for p in saved {
        let name = p.name.as_bytes();
        write_u32(w, name.len() as u32)?;
        w.write_all(name)?;
        write_u32(w, p.shape.len() as u32)?;
        for &dim in &p.shape {
            write_u32(w, dim as u32)?;
        }
        for &x in &p.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint. Parameters present in the file overwrite a fresh
/// initialization seeded by `fresh_seed`; absent auxiliary heads keep
/// their fresh values and are reported in the manifest. Absent
/// translation parameters, unknown names, and shape mismatches are
/// errors.
pub fn load_checkpoint<R: Read>(
    r: &mut R,
    fresh_seed: u64,
) -> ModelResult<(ModelParams, LoadManifest)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(
            "bad magic: not a model checkpoint".into(),
        ));
    }
    let config_len = read_u32(r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| ModelError::Checkpoint(format!("config parse: {e}")))?;

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(fresh_seed);
    let mut params = ModelParams::new(config, &mut rng)?;

    let count = read_u32(r)? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;

        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0 as Real; numel];
        let mut buf = [0u8; 8];
        for x in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *x = Real::from_le_bytes(buf);
        }

        let slot = params
            .get_mut(&name)
            .ok_or_else(|| ModelError::UnknownParam(name.clone()))?;
        if slot.shape != shape {
            return Err(ModelError::ParamShape {
                name,
                expected: slot.shape.clone(),
                got: shape,
            });
        }
        slot.data = data;
        loaded.push(name);
    }

    let mut fresh = Vec::new();
    for p in params.iter() {
        if !loaded.contains(&p.name) {
            if ModelParams::is_aux(&p.name) {
                fresh.push(p.name.clone());
            } else {
                return Err(ModelError::MissingParam(p.name.clone()));
            }
        }
    }
    Ok((params, LoadManifest { loaded, fresh }))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
