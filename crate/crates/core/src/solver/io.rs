//! Checkpoint container: a trained map plus (optionally) its dual
//! potential, framed around the binary network format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "MFC1"
//! version u8       1
//! flags   u8       bit0 ema, bit1 pad_to, bit2 mask, bit3 conditional,
//!                  bit4 potential present
//! map network block (see nn serialization)
//! [ema]   u64 count + raw f64
//! [pad_to u32]
//! [mask]  u32 len + raw f64
//! [potential network block]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::serialize_internal::{decode_network_from, Reader};
use crate::nn::{encode_network, NetworkSpec, ParamVector};
use crate::solver::TrainedMap;

const MAGIC: &[u8; 4] = b"MFC1";
const VERSION: u8 = 1;

const FLAG_EMA: u8 = 1;
const FLAG_PAD: u8 = 1 << 1;
const FLAG_MASK: u8 = 1 << 2;
const FLAG_CONDITIONAL: u8 = 1 << 3;
const FLAG_POTENTIAL: u8 = 1 << 4;

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    map: &TrainedMap,
    potential: Option<(&NetworkSpec, &ParamVector)>,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let mut flags = 0u8;
    if map.ema_params.is_some() {
        flags |= FLAG_EMA;
    }
    if map.pad_to.is_some() {
        flags |= FLAG_PAD;
    }
    if map.composite_mask.is_some() {
        flags |= FLAG_MASK;
    }
    if map.conditional {
        flags |= FLAG_CONDITIONAL;
    }
    if potential.is_some() {
        flags |= FLAG_POTENTIAL;
    }
    out.push(flags);
    out.extend_from_slice(&encode_network(&map.spec, &map.params));
    if let Some(ema) = &map.ema_params {
        out.extend_from_slice(&(ema.len() as u64).to_le_bytes());
        for v in ema.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(pad) = map.pad_to {
        out.extend_from_slice(&(pad as u32).to_le_bytes());
    }
    if let Some(mask) = &map.composite_mask {
        out.extend_from_slice(&(mask.len() as u32).to_le_bytes());
        for v in mask {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some((spec, params)) = potential {
        out.extend_from_slice(&encode_network(spec, params));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(TrainedMap, Option<(NetworkSpec, ParamVector)>)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("bad checkpoint magic".into()));
    }
    if r.u8()? != VERSION {
        return Err(Error::Decode("unsupported checkpoint version".into()));
    }
    let flags = r.u8()?;
    let (spec, params) = decode_network_from(&mut r)?;
    let ema_params = if flags & FLAG_EMA != 0 {
        let count = r.u64()? as usize;
        if count != spec.param_len() {
            return Err(Error::Decode("ema length does not match spec".into()));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.f64()?);
        }
        Some(ParamVector::from_values(&spec, values)?)
    } else {
        None
    };
    let pad_to = if flags & FLAG_PAD != 0 {
        Some(r.u32()? as usize)
    } else {
        None
    };
    let composite_mask = if flags & FLAG_MASK != 0 {
        let len = r.u32()? as usize;
        let mut mask = Vec::with_capacity(len);
        for _ in 0..len {
            mask.push(r.f64()?);
        }
        Some(mask)
    } else {
        None
    };
    let potential = if flags & FLAG_POTENTIAL != 0 {
        Some(decode_network_from(&mut r)?)
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::Decode("trailing bytes in checkpoint".into()));
    }
    Ok((
        TrainedMap {
            spec,
            params,
            ema_params,
            pad_to,
            composite_mask,
            conditional: flags & FLAG_CONDITIONAL != 0,
        },
        potential,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation};

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");

        let spec = NetworkSpec::residual(2, &[4, 4], Activation::PRelu);
        let params = init_params(&spec, 1).unwrap();
        let ema = init_params(&spec, 2).unwrap();
        let pot_spec = NetworkSpec::mlp(2, 1, &[4], Activation::Tanh);
        let pot_params = init_params(&pot_spec, 3).unwrap();

        let map = TrainedMap {
            spec: spec.clone(),
            params: params.clone(),
            ema_params: Some(ema.clone()),
            pad_to: Some(2),
            composite_mask: Some(vec![1.0, 0.0]),
            conditional: false,
        };
        save_checkpoint(&path, &map, Some((&pot_spec, &pot_params))).unwrap();
        let (loaded, pot) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.spec, spec);
        assert_eq!(loaded.params.values(), params.values());
        assert_eq!(loaded.ema_params.unwrap().values(), ema.values());
        assert_eq!(loaded.pad_to, Some(2));
        assert_eq!(loaded.composite_mask, Some(vec![1.0, 0.0]));
        let (ps, pp) = pot.unwrap();
        assert_eq!(ps, pot_spec);
        assert_eq!(pp.values(), pot_params.values());
    }

    #[test]
    fn minimal_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let spec = NetworkSpec::mlp(1, 1, &[2], Activation::Tanh);
        let map = TrainedMap {
            spec: spec.clone(),
            params: init_params(&spec, 0).unwrap(),
            ema_params: None,
            pad_to: None,
            composite_mask: None,
            conditional: false,
        };
        save_checkpoint(&path, &map, None).unwrap();
        let (loaded, pot) = load_checkpoint(&path).unwrap();
        assert!(pot.is_none());
        assert!(loaded.ema_params.is_none());
        assert_eq!(loaded.spec, spec);
    }
}
