//! Binary network format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "MFN1"
//! version u8       1
//! input_dim u32 | output_dim u32 | condition_dim u32
//! n_hidden u32, then n_hidden u32 widths
//! activation u8 (0 = PReLU, 1 = Tanh, 2 = ReLU)
//! residual u8 (0/1)
//! dropout_p f64
//! param_count u64, then param_count raw f64 values
//! ```
//!
//! Parameters are written bit-exactly, so decode(encode(x)) == x.

use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkSpec, ParamVector};

const MAGIC: &[u8; 4] = b"MFN1";
const VERSION: u8 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::PRelu => 0,
        Activation::Tanh => 1,
        Activation::Relu => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::PRelu),
        1 => Ok(Activation::Tanh),
        2 => Ok(Activation::Relu),
        other => Err(Error::Decode(format!("unknown activation code {other}"))),
    }
}

pub fn encode_network(spec: &NetworkSpec, params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.condition_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.hidden_dims.len() as u32).to_le_bytes());
    for &h in &spec.hidden_dims {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.push(activation_code(spec.activation));
    out.push(u8::from(spec.residual));
    out.extend_from_slice(&spec.dropout_p.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Decode("truncated input".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn decode_network_from(r: &mut Reader) -> Result<(NetworkSpec, ParamVector)> {
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    if r.u8()? != VERSION {
        return Err(Error::Decode("unsupported version".into()));
    }
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let condition_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(r.u32()? as usize);
    }
    let activation = activation_from(r.u8()?)?;
    let residual = r.u8()? != 0;
    let dropout_p = r.f64()?;
    let spec = NetworkSpec {
        input_dim,
        output_dim,
        hidden_dims,
        activation,
        residual,
        dropout_p,
        condition_dim,
    };
    spec.validate()?;
    let count = r.u64()? as usize;
    if count != spec.param_len() {
        return Err(Error::Decode(format!(
            "parameter count {count} does not match spec layout {}",
            spec.param_len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64()?);
    }
    let params = ParamVector::from_values(&spec, values)?;
    Ok((spec, params))
}

pub fn decode_network(bytes: &[u8]) -> Result<(NetworkSpec, ParamVector)> {
    let mut r = Reader::new(bytes);
    let out = decode_network_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode("trailing bytes".into()));
    }
    Ok(out)
}
