//! Binary weight files.
//!
//! Layout, all integers `u32` little-endian:
//! `b"TSEGNET\0"`, version, config (in_channels, height, width, categories,
//! bins, patch, inpaint_hidden, texture_hidden, disc_hidden, n_widths,
//! widths...), tensor count, then per tensor `ndim`, dims, and `f32` LE data.
//! Weights are `[cout, cin, k, k]`, biases `[cout]`.

use std::path::Path;

use super::refnet::{RefNet, RefNetConfig};
use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 8] = b"TSEGNET\0";
pub const VERSION: u32 = 1;

fn put(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(net: &RefNet<f32>) -> Vec<u8> {
    let c = &net.config;
    let mut out = MAGIC.to_vec();
    put(&mut out, VERSION as usize);
    for v in [
        c.in_channels,
        c.height,
        c.width,
        c.categories,
        c.bins,
        c.patch,
        c.inpaint_hidden,
        c.texture_hidden,
        c.disc_hidden,
        c.widths.len(),
    ] {
        put(&mut out, v);
    }
    c.widths.iter().for_each(|&w| put(&mut out, w));
    put(&mut out, net.tensors().len());
    for layer in net.layers() {
        let s = layer.shape;
        for (dims, data) in [
            (vec![s.cout, s.cin, s.kernel, s.kernel], &layer.weight),
            (vec![s.cout], &layer.bias),
        ] {
            put(&mut out, dims.len());
            dims.iter().for_each(|&d| put(&mut out, d));
            data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<RefNet<f32>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a network checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut f = [0usize; 10];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    if f[9] > 64 {
        return Err(format!("implausible encoder depth {}", f[9]));
    }
    let widths = (0..f[9]).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let config = RefNetConfig {
        in_channels: f[0],
        height: f[1],
        width: f[2],
        categories: f[3],
        bins: f[4],
        patch: f[5],
        inpaint_hidden: f[6],
        texture_hidden: f[7],
        disc_hidden: f[8],
        widths,
    };
    let mut net = RefNet::<f32>::init(config, 0).map_err(|e| e.to_string())?;
    let count = r.u32()?;
    let tensors = net.tensors_mut();
    if count != tensors.len() {
        return Err(format!("expected {} tensors, found {count}", tensors.len()));
    }
    for (i, t) in tensors.into_iter().enumerate() {
        let ndim = r.u32()?;
        if ndim > 4 {
            return Err(format!("tensor {i}: {ndim} dimensions"));
        }
        let len: usize = (0..ndim).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?.iter().product();
        if len != t.len() {
            return Err(format!("tensor {i}: {len} values, expected {}", t.len()));
        }
        for (v, chunk) in t.iter_mut().zip(r.take(4 * len)?.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(net)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<RefNet<f32>> {
    parse(bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save(path: &Path, net: &RefNet<f32>) -> Result<()> {
    io::write_atomic(path, &to_bytes(net))
}

pub fn load(path: &Path) -> Result<RefNet<f32>> {
    from_bytes(&io::read_bytes(path)?, path)
}
