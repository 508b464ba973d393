//! Plain-text and binary serialization of fields.
//!
//! Binary block layout: the 8-byte magic `DGCBLK01`, a little-endian `u32`
//! rank, one little-endian `u64` per dimension, then the row-major `f64`
//! payload in little-endian order.

use std::io::{Read, Write};

use super::field::Field;
use super::grid::Grid;
use crate::error::{Error, Result};

pub const BLOCK_MAGIC: &[u8; 8] = b"DGCBLK01";

/// CSV with header `a,x,value`, one row per cell center.
pub fn write_field_csv<W: Write>(mut w: W, grid: &Grid, field: &Field) -> Result<()> {
    writeln!(w, "a,x,value")?;
    for j in 0..field.na {
        let a = grid.a(j);
        for i in 0..field.nx {
            writeln!(w, "{},{},{}", a, grid.x_centers[i], field.get(j, i))?;
        }
    }
    Ok(())
}

pub fn write_block<W: Write>(mut w: W, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch { expected: format!("{dims:?}"), found: data.len().to_string() });
    }
    w.write_all(BLOCK_MAGIC)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_block<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BLOCK_MAGIC {
        return Err(Error::Format("bad block magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let ndim = u32::from_le_bytes(b4) as usize;
    if ndim > 16 {
        return Err(Error::Format(format!("implausible rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut b8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut b8)?;
        dims.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = dims.iter().product();
    let mut payload = vec![0u8; 8 * n];
    r.read_exact(&mut payload)?;
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after block", rest.len())));
    }
    Ok((dims, data))
}

/// Writes a stack of equally shaped fields as a rank-3 block.
pub fn write_fields_block<W: Write>(w: W, fields: &[Field]) -> Result<()> {
    let (na, nx) = fields.first().map(|f| (f.na, f.nx)).unwrap_or((0, 0));
    let mut data = Vec::with_capacity(fields.len() * na * nx);
    for f in fields {
        if f.na != na || f.nx != nx {
            return Err(Error::ShapeMismatch { expected: format!("{na}x{nx}"), found: format!("{}x{}", f.na, f.nx) });
        }
        data.extend_from_slice(&f.values);
    }
    write_block(w, &[fields.len(), na, nx], &data)
}

pub fn read_fields_block<R: Read>(r: R) -> Result<Vec<Field>> {
    let (dims, data) = read_block(r)?;
    if dims.len() != 3 {
        return Err(Error::Format(format!("expected rank 3, found {}", dims.len())));
    }
    let (na, nx) = (dims[1], dims[2]);
    Ok(data.chunks(na * nx.max(1)).take(dims[0]).map(|c| Field { na, nx, values: c.to_vec() }).collect())
}
