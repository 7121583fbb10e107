//! Columnar binary format for path ensembles.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "PPDE" | version u32 | dim u32 | n_steps u32 | n_paths u64 | seed u64
//! s f64 | x (dim f64) | times (n_steps+1 f64) | clock weights (n_steps f64)
//! states  (n_paths * (n_steps+1) * dim f64, path-major)
//! increments (n_paths * n_steps * dim f64, path-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::forward::ensemble::PathEnsemble;
use crate::grid::TimeGrid;

pub const MAGIC: [u8; 4] = *b"PPDE";
pub const VERSION: u32 = 1;

pub fn write_ensemble(ensemble: &PathEnsemble, w: &mut impl Write) -> Result<()> {
    let grid = ensemble.grid();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ensemble.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.n_steps() as u32).to_le_bytes())?;
    w.write_all(&(ensemble.n_paths() as u64).to_le_bytes())?;
    w.write_all(&ensemble.seed().to_le_bytes())?;
    write_f64s(w, &[ensemble.start_time()])?;
    write_f64s(w, ensemble.start_state())?;
    write_f64s(w, grid.times())?;
    write_f64s(w, grid.dv_weights())?;
    write_f64s(w, ensemble.raw_states())?;
    write_f64s(w, ensemble.raw_increments())?;
    Ok(())
}

pub fn read_ensemble(r: &mut impl Read) -> Result<PathEnsemble> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Config(format!(
            "bad magic {magic:?}, not an ensemble file"
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CoreError::Config(format!(
            "ensemble format version {version}, this build reads {VERSION}"
        )));
    }
    let dim = read_u32(r)? as usize;
    let n_steps = read_u32(r)? as usize;
    let n_paths = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    if dim == 0 || n_steps == 0 || n_paths == 0 {
        return Err(CoreError::Config("ensemble header has a zero dimension".into()));
    }
    let s = read_f64s(r, 1)?[0];
    let x = read_f64s(r, dim)?;
    let times = read_f64s(r, n_steps + 1)?;
    let dv = read_f64s(r, n_steps)?;
    let states = read_f64s(r, n_paths * (n_steps + 1) * dim)?;
    let increments = read_f64s(r, n_paths * n_steps * dim)?;
    let grid = TimeGrid::from_times(times)?.with_clock_weights(dv)?;
    PathEnsemble::from_parts(grid, s, x, n_paths, states, increments, seed)
}

pub fn write_ensemble_file(ensemble: &PathEnsemble, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ensemble(ensemble, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_ensemble_file(path: &Path) -> Result<PathEnsemble> {
    let mut r = BufReader::new(File::open(path)?);
    read_ensemble(&mut r)
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * values.len().min(1 << 16));
    for chunk in values.chunks(1 << 13) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
