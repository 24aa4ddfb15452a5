//! `CSID` dataset files.
//!
//! Little-endian: magic `CSID`, then `u32` version (1), count, N_r, N_t,
//! N_c, followed by `count × N_r·N_t·N_c` complex entries stored as
//! interleaved `f32` (re, im) in the `(r, n·N_t + t)` layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex32;

use super::{CsiDims, CsiSample};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CSID";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u32,
    pub dims: CsiDims,
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[CsiSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(w: &mut W, samples: &[CsiSample]) -> Result<()> {
    let dims = match samples.first() {
        Some(s) => s.dims,
        None => return Err(Error::InvalidArgument("refusing to write an empty dataset".into())),
    };
    if let Some(bad) = samples.iter().find(|s| s.dims != dims || s.h.len() != dims.complex_len()) {
        return Err(Error::Shape(format!(
            "mixed sample geometry: {:?} vs {:?}",
            bad.dims, dims
        )));
    }
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        samples.len() as u32,
        dims.n_rx as u32,
        dims.n_tx as u32,
        dims.n_sc as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in samples {
        for c in &s.h {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<CsiSample>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset_from(&mut r)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated dataset while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<(DatasetHeader, Vec<CsiSample>)> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"CSID\"")));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = read_u32(r, "count")?;
    let dims = CsiDims {
        n_rx: read_u32(r, "N_r")? as usize,
        n_tx: read_u32(r, "N_t")? as usize,
        n_sc: read_u32(r, "N_c")? as usize,
    };
    if dims.complex_len() == 0 {
        return Err(Error::Format(format!("degenerate dimensions {dims:?}")));
    }
    let per = dims.complex_len();
    let mut buf = vec![0u8; per * 8];
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        read_exact_or(r, &mut buf, &format!("sample {i} of {count}"))?;
        let h = buf
            .chunks_exact(8)
            .map(|b| {
                Complex32::new(
                    f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                    f32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                )
            })
            .collect();
        samples.push(CsiSample { dims, h, meta: None });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after declared sample count".into()));
    }
    Ok((
        DatasetHeader {
            version,
            count,
            dims,
        },
        samples,
    ))
}
