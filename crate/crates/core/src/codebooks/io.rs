//! Binary codebook container with a JSON metadata sidecar.
//!
//! Layout (little-endian):
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `NFCB`                            |
//! | 2     | version (1)                             |
//! | 1     | kind: 0 DFT, 1 spherical, 2 DPSS        |
//! | 1     | precision: 0 complex64, 1 complex128    |
//! | 4     | `n_t`                                   |
//! | 4     | `n_r`                                   |
//! | 8     | `beta` (DFT, spherical) or `x_hat`      |
//! | 8     | 0 (DFT, spherical) or `y_hat`           |
//! | 8     | `M`                                     |
//!
//! followed by the `(n_t n_r) x M` matrix, column-major, interleaved re/im.
//! The sidecar `<path>.meta.json` holds the construction parameters and the
//! per-codeword metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Codebook, CodebookKind, CodebookParams, CodewordMeta};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

const MAGIC: &[u8; 4] = b"NFCB";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Complex64,
    Complex128,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: CodebookKind,
    n_t: usize,
    n_r: usize,
    params: CodebookParams,
    meta: Vec<CodewordMeta>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn kind_code(kind: CodebookKind) -> u8 {
    match kind {
        CodebookKind::Dft => 0,
        CodebookKind::Spherical => 1,
        CodebookKind::Dpss => 2,
    }
}

fn header_params(p: CodebookParams) -> (f64, f64) {
    match p {
        CodebookParams::Oversampling { beta } | CodebookParams::PolarGrid { beta, .. } => (beta, 0.0),
        CodebookParams::Location { x_hat, y_hat } => (x_hat, y_hat),
    }
}

pub fn write_codebook(cb: &Codebook, path: &Path, precision: Precision) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (a, b) = header_params(cb.params());
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.push(kind_code(cb.kind()));
    header.push(match precision {
        Precision::Complex64 => 0,
        Precision::Complex128 => 1,
    });
    header.extend_from_slice(&(cb.n_t() as u32).to_le_bytes());
    header.extend_from_slice(&(cb.n_r() as u32).to_le_bytes());
    header.extend_from_slice(&a.to_le_bytes());
    header.extend_from_slice(&b.to_le_bytes());
    header.extend_from_slice(&(cb.len() as u64).to_le_bytes());
    debug_assert_eq!(header.len(), HEADER_LEN);

    let io = |e| Error::io(path, e);
    w.write_all(&header).map_err(io)?;
    for z in cb.matrix().iter() {
        match precision {
            Precision::Complex64 => {
                w.write_all(&(z.re as f32).to_le_bytes()).map_err(io)?;
                w.write_all(&(z.im as f32).to_le_bytes()).map_err(io)?;
            }
            Precision::Complex128 => {
                w.write_all(&z.re.to_le_bytes()).map_err(io)?;
                w.write_all(&z.im.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;

    let side = sidecar_path(path);
    let sidecar = Sidecar {
        kind: cb.kind(),
        n_t: cb.n_t(),
        n_r: cb.n_r(),
        params: cb.params(),
        meta: cb.meta().to_vec(),
    };
    let f = File::create(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::to_writer(BufWriter::new(f), &sidecar)?;
    Ok(())
}

fn take<const N: usize>(buf: &[u8], at: &mut usize) -> [u8; N] {
    let out: [u8; N] = buf[*at..*at + N].try_into().expect("slice length");
    *at += N;
    out
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let mut at = 0;
    if &take::<4>(&header, &mut at) != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&header, &mut at));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match take::<1>(&header, &mut at)[0] {
        0 => CodebookKind::Dft,
        1 => CodebookKind::Spherical,
        2 => CodebookKind::Dpss,
        k => return Err(Error::Format(format!("unknown kind code {k}"))),
    };
    let precision = match take::<1>(&header, &mut at)[0] {
        0 => Precision::Complex64,
        1 => Precision::Complex128,
        p => return Err(Error::Format(format!("unknown precision code {p}"))),
    };
    let n_t = u32::from_le_bytes(take(&header, &mut at)) as usize;
    let n_r = u32::from_le_bytes(take(&header, &mut at)) as usize;
    let a = f64::from_le_bytes(take(&header, &mut at));
    let b = f64::from_le_bytes(take(&header, &mut at));
    let m = u64::from_le_bytes(take(&header, &mut at)) as usize;

    let side = sidecar_path(path);
    let f = File::open(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(f))?;
    if sidecar.kind != kind || sidecar.n_t != n_t || sidecar.n_r != n_r || sidecar.meta.len() != m {
        return Err(Error::Format("sidecar disagrees with container header".into()));
    }
    if header_params(sidecar.params) != (a, b) {
        return Err(Error::Format("sidecar parameters disagree with header".into()));
    }

    let entries = n_t * n_r * m;
    let width = match precision {
        Precision::Complex64 => 8,
        Precision::Complex128 => 16,
    };
    let mut payload = vec![0u8; entries * width];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data: Vec<C64> = payload
        .chunks_exact(width)
        .map(|c| match precision {
            Precision::Complex64 => C64::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
            ),
            Precision::Complex128 => C64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            ),
        })
        .collect();
    let matrix = CMatrix::from_vec(n_t * n_r, m, data);
    Codebook::from_dense(kind, n_t, n_r, sidecar.params, matrix, sidecar.meta)
}
