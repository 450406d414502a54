//! Binary parameter files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes   "HNAVPRM\0"
//! version    u32       1
//! kind       u32       1 = cooperation classifier, 2 = horizon policy
//! n_dims     u32
//! dims       n_dims × u64   architecture sizes (meaning depends on kind)
//! n_tensors  u32
//! per tensor:
//!   rank     u32
//!   shape    rank × u64
//!   values   product(shape) × f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::Parameters;

pub const MAGIC: &[u8; 8] = b"HNAVPRM\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ParamKind {
    Coop = 1,
    Policy = 2,
}

pub fn write_params<P: Parameters>(w: &mut impl Write, kind: ParamKind, dims: &[u64], params: &P) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(kind as u32)?;
    w.write_u32::<LE>(dims.len() as u32)?;
    for &d in dims {
        w.write_u64::<LE>(d)?;
    }
    let tensors = params.tensors();
    w.write_u32::<LE>(tensors.len() as u32)?;
    for t in tensors {
        w.write_u32::<LE>(t.ndim() as u32)?;
        for &s in t.shape() {
            w.write_u64::<LE>(s as u64)?;
        }
        for &v in t.iter() {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

/// Reads the header, builds an empty parameter set from the dims with
/// `make`, then fills it, checking every shape.
pub fn read_params<P: Parameters>(
    r: &mut impl Read,
    kind: ParamKind,
    make: impl FnOnce(&[u64]) -> Option<P>,
) -> std::result::Result<P, String> {
    let io = |e: std::io::Error| format!("truncated or unreadable: {e}");
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let k = r.read_u32::<LE>().map_err(io)?;
    if k != kind as u32 {
        return Err(format!("expected kind {}, found {k}", kind as u32));
    }
    let n_dims = r.read_u32::<LE>().map_err(io)?;
    if n_dims > 64 {
        return Err(format!("implausible dim count {n_dims}"));
    }
    let dims = (0..n_dims).map(|_| r.read_u64::<LE>()).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
    let mut params = make(&dims).ok_or_else(|| format!("invalid dims {dims:?}"))?;
    let n = r.read_u32::<LE>().map_err(io)? as usize;
    let mut tensors = params.tensors_mut();
    if n != tensors.len() {
        return Err(format!("expected {} tensors, found {n}", tensors.len()));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let rank = r.read_u32::<LE>().map_err(io)? as usize;
        let shape = (0..rank).map(|_| r.read_u64::<LE>().map(|s| s as usize)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
        if shape != t.shape() {
            return Err(format!("tensor {i}: expected shape {:?}, found {shape:?}", t.shape()));
        }
        for v in t.iter_mut() {
            *v = r.read_f64::<LE>().map_err(io)?;
        }
    }
    drop(tensors);
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err("trailing bytes".into());
    }
    if !params.is_finite() {
        return Err("non-finite weights".into());
    }
    Ok(params)
}

pub fn save<P: Parameters>(path: &Path, kind: ParamKind, dims: &[u64], params: &P) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, kind, dims, params).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load<P: Parameters>(path: &Path, kind: ParamKind, make: impl FnOnce(&[u64]) -> Option<P>) -> Result<P> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file), kind, make).map_err(|reason| Error::ParamFormat {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2, ArrayViewD, ArrayViewMutD};

    #[derive(Debug, Clone, PartialEq)]
    struct Toy {
        w: Array2<f64>,
        b: Array1<f64>,
    }

    impl Parameters for Toy {
        fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
            vec![self.w.view().into_dyn(), self.b.view().into_dyn()]
        }
        fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
            vec![self.w.view_mut().into_dyn(), self.b.view_mut().into_dyn()]
        }
    }

    fn make(d: &[u64]) -> Option<Toy> {
        let [r, c] = d else { return None };
        Some(Toy {
            w: Array2::zeros((*r as usize, *c as usize)),
            b: Array1::zeros(*c as usize),
        })
    }

    #[test]
    fn byte_layout_and_round_trip() {
        let toy = Toy {
            w: array![[1.0, 2.0]],
            b: array![-0.5, 0.25],
        };
        let mut buf = Vec::new();
        write_params(&mut buf, ParamKind::Coop, &[1, 2], &toy).unwrap();
        assert_eq!(&buf[..8], b"HNAVPRM\0");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        // header 20 + dims 16 + count 4 + (4 + 16 + 16) + (4 + 8 + 16)
        assert_eq!(buf.len(), 20 + 16 + 4 + 36 + 28);
        assert_eq!(&buf[buf.len() - 8..], &0.25f64.to_le_bytes());
        let back = read_params(&mut buf.as_slice(), ParamKind::Coop, make).unwrap();
        assert_eq!(back, toy);
    }

    #[test]
    fn rejects_corruption() {
        let toy = make(&[2, 3]).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, ParamKind::Coop, &[2, 3], &toy).unwrap();
        assert!(read_params(&mut buf.as_slice(), ParamKind::Policy, make).is_err());
        assert!(read_params(&mut &buf[..buf.len() - 1], ParamKind::Coop, make).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_params(&mut extra.as_slice(), ParamKind::Coop, make).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(&mut bad.as_slice(), ParamKind::Coop, make).is_err());
    }
}
