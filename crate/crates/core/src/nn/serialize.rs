//! Flat binary checkpoint format for [`ParamStore`].
//!
//! Little-endian, bit-exact round trip: magic, entry count, then per entry
//! name, trainable flag, dtype, dims and raw data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::ParamStore;
use crate::tensor::{fs, sc, Scalar};
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"BDLP1";

fn dtype_tag<F: Scalar>() -> u8 {
    match F::DTYPE {
        "f32" => 4,
        "f64" => 8,
        _ => unreachable!(),
    }
}

pub fn save_params<F: Scalar>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&[store.trainable(id) as u8, dtype_tag::<F>()])
            .map_err(io)?;
        let value = store.value(id);
        w.write_all(&[value.ndim() as u8]).map_err(io)?;
        for &d in value.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in value.iter() {
            let x = fs(*v);
            if dtype_tag::<F>() == 4 {
                w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
            } else {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_params<F: Scalar>(path: &Path) -> Result<ParamStore<F>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Store(format!(
            "{}: not a parameter checkpoint",
            path.display()
        )));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(io)?;
    let count = u32::from_le_bytes(u32b) as usize;

    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut u16b = [0u8; 2];
        r.read_exact(&mut u16b).map_err(io)?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Store(format!("{}: bad parameter name", path.display())))?;
        let mut flags = [0u8; 3];
        r.read_exact(&mut flags).map_err(io)?;
        let (trainable, dtype, ndim) = (flags[0] != 0, flags[1], flags[2] as usize);
        if dtype != dtype_tag::<F>() {
            return Err(Error::Store(format!(
                "{}: checkpoint dtype tag {} does not match requested {}",
                path.display(),
                dtype,
                F::DTYPE
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u32b).map_err(io)?;
            dims.push(u32::from_le_bytes(u32b) as usize);
        }
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        if dtype == 4 {
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io)?;
                values.push(sc::<F>(f32::from_le_bytes(buf) as f64));
            }
        } else {
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io)?;
                values.push(sc::<F>(f64::from_le_bytes(buf)));
            }
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&dims), values)
            .map_err(|e| Error::Store(format!("{}: {e}", path.display())))?;
        store.add(name, tensor, trainable);
    }
    Ok(store)
}
