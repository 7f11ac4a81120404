//! Little-endian helpers shared by the covariance and ReTM file formats.
//! Matrices are stored row-major as interleaved (re, im) f64 pairs.

use std::io::{self, Read, Write};

use crate::linalg::{Complex64, ComplexMatrix};

pub(crate) fn write_matrix(w: &mut impl Write, m: &ComplexMatrix) -> io::Result<()> {
    for z in m.to_row_major() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> io::Result<ComplexMatrix> {
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        entries.push(Complex64::new(re, im));
    }
    ComplexMatrix::from_row_slice(rows, cols, &entries)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
