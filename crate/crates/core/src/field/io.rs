//! The "ACVF" binary field format, little-endian throughout:
//!
//! ```text
//! magic  b"ACVF"
//! u16    version (= 1)
//! u8     dimension n
//! u32    sample count per axis        (n times)
//! f64    low, high per axis           (n pairs)
//! f64    values, row-major            (product of counts)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Grid, ScalarField};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACVF";
const VERSION: u16 = 1;

pub fn write_acvf<W: Write>(field: &ScalarField, mut w: W) -> Result<()> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[grid.dim() as u8])?;
    for &count in grid.shape() {
        w.write_all(&(count as u32).to_le_bytes())?;
    }
    for a in 0..grid.dim() {
        w.write_all(&grid.low()[a].to_le_bytes())?;
        w.write_all(&grid.high()[a].to_le_bytes())?;
    }
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_acvf<R: Read>(mut r: R) -> Result<ScalarField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let n = b1[0] as usize;
    if !(1..=3).contains(&n) {
        return Err(Error::Format(format!("dimension {n}")));
    }
    let mut shape = Vec::with_capacity(n);
    let mut b4 = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut b4)?;
        shape.push(u32::from_le_bytes(b4) as usize);
    }
    let mut b8 = [0u8; 8];
    let mut low = Vec::with_capacity(n);
    let mut high = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        low.push(f64::from_le_bytes(b8));
        r.read_exact(&mut b8)?;
        high.push(f64::from_le_bytes(b8));
    }
    let grid = Grid::new(low, high, shape).map_err(|e| Error::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    ScalarField::new(grid, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_acvf_file(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(file);
    write_acvf(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_acvf_file(path: impl AsRef<Path>) -> Result<ScalarField> {
    let file = std::fs::File::open(path.as_ref())?;
    read_acvf(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 3.0], vec![9, 10]).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] * x[1]);
        let mut buf = Vec::new();
        write_acvf(&f, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"ACVF");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(buf[6], 2);
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(buf[11..15].try_into().unwrap()), 10);
        assert_eq!(f64::from_le_bytes(buf[15..23].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(buf[23..31].try_into().unwrap()), 1.0);
        assert_eq!(buf.len(), 7 + 2 * 4 + 4 * 8 + 90 * 8);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(read_acvf(&b"ACVX\x01\x00\x01"[..]), Err(Error::Format(_))));
        let g = Grid::cube(1, 0.0, 1.0, 9).unwrap();
        let mut buf = Vec::new();
        write_acvf(&ScalarField::constant(&g, 1.0), &mut buf).unwrap();
        assert!(read_acvf(&buf[..buf.len() - 3]).is_err());
        buf.push(0);
        assert!(matches!(read_acvf(&buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..=3, counts in proptest::collection::vec(8usize..12, 3),
                      lo in -5.0f64..0.0, ext in 0.1f64..4.0, seed in 0u64..1000) {
            let g = Grid::new(vec![lo; n], vec![lo + ext; n], counts[..n].to_vec()).unwrap();
            let f = ScalarField::from_fn(&g, |x| (seed as f64 * 0.37 + x.iter().sum::<f64>()).sin());
            let mut buf = Vec::new();
            write_acvf(&f, &mut buf).unwrap();
            let back = read_acvf(&buf[..]).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
