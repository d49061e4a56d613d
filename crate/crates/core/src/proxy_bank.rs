//! Learnable class proxies laid out as `class * K + k` rows.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numeric::{norm, Mat, Rng};

const MAGIC: &[u8; 4] = b"PXB1";

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    matrix: Mat,
    classes: usize,
    proxies_per_class: usize,
}

impl ProxyBank {
    pub fn from_matrix(matrix: Mat, classes: usize, proxies_per_class: usize) -> Result<Self> {
        if classes == 0 || proxies_per_class == 0 || matrix.cols() == 0 {
            return Err(Error::Config("proxy bank needs C, K, d >= 1".into()));
        }
        if matrix.rows() != classes * proxies_per_class {
            return Err(Error::Dimension(format!(
                "{} rows for {classes} classes x {proxies_per_class} proxies",
                matrix.rows()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFiniteInput("proxy bank".into()));
        }
        Ok(Self {
            matrix,
            classes,
            proxies_per_class,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn proxies_per_class(&self) -> usize {
        self.proxies_per_class
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        self.matrix.as_mut_slice()
    }

    /// Copy of the `K` rows owned by `class`, in `k` order.
    pub fn proxies_of(&self, class: usize) -> Result<Mat> {
        if class >= self.classes {
            return Err(Error::Label(format!(
                "class {class} out of range for {} classes",
                self.classes
            )));
        }
        let k = self.proxies_per_class;
        let rows: Vec<&[f64]> = (class * k..(class + 1) * k).map(|r| self.matrix.row(r)).collect();
        Mat::from_rows(&rows)
    }

    /// Rescales every row to unit L2 norm; zero rows are left untouched.
    pub fn renormalize(&mut self) {
        for i in 0..self.matrix.rows() {
            let n = norm(self.matrix.row(i));
            if n > 0.0 {
                self.matrix.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Little-endian: `PXB1`, C, K, d as u32, then C*K*d f64 row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.classes, self.proxies_per_class, self.dim()] {
            w.write_all(&u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?.to_le_bytes())?;
        }
        for v in self.matrix.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad proxy checkpoint magic {magic:?}")));
        }
        let classes = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let values = read_f64s(&mut r, classes * k * d)?;
        Self::from_matrix(Mat::from_vec(classes * k, d, values)?, classes, k)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// `C * K` rows of Gaussian(0, 1/sqrt(d)) draws, each rescaled to unit norm.
pub fn init_proxies(classes: usize, proxies_per_class: usize, dim: usize, rng: &mut Rng) -> Result<ProxyBank> {
    if classes == 0 || proxies_per_class == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "init_proxies needs positive counts, got C={classes} K={proxies_per_class} d={dim}"
        )));
    }
    let std = 1.0 / (dim as f64).sqrt();
    let values = (0..classes * proxies_per_class * dim)
        .map(|_| rng.gaussian(0.0, std))
        .collect();
    let mut bank = ProxyBank::from_matrix(
        Mat::from_vec(classes * proxies_per_class, dim, values)?,
        classes,
        proxies_per_class,
    )?;
    bank.renormalize();
    Ok(bank)
}

/// Distinct labels in ascending order.
pub fn present_classes(labels: &[usize]) -> BTreeSet<usize> {
    labels.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_norms() {
        let mut r = Rng::new(3);
        let bank = init_proxies(2, 1, 4, &mut r).unwrap();
        assert_eq!(bank.matrix().shape(), (2, 4));
        for row in bank.matrix().iter_rows() {
            assert!((norm(row) - 1.0).abs() < 1e-12);
        }
        let big = init_proxies(3, 5, 8, &mut r).unwrap();
        assert_eq!(big.matrix().rows(), 15);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_proxies(3, 2, 6, &mut Rng::new(9)).unwrap();
        let b = init_proxies(3, 2, 6, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_zero_counts() {
        let mut r = Rng::new(0);
        assert!(matches!(init_proxies(0, 1, 4, &mut r), Err(Error::Config(_))));
        assert!(matches!(init_proxies(2, 0, 4, &mut r), Err(Error::Config(_))));
        assert!(matches!(init_proxies(2, 1, 0, &mut r), Err(Error::Config(_))));
    }

    #[test]
    fn proxies_of_layout() {
        let bank = init_proxies(4, 3, 2, &mut Rng::new(1)).unwrap();
        let last = bank.proxies_of(3).unwrap();
        assert_eq!(last.as_slice(), &bank.matrix().as_slice()[9 * 2..]);
        assert!(matches!(bank.proxies_of(4), Err(Error::Label(_))));

        let k1 = init_proxies(3, 1, 2, &mut Rng::new(1)).unwrap();
        assert_eq!(k1.proxies_of(1).unwrap().as_slice(), k1.matrix().row(1));

        let mut all = Vec::new();
        for c in 0..4 {
            all.extend_from_slice(bank.proxies_of(c).unwrap().as_slice());
        }
        assert_eq!(all, bank.matrix().as_slice());
    }

    #[test]
    fn present_classes_examples() {
        assert_eq!(present_classes(&[0, 0, 1]), BTreeSet::from([0, 1]));
        assert!(present_classes(&[]).is_empty());
        assert_eq!(present_classes(&[2, 2, 2]), BTreeSet::from([2]));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let bank = init_proxies(3, 2, 5, &mut Rng::new(77)).unwrap();
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PXB1");
        assert_eq!(buf.len(), 4 + 12 + 3 * 2 * 5 * 8);
        let back = ProxyBank::read_from(buf.as_slice()).unwrap();
        for (a, b) in bank.matrix().as_slice().iter().zip(back.matrix().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mut bad = buf.clone();
        bad[0] = b'Q';
        assert!(matches!(ProxyBank::read_from(bad.as_slice()), Err(Error::Format(_))));
    }
}
