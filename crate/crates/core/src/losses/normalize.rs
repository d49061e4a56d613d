use crate::error::{Error, Result};
use crate::numeric::{dot, norm, Mat};

/// Rows rescaled to unit L2 norm, remembering the original norms for the backward pass.
pub(crate) struct RowNormalized {
    pub unit: Mat,
    norms: Vec<f64>,
}

impl RowNormalized {
    pub fn new(m: &Mat, what: &str) -> Result<Self> {
        let mut unit = m.clone();
        let mut norms = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let n = norm(m.row(i));
            if n == 0.0 {
                return Err(Error::DegenerateVector(format!("{what} row {i} has zero norm")));
            }
            unit.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(Self { unit, norms })
    }

    /// Identity wrapper for callers that skip normalization.
    pub fn identity(m: &Mat) -> Self {
        Self {
            unit: m.clone(),
            norms: Vec::new(),
        }
    }

    /// Maps a gradient w.r.t. the unit rows back to the raw rows:
    /// `(g - u (u . g)) / |x|`.
    pub fn backward(&self, grad_unit: Mat) -> Mat {
        if self.norms.is_empty() {
            return grad_unit;
        }
        let mut g = grad_unit;
        for (i, &n) in self.norms.iter().enumerate() {
            let u = self.unit.row(i);
            let proj = dot(u, g.row(i));
            for (gv, uv) in g.row_mut(i).iter_mut().zip(u) {
                *gv = (*gv - uv * proj) / n;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{fd_gradient, Rng, FD_STEP};

    #[test]
    fn backward_matches_fd() {
        let mut r = Rng::new(4);
        let x: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let w: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let f = |v: &[f64]| {
            let m = Mat::from_vec(2, 3, v.to_vec()).unwrap();
            let n = RowNormalized::new(&m, "t").unwrap();
            dot(n.unit.as_slice(), &w)
        };
        let fd = fd_gradient(f, &x, FD_STEP).unwrap();
        let m = Mat::from_vec(2, 3, x).unwrap();
        let n = RowNormalized::new(&m, "t").unwrap();
        let g = n.backward(Mat::from_vec(2, 3, w.clone()).unwrap());
        for (a, b) in g.as_slice().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let m = Mat::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(RowNormalized::new(&m, "z").is_err());
    }
}
