use serde::{Deserialize, Serialize};

use super::single::SingleOutputKernel;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Image geometry for patch-based kernels. Images are flattened row-major,
/// pixel `(r, c)` at index `r * width + c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchGeometry {
    pub fn new(image_h: usize, image_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 || patch_h > image_h || patch_w > image_w {
            return Err(Error::PatchLargerThanImage { patch_h, patch_w, image_h, image_w });
        }
        Ok(PatchGeometry { image_h, image_w, patch_h, patch_w })
    }

    pub fn image_size(&self) -> usize {
        self.image_h * self.image_w
    }

    pub fn patch_size(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// `(H - h + 1)(W - w + 1)`.
    pub fn num_patches(&self) -> usize {
        (self.image_h - self.patch_h + 1) * (self.image_w - self.patch_w + 1)
    }

    /// Copies patch `p` of one flattened image into `out`.
    /// Patches are numbered in raster order of their top-left corner.
    fn write_patch(&self, image: &[f64], p: usize, out: &mut [f64]) {
        let across = self.image_w - self.patch_w + 1;
        let (pr, pc) = (p / across, p % across);
        for i in 0..self.patch_h {
            let src = (pr + i) * self.image_w + pc;
            out[i * self.patch_w..(i + 1) * self.patch_w].copy_from_slice(&image[src..src + self.patch_w]);
        }
    }
}

/// Splits each image row of `x` into stride-1 patches.
///
/// Returns an `(N*P) x (h*w)` matrix whose row `n*P + p` is patch `p` of image `n`.
pub fn extract_patches(x: &DenseMatrix, geometry: &PatchGeometry) -> Result<DenseMatrix> {
    if x.cols() != geometry.image_size() {
        return Err(Error::DimensionMismatch(format!(
            "images have {} pixels, geometry expects {}",
            x.cols(),
            geometry.image_size()
        )));
    }
    let p = geometry.num_patches();
    let mut out = DenseMatrix::zeros(x.rows() * p, geometry.patch_size());
    for n in 0..x.rows() {
        for q in 0..p {
            geometry.write_patch(x.row(n), q, out.row_mut(n * p + q));
        }
    }
    Ok(out)
}

/// Patch-response kernel: `f(x) = sum_p g(x[p])` as a single output, or one
/// output per patch when used as a multioutput kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionalKernel {
    pub base: SingleOutputKernel,
    pub geometry: PatchGeometry,
}

impl ConvolutionalKernel {
    pub fn new(base: SingleOutputKernel, geometry: PatchGeometry) -> Result<Self> {
        if base.input_dim != geometry.patch_size() {
            return Err(Error::DimensionMismatch(format!(
                "patch kernel takes {} inputs, patches have {}",
                base.input_dim,
                geometry.patch_size()
            )));
        }
        Ok(ConvolutionalKernel { base, geometry })
    }

    pub fn num_patches(&self) -> usize {
        self.geometry.num_patches()
    }

    pub fn input_dim(&self) -> usize {
        self.geometry.image_size()
    }

    /// Patch-level Gram `k_g(x[p], x'[p'])` as an `(N*P) x (N2*P)` matrix.
    pub fn patch_gram(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        let px = extract_patches(x, &self.geometry)?;
        match x2 {
            None => self.base.k_full(&px, None),
            Some(x2) => {
                let px2 = extract_patches(x2, &self.geometry)?;
                self.base.k_full(&px, Some(&px2))
            }
        }
    }

    /// Single-output Gram: `sum_{p, p'} k_g(x[p], x'[p'])`.
    pub fn k_full(&self, x: &DenseMatrix, x2: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        let p = self.num_patches();
        let g = self.patch_gram(x, x2)?;
        let n2 = x2.map_or(x.rows(), DenseMatrix::rows);
        Ok(DenseMatrix::from_fn(x.rows(), n2, |i, j| {
            let mut s = 0.0;
            for a in 0..p {
                for b in 0..p {
                    s += g[(i * p + a, j * p + b)];
                }
            }
            s
        }))
    }

    pub fn k_diag(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let p = self.num_patches();
        let patches = extract_patches(x, &self.geometry)?;
        (0..x.rows())
            .map(|n| {
                let block = patches.block(n * p, 0, p, self.geometry.patch_size());
                Ok(self.base.k_full(&block, None)?.as_slice().iter().sum())
            })
            .collect()
    }

    /// Cross-covariance between patch inputs `z` and images `x`:
    /// `sum_p k_g(z_m, x_n[p])`.
    pub fn patch_image_cross(&self, z: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
        let p = self.num_patches();
        let px = extract_patches(x, &self.geometry)?;
        let g = self.base.k_full(z, Some(&px))?;
        Ok(DenseMatrix::from_fn(z.rows(), x.rows(), |m, n| (0..p).map(|q| g[(m, n * p + q)]).sum()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_patches_are_pixels() {
        let g = PatchGeometry::new(2, 2, 1, 1).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = extract_patches(&x, &g).unwrap();
        assert_eq!(p.shape(), (4, 1));
        assert_eq!(p.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patch_count_and_raster_order() {
        let g = PatchGeometry::new(3, 3, 2, 2).unwrap();
        assert_eq!(g.num_patches(), 4);
        let x = DenseMatrix::from_rows(&[(0..9).map(f64::from).collect()]).unwrap();
        let p = extract_patches(&x, &g).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(p.row(1), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(p.row(2), &[3.0, 4.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[4.0, 5.0, 7.0, 8.0]);
    }

    #[test]
    fn constant_image_gives_identical_patches() {
        let g = PatchGeometry::new(4, 3, 2, 2).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.7; 12]]).unwrap();
        let p = extract_patches(&x, &g).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.7));
        assert_eq!(p.rows(), 6);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        assert!(matches!(PatchGeometry::new(2, 2, 3, 1), Err(Error::PatchLargerThanImage { .. })));
    }
}
