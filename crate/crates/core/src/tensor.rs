//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.
//!
//! Every activation and gradient in the crate is a [`Tensor`]. Storage is a
//! flat `Vec` whose length always equals the shape's element count. The
//! element type is generic over [`Scalar`] so the same layer code runs in
//! `f32` for training and in `f64` for finite-difference checks.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type usable in tensors and layers.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a @ b + beta * c` with explicit row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Transposition is
    /// expressed by swapping a matrix's strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds: {rows}x{cols} strides ({rs},{cs}) over {len} elements"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three operands were bounds-checked against their
                // strides above; `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Tensor dimensions: batch, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch entry (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Flat offset of `(n, c, h, w)`.
    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    /// Inverse of [`Shape4::index`].
    pub const fn unravel(&self, mut idx: usize) -> (usize, usize, usize, usize) {
        let w = idx % self.w;
        idx /= self.w;
        let h = idx % self.h;
        idx /= self.h;
        let c = idx % self.c;
        (idx / self.c, c, h, w)
    }

    pub const fn with_batch(&self, n: usize) -> Self {
        Self::new(n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self::new(n, c, h, w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(PREVIEW)])
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new_filled(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::new_filled(shape, T::zero())
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::Data(format!(
                "buffer of {} values does not fit shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let idx = self.shape.index(n, c, h, w);
        self.data[idx] = value;
    }

    /// Contiguous slice holding batch entry `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Zero-pads the two spatial axes by `pad` on every side.
    pub fn pad_spatial(&self, pad: usize) -> Self {
        if pad == 0 {
            return self.clone();
        }
        let s = self.shape;
        let out_shape = Shape4::new(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad);
        let mut out = Self::zeros(out_shape);
        for n in 0..s.n {
            for c in 0..s.c {
                for h in 0..s.h {
                    let src = s.index(n, c, h, 0);
                    let dst = out_shape.index(n, c, h + pad, pad);
                    out.data[dst..dst + s.w].copy_from_slice(&self.data[src..src + s.w]);
                }
            }
        }
        out
    }

    /// Removes `pad` rows/columns from every spatial border.
    pub fn crop_spatial(&self, pad: usize) -> Result<Self> {
        let s = self.shape;
        if s.h < 2 * pad || s.w < 2 * pad {
            return Err(Error::shape(
                "crop_spatial",
                format!("spatial extent >= {}", 2 * pad),
                s,
            ));
        }
        let out_shape = Shape4::new(s.n, s.c, s.h - 2 * pad, s.w - 2 * pad);
        let mut out = Self::zeros(out_shape);
        for n in 0..s.n {
            for c in 0..s.c {
                for h in 0..out_shape.h {
                    let src = s.index(n, c, h + pad, pad);
                    let dst = out_shape.index(n, c, h, 0);
                    out.data[dst..dst + out_shape.w]
                        .copy_from_slice(&self.data[src..src + out_shape.w]);
                }
            }
        }
        Ok(out)
    }

    /// Reinterprets each batch entry as a feature vector of shape `(n, c*h*w, 1, 1)`.
    pub fn flatten_to_rows(self) -> Self {
        let s = self.shape;
        Self {
            shape: Shape4::new(s.n, s.sample_len(), 1, 1),
            data: self.data,
        }
    }

    /// Same buffer under a different shape with equal element count.
    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", shape.numel()),
                self.shape,
            ));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Stacks same-shaped samples along the batch axis.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("cannot stack zero tensors".into()))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        let mut n = 0;
        for t in samples {
            if t.shape.with_batch(first.n) != first {
                return Err(Error::shape("stack", first.to_string(), t.shape));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Self {
            shape: first.with_batch(n),
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_filled_counts() {
        let t = Tensor::<f32>::new_filled((1, 1, 2, 2), 0.0);
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::new_filled((2, 3, 4, 4), 1.0);
        assert_eq!(t.numel(), 96);
        assert!(t.data().iter().all(|&v| v == 1.0));
        let t = Tensor::<f32>::new_filled((1, 0, 5, 5), 7.0);
        assert_eq!(t.numel(), 0);
        assert_eq!(t.shape().numel(), 0);
    }

    #[test]
    fn pad_single_element() {
        let t = Tensor::<f32>::from_vec((1, 1, 1, 1), vec![5.0]).unwrap();
        let p = t.pad_spatial(2);
        assert_eq!(p.shape(), Shape4::new(1, 1, 5, 5));
        for h in 0..5 {
            for w in 0..5 {
                let expect = if h == 2 && w == 2 { 5.0 } else { 0.0 };
                assert_eq!(p.get(0, 0, h, w), expect);
            }
        }
    }

    #[test]
    fn pad_zero_is_copy() {
        let t = Tensor::<f32>::from_vec((1, 2, 2, 2), (0..8).map(|v| v as f32 * 0.3).collect())
            .unwrap();
        let p = t.pad_spatial(0);
        assert_eq!(p.shape(), t.shape());
        let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&t));
    }

    #[test]
    fn pad_preserves_channel_sums() {
        let t = Tensor::<f32>::new_filled((1, 2, 3, 3), 1.0);
        let p = t.pad_spatial(1);
        assert_eq!(p.shape(), Shape4::new(1, 2, 5, 5));
        for c in 0..2 {
            let mut s = 0.0;
            for h in 0..5 {
                for w in 0..5 {
                    s += p.get(0, c, h, w);
                }
            }
            assert_eq!(s, 9.0);
        }
    }

    #[test]
    fn flatten_shapes() {
        let t = Tensor::<f32>::zeros((2, 32, 15, 15)).flatten_to_rows();
        assert_eq!(t.shape(), Shape4::new(2, 7200, 1, 1));
        let t = Tensor::<f32>::zeros((1, 1, 1, 1)).flatten_to_rows();
        assert_eq!(t.shape(), Shape4::new(1, 1, 1, 1));
        let t = Tensor::<f32>::zeros((4, 3, 2, 2)).flatten_to_rows();
        assert_eq!(t.shape(), Shape4::new(4, 12, 1, 1));
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec((1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn gemm_matches_naive() {
        // [[1,2,3],[4,5,6]] @ [[1,0],[0,1],[1,1]]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a^T @ a via strides, a^T is 3x2
        let mut d = [0.0f64; 9];
        f64::gemm(3, 2, 3, 1.0, &a, (1, 3), &a, (3, 1), 0.0, &mut d, (3, 1));
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    fn small_shape() -> impl Strategy<Value = Shape4> {
        (1usize..4, 1usize..4, 1usize..6, 1usize..6).prop_map(Shape4::from)
    }

    proptest! {
        #[test]
        fn index_round_trips(shape in small_shape(), seed in any::<u64>()) {
            let idx = (seed as usize) % shape.numel();
            let (n, c, h, w) = shape.unravel(idx);
            prop_assert!(n < shape.n && c < shape.c && h < shape.h && w < shape.w);
            prop_assert_eq!(shape.index(n, c, h, w), idx);
        }

        #[test]
        fn pad_then_crop_is_identity(shape in small_shape(), pad in 0usize..4) {
            let data: Vec<f32> = (0..shape.numel()).map(|i| i as f32 - 3.5).collect();
            let t = Tensor::from_vec(shape, data).unwrap();
            let back = t.pad_spatial(pad).crop_spatial(pad).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn flatten_keeps_buffer(shape in small_shape()) {
            let data: Vec<f32> = (0..shape.numel()).map(|i| (i as f32).sin()).collect();
            let t = Tensor::from_vec(shape, data.clone()).unwrap();
            let f = t.flatten_to_rows();
            prop_assert_eq!(f.data(), &data[..]);
            prop_assert_eq!(f.shape().numel(), shape.numel());
        }
    }
}
