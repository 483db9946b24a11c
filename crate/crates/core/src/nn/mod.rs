//! A small CPU neural-network toolkit with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the same models train in `f32` and
//! are gradient-checked in `f64`.

mod layers;
mod loss;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub use layers::{Layer, Sequential, Tape};
pub use loss::{bce_with_logits, masked_l1, masked_l1_grad, sigmoid, softplus};
pub use optim::{Adam, AdamConfig};

/// Flushes subnormal floats to zero on the current thread while alive.
///
/// Training pushes some activations, gradients and Adam moments into the
/// subnormal range, where x86 arithmetic runs several times slower. Values
/// that small never move a parameter, so every training loop runs under this
/// guard. A no-op on other architectures.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
fn read_mxcsr() -> u32 {
    let mut v = 0u32;
    // SAFETY: stores the SSE control register into a local.
    unsafe { std::arch::asm!("stmxcsr [{}]", in(reg) &mut v, options(nostack)) };
    v
}

#[cfg(target_arch = "x86_64")]
fn write_mxcsr(v: u32) {
    // SAFETY: only the flush-to-zero/denormals-are-zero bits are changed by callers.
    unsafe { std::arch::asm!("ldmxcsr [{}]", in(reg) &v, options(nostack, readonly)) };
}

impl FlushDenormals {
    pub fn new() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            const FTZ_DAZ: u32 = 0x8040;
            let saved = read_mxcsr();
            write_mxcsr(saved | FTZ_DAZ);
            FlushDenormals { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushDenormals {}
    }
}

impl Default for FlushDenormals {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        write_mxcsr(self.saved);
    }
}

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = a·b + beta·c` for row-major operands; `a` is `m×k`, `b` is `k×n`.
    /// With `ta`/`tb` the operand is stored transposed (`k×m` / `n×k`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the asserts above bound every access made through the strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor; image batches are NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, n: usize) -> &[T] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Tensor<T> {
        let n = parts[0].shape[0];
        let hw: usize = parts[0].shape[2..].iter().product();
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut out = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for p in parts {
                assert_eq!(p.shape[0], n);
                assert_eq!(p.shape[2..].iter().product::<usize>(), hw);
                out.extend_from_slice(p.item(b));
            }
        }
        let mut shape = parts[0].shape.clone();
        shape[1] = c_total;
        Tensor::from_vec(&shape, out)
    }

    /// Inverse of [`Tensor::concat_channels`] for a gradient tensor.
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor<T>> {
        let n = self.shape[0];
        let hw: usize = self.shape[2..].iter().product();
        let mut outs: Vec<Vec<T>> = sizes
            .iter()
            .map(|&c| Vec::with_capacity(n * c * hw))
            .collect();
        for b in 0..n {
            let item = self.item(b);
            let mut off = 0;
            for (o, &c) in outs.iter_mut().zip(sizes) {
                o.extend_from_slice(&item[off..off + c * hw]);
                off += c * hw;
            }
        }
        outs.into_iter()
            .zip(sizes)
            .map(|(d, &c)| {
                let mut shape = self.shape.clone();
                shape[1] = c;
                Tensor::from_vec(&shape, d)
            })
            .collect()
    }
}

/// Anything that owns trainable tensors in a fixed order.
pub trait ParamSet<T: Real> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }

    fn to_flat(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    fn set_flat(&mut self, flat: &[T]) {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter vector length mismatch");
    }
}

pub fn flatten_grads<T: Real>(grads: &[Tensor<T>]) -> Vec<T> {
    grads
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect()
}

pub(crate) fn uniform<T: Real, R: Rng>(rng: &mut R, bound: f64) -> T {
    let u: f64 = rng.gen();
    T::of((2.0 * u - 1.0) * bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0f64, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0f64; 4];
        f64::gemm(2, 3, 2, &at, true, &bt, true, 1.0, &mut c2);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 2, 2], (0..8).map(|v| v as f32).collect());
        let b = Tensor::<f32>::from_vec(&[2, 2, 2, 2], (0..16).map(|v| 100.0 + v as f32).collect());
        let cat = Tensor::concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), &[2, 3, 2, 2]);
        let parts = cat.split_channels(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
