//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type usable for maps, losses, metrics and the toy network.
///
/// Implemented for `f32` and `f64`. The dense matrix product is routed to the
/// matching `matrixmultiply` kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// `lda`, `ldb`, `ldc` are row strides; `a_t`/`b_t` read the operand
    /// transposed (the stored matrix is then `k×m` / `n×k`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );

    /// Lossless-enough conversion from `f64` for constants.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the bounds above cover every index touched by the
                // kernel for these strides.
                unsafe {
                    $kernel(
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

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
