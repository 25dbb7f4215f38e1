//! Dense kernels shared by the forward and backward passes.

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;

/// Floating-point type the network can run in. `f32` is the production
/// precision; `f64` serves gradient verification.
pub trait Real: Float + Default + Debug + AddAssign + Send + Sync + 'static {
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn as_f32(self) -> f32;

    /// `C = alpha·A·B + beta·C` with explicit row/column strides.
    ///
    /// # Safety
    /// All strided accesses must stay within the slices' bounds; [`gemm`]
    /// checks this before calling.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f32(self) -> f32 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f32(self) -> f32 {
        self as f32
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct View<'a, R> {
    pub data: &'a [R],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, R> View<'a, R> {
    /// Row-major `rows`x`cols`.
    pub fn rm(data: &'a [R], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `rows`x`cols` buffer (so this view is `cols`x`rows`).
    pub fn rm_t(data: &'a [R], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c (row-major m x n) = a·b + beta·c`.
pub fn gemm<R: Real>(a: View<'_, R>, b: View<'_, R>, beta: R, c: &mut [R]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ");
    assert!(a.fits() && b.fits(), "matrix view exceeds its buffer");
    assert!(c.len() >= m * n, "output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds of all three operands were checked above.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            R::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Spatial geometry of a "same"-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Unfolds `[C][H][W]` into `[(C·kh·kw)][(H·W)]` patches with zero padding.
pub fn im2col<R: Real>(x: &[R], g: ConvGeom, cols: &mut Vec<R>) {
    let hw = g.pixels();
    cols.clear();
    cols.resize(g.patch() * hw, R::zero());
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (dy, dx) = (ky as isize - ph, kx as isize - pw);
                let x_lo = (-dx).max(0);
                let x_hi = (w - dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let d0 = (y * w + x_lo) as usize;
                    let s0 = (sy * w + x_lo + dx) as usize;
                    let len = (x_hi - x_lo) as usize;
                    dst[d0..d0 + len].copy_from_slice(&plane[s0..s0 + len]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `[C][H][W]`.
pub fn col2im_add<R: Real>(cols: &[R], g: ConvGeom, dx: &mut [R]) {
    let hw = g.pixels();
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (dy, dxo) = (ky as isize - ph, kx as isize - pw);
                let x_lo = (-dxo).max(0);
                let x_hi = (w - dxo).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let d0 = (sy * w + x_lo + dxo) as usize;
                    let s0 = (y * w + x_lo) as usize;
                    let len = (x_hi - x_lo) as usize;
                    for (d, s) in plane[d0..d0 + len].iter_mut().zip(&src[s0..s0 + len]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// `out[cout][hw] = W·patches(x) + b` (pre-activation). `weight` is `[cout][cin·kh·kw]`.
pub fn conv_forward<R: Real>(x: &[R], g: ConvGeom, weight: &[R], bias: &[R], cols: &mut Vec<R>, out: &mut Vec<R>) {
    let hw = g.pixels();
    let cout = bias.len();
    out.clear();
    out.reserve(cout * hw);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, hw));
    }
    let patches: &[R] = if g.is_pointwise() {
        x
    } else {
        im2col(x, g, cols);
        cols
    };
    gemm(View::rm(weight, cout, g.patch()), View::rm(patches, g.patch(), hw), R::one(), out);
}

/// Accumulates `dW += dz·patches(x)ᵀ`, `db += Σ dz` and, when requested,
/// `dx += Wᵀ·dz` folded back to image layout.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<R: Real>(
    x: &[R],
    g: ConvGeom,
    weight: &[R],
    dz: &[R],
    dweight: &mut [R],
    dbias: &mut [R],
    dx: Option<&mut [R]>,
    cols: &mut Vec<R>,
) {
    let hw = g.pixels();
    let cout = dbias.len();
    let patches: &[R] = if g.is_pointwise() {
        x
    } else {
        im2col(x, g, cols);
        cols
    };
    gemm(View::rm(dz, cout, hw), View::rm_t(patches, g.patch(), hw), R::one(), dweight);
    for (o, db) in dbias.iter_mut().enumerate() {
        let mut s = R::zero();
        for &v in &dz[o * hw..(o + 1) * hw] {
            s += v;
        }
        *db += s;
    }
    if let Some(dx) = dx {
        if g.is_pointwise() {
            gemm(View::rm_t(weight, cout, g.patch()), View::rm(dz, cout, hw), R::one(), dx);
        } else {
            let mut dcols = vec![R::zero(); g.patch() * hw];
            gemm(View::rm_t(weight, cout, g.patch()), View::rm(dz, cout, hw), R::zero(), &mut dcols);
            col2im_add(&dcols, g, dx);
        }
    }
}

#[inline]
pub fn hard_sigmoid<R: Real>(x: R) -> R {
    let v = R::from_f64(0.2) * x + R::from_f64(0.5);
    v.max(R::zero()).min(R::one())
}

/// Derivative of the hard sigmoid expressed through its output.
#[inline]
pub fn hard_sigmoid_grad<R: Real>(y: R) -> R {
    if y > R::zero() && y < R::one() {
        R::from_f64(0.2)
    } else {
        R::zero()
    }
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}
