//! Forward pass with cached activations and hand-written backpropagation
//! through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::{BANDS, SAR_BANDS};
use crate::raster::Raster;

use super::ops::{conv_backward, conv_forward, gemm, hard_sigmoid, hard_sigmoid_grad, im2col, sigmoid, ConvGeom, Real, View};
use super::{ModelParams, WindowTensor};

/// Predictions are clamped to `[OUTPUT_EPS, 1 - OUTPUT_EPS]`.
pub const OUTPUT_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Inference,
    /// Dropout active; masks are derived from the seed, one per recurrent layer.
    Training { dropout_seed: u64 },
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    w: usize,
    b: usize,
    cin: usize,
    kh: usize,
    kw: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmLayer {
    wx: usize,
    wh: usize,
    b: usize,
    cin: usize,
    hidden: usize,
    kh: usize,
    kw: usize,
    dropout: f32,
    stream: u64,
}

impl ConvLayer {
    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom { channels: self.cin, height: h, width: w, kh: self.kh, kw: self.kw }
    }
}

impl LstmLayer {
    fn geom_x(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom { channels: self.cin, height: h, width: w, kh: self.kh, kw: self.kw }
    }

    fn geom_h(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom { channels: self.hidden, height: h, width: w, kh: self.kh, kw: self.kw }
    }
}

/// Parameters converted to the working precision plus the layer wiring.
#[derive(Debug, Clone)]
pub struct Network<R: Real> {
    params: Vec<Vec<R>>,
    opt_conv: ConvLayer,
    opt_lstm: LstmLayer,
    sar_conv: ConvLayer,
    sar_lstm: LstmLayer,
    fuse_conv: ConvLayer,
    fuse_lstm: LstmLayer,
    head_conv: ConvLayer,
    output: ConvLayer,
}

#[derive(Debug, Clone)]
struct StepCache<R> {
    frame: usize,
    /// Branch convolution output after ReLU.
    a: Vec<R>,
    /// Gate activations `i, f, g, o`.
    gates: Vec<R>,
    c: Vec<R>,
    h: Vec<R>,
}

#[derive(Debug, Clone)]
struct BranchCache<R> {
    steps: Vec<StepCache<R>>,
    mask: Option<Vec<R>>,
    h_last: Vec<R>,
}

/// Activations of one forward pass. Only [`Network::forward`] creates it,
/// and [`Network::backward`] consumes it.
#[derive(Debug, Clone)]
pub struct ForwardContext<'w, R: Real> {
    window: &'w WindowTensor,
    mode: RunMode,
    branches: [BranchCache<R>; 2],
    fused_in: Vec<R>,
    fuse_a: Vec<R>,
    fuse_mask: Option<Vec<R>>,
    fuse_gates: Vec<R>,
    fuse_c: Vec<R>,
    fuse_h: Vec<R>,
    head_a: Vec<R>,
    output: Vec<R>,
}

impl<R: Real> ForwardContext<'_, R> {
    /// Change probabilities, `[h·w]` row-major.
    pub fn output(&self) -> &[R] {
        &self.output
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.window.height,
            width: self.window.width,
            data: self.output.iter().map(|v| v.as_f32()).collect(),
        }
    }
}

/// Parameter gradients in tensor storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<R> {
    pub tensors: Vec<Vec<R>>,
}

impl<R: Real> Gradients<R> {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params.tensors.iter().map(|t| vec![R::zero(); t.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients<R>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: R) {
        for v in self.tensors.iter_mut().flatten() {
            *v = *v * factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| {
                let x = v.as_f32() as f64;
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn relu_inplace<R: Real>(v: &mut [R]) {
    for x in v {
        if *x < R::zero() {
            *x = R::zero();
        }
    }
}

fn relu_backward<R: Real>(grad: &mut [R], activated: &[R]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= R::zero() {
            *g = R::zero();
        }
    }
}

fn apply_mask<R: Real>(x: &[R], mask: Option<&Vec<R>>) -> Vec<R> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| *a * *b).collect(),
        None => x.to_vec(),
    }
}

/// Inverted-dropout mask: kept entries scale by `1/(1-p)`.
fn dropout_mask<R: Real>(seed: u64, stream: u64, len: usize, p: f32) -> Vec<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep = R::from_f64(1.0 / (1.0 - p as f64));
    (0..len)
        .map(|_| if rng.random::<f32>() < p { R::zero() } else { keep })
        .collect()
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

impl<R: Real> Network<R> {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.check_layout()?;
        let arch = &params.architecture;
        let l = &arch.layers;
        let conv = |w: usize, cin: usize, i: usize| ConvLayer {
            w,
            b: w + 1,
            cin,
            kh: l[i].kernel.0,
            kw: l[i].kernel.1,
        };
        let lstm = |wx: usize, cin: usize, i: usize, stream: u64| LstmLayer {
            wx,
            wh: wx + 1,
            b: wx + 2,
            cin,
            hidden: l[i].filters,
            kh: l[i].kernel.0,
            kw: l[i].kernel.1,
            dropout: l[i].dropout,
            stream,
        };
        Ok(Self {
            params: params
                .tensors
                .iter()
                .map(|t| t.data.iter().map(|&v| R::from_f32(v)).collect())
                .collect(),
            opt_conv: conv(0, arch.optical_bands, 0),
            opt_lstm: lstm(2, l[0].filters, 1, 0),
            sar_conv: conv(5, arch.sar_bands, 0),
            sar_lstm: lstm(7, l[0].filters, 1, 1),
            fuse_conv: conv(10, 2 * l[1].filters, 2),
            fuse_lstm: lstm(12, l[2].filters, 3, 2),
            head_conv: conv(15, l[3].filters, 4),
            output: conv(17, l[4].filters, 5),
        })
    }

    fn conv_relu(&self, layer: &ConvLayer, x: &[R], h: usize, w: usize, cols: &mut Vec<R>) -> Vec<R> {
        let mut out = Vec::new();
        conv_forward(x, layer.geom(h, w), &self.params[layer.w], &self.params[layer.b], cols, &mut out);
        relu_inplace(&mut out);
        out
    }

    /// One ConvLSTM step; returns `(gates, c, h)`.
    #[allow(clippy::too_many_arguments)]
    fn lstm_step(
        &self,
        layer: &LstmLayer,
        xd: &[R],
        prev: Option<(&[R], &[R])>,
        h: usize,
        w: usize,
        cols: &mut Vec<R>,
    ) -> (Vec<R>, Vec<R>, Vec<R>) {
        let p = h * w;
        let hid = layer.hidden;
        let mut z = Vec::new();
        conv_forward(xd, layer.geom_x(h, w), &self.params[layer.wx], &self.params[layer.b], cols, &mut z);
        if let Some((h_prev, _)) = prev {
            let g = layer.geom_h(h, w);
            im2col(h_prev, g, cols);
            gemm(View::rm(&self.params[layer.wh], 4 * hid, g.patch()), View::rm(cols, g.patch(), p), R::one(), &mut z);
        }
        let n = hid * p;
        for (q, chunk) in z.chunks_mut(n).enumerate() {
            for v in chunk {
                *v = if q == 2 { v.tanh() } else { hard_sigmoid(*v) };
            }
        }
        let mut c = vec![R::zero(); n];
        let mut hn = vec![R::zero(); n];
        for k in 0..n {
            let (i, f, gg, o) = (z[k], z[n + k], z[2 * n + k], z[3 * n + k]);
            let cp = prev.map_or(R::zero(), |(_, cp)| cp[k]);
            c[k] = f * cp + i * gg;
            hn[k] = o * c[k].tanh();
        }
        (z, c, hn)
    }

    fn mask_for(&self, layer: &LstmLayer, mode: RunMode, len: usize) -> Option<Vec<R>> {
        match mode {
            RunMode::Training { dropout_seed } if layer.dropout > 0.0 => {
                Some(dropout_mask(dropout_seed, layer.stream, len, layer.dropout))
            }
            _ => None,
        }
    }

    fn run_branch(
        &self,
        window: &WindowTensor,
        conv: &ConvLayer,
        lstm: &LstmLayer,
        bands: std::ops::Range<usize>,
        mode: RunMode,
        cols: &mut Vec<R>,
    ) -> BranchCache<R> {
        let (h, w) = (window.height, window.width);
        let p = h * w;
        let mask = self.mask_for(lstm, mode, lstm.cin * p);
        let mut steps: Vec<StepCache<R>> = Vec::new();
        for t in (0..window.frames()).filter(|&t| window.validity[t]) {
            let frame = window.frame(t);
            let x: Vec<R> = frame[bands.start * p..bands.end * p].iter().map(|&v| R::from_f32(v)).collect();
            let a = self.conv_relu(conv, &x, h, w, cols);
            let xd = apply_mask(&a, mask.as_ref());
            let prev = steps.last().map(|s| (s.h.as_slice(), s.c.as_slice()));
            let (gates, c, hn) = self.lstm_step(lstm, &xd, prev, h, w, cols);
            steps.push(StepCache { frame: t, a, gates, c, h: hn });
        }
        let h_last = steps.last().map_or_else(|| vec![R::zero(); lstm.hidden * p], |s| s.h.clone());
        BranchCache { steps, mask, h_last }
    }

    pub fn forward<'w>(&self, window: &'w WindowTensor, mode: RunMode) -> Result<ForwardContext<'w, R>> {
        if window.data.len() != window.frames() * BANDS * window.pixels() {
            return Err(Error::Shape("window tensor data does not match its shape".into()));
        }
        let (h, w) = (window.height, window.width);
        let p = h * w;
        let mut cols = Vec::new();
        let opt = self.run_branch(window, &self.opt_conv, &self.opt_lstm, SAR_BANDS..BANDS, mode, &mut cols);
        let sar = self.run_branch(window, &self.sar_conv, &self.sar_lstm, 0..SAR_BANDS, mode, &mut cols);
        let mut fused_in = opt.h_last.clone();
        fused_in.extend_from_slice(&sar.h_last);
        let fuse_a = self.conv_relu(&self.fuse_conv, &fused_in, h, w, &mut cols);
        let fuse_mask = self.mask_for(&self.fuse_lstm, mode, self.fuse_lstm.cin * p);
        let xd = apply_mask(&fuse_a, fuse_mask.as_ref());
        let (fuse_gates, fuse_c, fuse_h) = self.lstm_step(&self.fuse_lstm, &xd, None, h, w, &mut cols);
        let head_a = self.conv_relu(&self.head_conv, &fuse_h, h, w, &mut cols);
        let mut output = Vec::new();
        conv_forward(
            &head_a,
            self.output.geom(h, w),
            &self.params[self.output.w],
            &self.params[self.output.b],
            &mut cols,
            &mut output,
        );
        let (lo, hi) = (R::from_f32(OUTPUT_EPS), R::one() - R::from_f32(OUTPUT_EPS));
        for v in &mut output {
            *v = sigmoid(*v).max(lo).min(hi);
        }
        Ok(ForwardContext {
            window,
            mode,
            branches: [opt, sar],
            fused_in,
            fuse_a,
            fuse_mask,
            fuse_gates,
            fuse_c,
            fuse_h,
            head_a,
            output,
        })
    }

    /// Parameter tensors in layout order, at the network's precision.
    pub fn tensors(&self) -> &[Vec<R>] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<R>] {
        &mut self.params
    }

    pub fn predict(&self, window: &WindowTensor) -> Result<Raster> {
        Ok(self.forward(window, RunMode::Inference)?.to_raster())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_grad(
        &self,
        layer: &ConvLayer,
        x: &[R],
        dz: &[R],
        grads: &mut Gradients<R>,
        dx: Option<&mut [R]>,
        h: usize,
        w: usize,
        cols: &mut Vec<R>,
    ) {
        let (dw, db) = two_mut(&mut grads.tensors, layer.w, layer.b);
        conv_backward(x, layer.geom(h, w), &self.params[layer.w], dz, dw, db, dx, cols);
    }

    /// Pre-activation gate gradients from `dh` and the incoming cell gradient.
    /// Returns `(dz, dc_prev)`.
    fn lstm_gate_grads(gates: &[R], c: &[R], c_prev: Option<&[R]>, dh: &[R], dc_in: &[R], n: usize) -> (Vec<R>, Vec<R>) {
        let mut dz = vec![R::zero(); 4 * n];
        let mut dc_prev = vec![R::zero(); n];
        for k in 0..n {
            let (i, f, g, o) = (gates[k], gates[n + k], gates[2 * n + k], gates[3 * n + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            let dc = dc_in[k] + dh[k] * o * (R::one() - tc * tc);
            let cp = c_prev.map_or(R::zero(), |v| v[k]);
            dz[k] = dc * g * hard_sigmoid_grad(i);
            dz[n + k] = dc * cp * hard_sigmoid_grad(f);
            dz[2 * n + k] = dc * i * (R::one() - g * g);
            dz[3 * n + k] = d_o * hard_sigmoid_grad(o);
            dc_prev[k] = dc * f;
        }
        (dz, dc_prev)
    }

    fn branch_backward(
        &self,
        window: &WindowTensor,
        cache: &BranchCache<R>,
        conv: &ConvLayer,
        lstm: &LstmLayer,
        bands: std::ops::Range<usize>,
        dh_last: Vec<R>,
        grads: &mut Gradients<R>,
        cols: &mut Vec<R>,
    ) {
        let (h, w) = (window.height, window.width);
        let p = h * w;
        let n = lstm.hidden * p;
        let mut dh = dh_last;
        let mut dc = vec![R::zero(); n];
        let mut scratch_b = vec![R::zero(); 4 * lstm.hidden];
        for s in (0..cache.steps.len()).rev() {
            let step = &cache.steps[s];
            let prev = if s > 0 { Some(&cache.steps[s - 1]) } else { None };
            let (dz, dc_prev) =
                Self::lstm_gate_grads(&step.gates, &step.c, prev.map(|v| v.c.as_slice()), &dh, &dc, n);
            let xd = apply_mask(&step.a, cache.mask.as_ref());
            let mut dxd = vec![R::zero(); lstm.cin * p];
            {
                let (dwx, db) = two_mut(&mut grads.tensors, lstm.wx, lstm.b);
                conv_backward(&xd, lstm.geom_x(h, w), &self.params[lstm.wx], &dz, dwx, db, Some(&mut dxd), cols);
            }
            let mut dh_prev = vec![R::zero(); n];
            if let Some(prev) = prev {
                conv_backward(
                    &prev.h,
                    lstm.geom_h(h, w),
                    &self.params[lstm.wh],
                    &dz,
                    &mut grads.tensors[lstm.wh],
                    &mut scratch_b,
                    Some(&mut dh_prev),
                    cols,
                );
            }
            if let Some(m) = &cache.mask {
                for (d, k) in dxd.iter_mut().zip(m) {
                    *d = *d * *k;
                }
            }
            relu_backward(&mut dxd, &step.a);
            let frame = window.frame(step.frame);
            let x: Vec<R> = frame[bands.start * p..bands.end * p].iter().map(|&v| R::from_f32(v)).collect();
            self.conv_grad(conv, &x, &dxd, grads, None, h, w, cols);
            dh = dh_prev;
            dc = dc_prev;
        }
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the output probabilities.
    pub fn backward(&self, ctx: &ForwardContext<'_, R>, d_output: &[R]) -> Result<Gradients<R>> {
        let window = ctx.window;
        let (h, w) = (window.height, window.width);
        let p = h * w;
        if d_output.len() != p || ctx.output.len() != p {
            return Err(Error::Context(format!(
                "output gradient has {} values for a {h}x{w} context",
                d_output.len()
            )));
        }
        if ctx.fuse_h.len() != self.fuse_lstm.hidden * p {
            return Err(Error::Context("context was produced by a different network".into()));
        }
        let mut grads = Gradients {
            tensors: self.params.iter().map(|t| vec![R::zero(); t.len()]).collect(),
        };
        let mut cols = Vec::new();
        let (lo, hi) = (R::from_f32(OUTPUT_EPS), R::one() - R::from_f32(OUTPUT_EPS));

        let dz_out: Vec<R> = ctx
            .output
            .iter()
            .zip(d_output)
            .map(|(&y, &d)| if y <= lo || y >= hi { R::zero() } else { d * y * (R::one() - y) })
            .collect();
        let mut d_head = vec![R::zero(); self.output.cin * p];
        self.conv_grad(&self.output, &ctx.head_a, &dz_out, &mut grads, Some(&mut d_head), h, w, &mut cols);
        relu_backward(&mut d_head, &ctx.head_a);

        let mut d_fuse_h = vec![R::zero(); self.head_conv.cin * p];
        self.conv_grad(&self.head_conv, &ctx.fuse_h, &d_head, &mut grads, Some(&mut d_fuse_h), h, w, &mut cols);

        let n = self.fuse_lstm.hidden * p;
        let zeros = vec![R::zero(); n];
        let (dz, _) = Self::lstm_gate_grads(&ctx.fuse_gates, &ctx.fuse_c, None, &d_fuse_h, &zeros, n);
        let xd = apply_mask(&ctx.fuse_a, ctx.fuse_mask.as_ref());
        let mut dxd = vec![R::zero(); self.fuse_lstm.cin * p];
        {
            let l = &self.fuse_lstm;
            let (dwx, db) = two_mut(&mut grads.tensors, l.wx, l.b);
            conv_backward(&xd, l.geom_x(h, w), &self.params[l.wx], &dz, dwx, db, Some(&mut dxd), &mut cols);
        }
        if let Some(m) = &ctx.fuse_mask {
            for (d, k) in dxd.iter_mut().zip(m) {
                *d = *d * *k;
            }
        }
        relu_backward(&mut dxd, &ctx.fuse_a);

        let mut d_fused = vec![R::zero(); self.fuse_conv.cin * p];
        self.conv_grad(&self.fuse_conv, &ctx.fused_in, &dxd, &mut grads, Some(&mut d_fused), h, w, &mut cols);

        let split = self.opt_lstm.hidden * p;
        let d_sar = d_fused.split_off(split);
        self.branch_backward(
            window,
            &ctx.branches[0],
            &self.opt_conv,
            &self.opt_lstm,
            SAR_BANDS..BANDS,
            d_fused,
            &mut grads,
            &mut cols,
        );
        self.branch_backward(
            window,
            &ctx.branches[1],
            &self.sar_conv,
            &self.sar_lstm,
            0..SAR_BANDS,
            d_sar,
            &mut grads,
            &mut cols,
        );
        Ok(grads)
    }
}
