use rand::Rng;

use super::{uniform, ParamSet, Real, Tensor};

/// One stage of a [`Sequential`] network.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    /// Weight `[cout, cin·k·k]`, bias `[cout]`.
    Conv {
        weight: Tensor<T>,
        bias: Tensor<T>,
        k: usize,
        stride: usize,
        pad: usize,
    },
    /// Transposed convolution. Weight `[cin, cout·k·k]`, bias `[cout]`.
    Deconv {
        weight: Tensor<T>,
        bias: Tensor<T>,
        k: usize,
        stride: usize,
        pad: usize,
    },
    /// Weight `[out, in]`, bias `[out]`; flattens everything after the batch axis.
    Linear {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    LeakyRelu(T),
    Relu,
    Sigmoid,
    /// Non-overlapping `k×k` average pooling.
    AvgPool(usize),
    /// New per-item shape (the batch axis is kept).
    Reshape(Vec<usize>),
}

impl<T: Real> Layer<T> {
    pub fn conv<R: Rng>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let w = (0..cout * cin * k * k)
            .map(|_| uniform(rng, bound))
            .collect();
        Layer::Conv {
            weight: Tensor::from_vec(&[cout, cin * k * k], w),
            bias: Tensor::zeros(&[cout]),
            k,
            stride,
            pad,
        }
    }

    pub fn deconv<R: Rng>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        // Each output sees about cin·k²/stride² inputs.
        let fan_in = ((cin * k * k) as f64 / (stride * stride) as f64).max(1.0);
        let bound = (6.0 / fan_in).sqrt();
        let w = (0..cin * cout * k * k)
            .map(|_| uniform(rng, bound))
            .collect();
        Layer::Deconv {
            weight: Tensor::from_vec(&[cin, cout * k * k], w),
            bias: Tensor::zeros(&[cout]),
            k,
            stride,
            pad,
        }
    }

    pub fn linear<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| uniform(rng, bound)).collect();
        Layer::Linear {
            weight: Tensor::from_vec(&[fan_out, fan_in], w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    /// Scales the weights, e.g. to start an output layer near zero.
    pub fn scaled(mut self, s: f64) -> Self {
        if let Layer::Conv { weight, .. }
        | Layer::Deconv { weight, .. }
        | Layer::Linear { weight, .. } = &mut self
        {
            for v in weight.data_mut() {
                *v *= T::of(s);
            }
        }
        self
    }

    fn param_refs(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv { weight, bias, .. }
            | Layer::Deconv { weight, bias, .. }
            | Layer::Linear { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    fn param_muts(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv { weight, bias, .. }
            | Layer::Deconv { weight, bias, .. }
            | Layer::Linear { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv {
                weight,
                bias,
                k,
                stride,
                pad,
            } => conv_forward(x, weight, bias, *k, *stride, *pad),
            Layer::Deconv {
                weight,
                bias,
                k,
                stride,
                pad,
            } => deconv_forward(x, weight, bias, *k, *stride, *pad),
            Layer::Linear { weight, bias } => {
                let n = x.batch();
                let fin = x.item_len();
                let fout = weight.shape()[0];
                assert_eq!(weight.shape()[1], fin, "linear input width");
                let mut y = Vec::with_capacity(n * fout);
                for _ in 0..n {
                    y.extend_from_slice(bias.data());
                }
                T::gemm(
                    n,
                    fin,
                    fout,
                    x.data(),
                    false,
                    weight.data(),
                    true,
                    T::one(),
                    &mut y,
                );
                Tensor::from_vec(&[n, fout], y)
            }
            Layer::LeakyRelu(a) => {
                let a = *a;
                x.map(|v| if v > T::zero() { v } else { v * a })
            }
            Layer::Relu => x.map(|v| v.max(T::zero())),
            Layer::Sigmoid => x.map(super::sigmoid),
            Layer::AvgPool(k) => avgpool_forward(x, *k),
            Layer::Reshape(shape) => {
                let mut s = vec![x.batch()];
                s.extend_from_slice(shape);
                x.clone().reshape(&s)
            }
        }
    }

    /// Returns the input gradient; parameter gradients are accumulated into `grads`.
    fn backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        match self {
            Layer::Conv {
                weight,
                k,
                stride,
                pad,
                ..
            } => {
                let (gw, gb) = two_mut(grads);
                conv_backward(x, weight, dy, *k, *stride, *pad, gw, gb)
            }
            Layer::Deconv {
                weight,
                k,
                stride,
                pad,
                ..
            } => {
                let (gw, gb) = two_mut(grads);
                deconv_backward(x, weight, dy, *k, *stride, *pad, gw, gb)
            }
            Layer::Linear { weight, .. } => {
                let (gw, gb) = two_mut(grads);
                let n = x.batch();
                let fin = x.item_len();
                let fout = weight.shape()[0];
                T::gemm(
                    fout,
                    n,
                    fin,
                    dy.data(),
                    true,
                    x.data(),
                    false,
                    T::one(),
                    gw.data_mut(),
                );
                for row in dy.data().chunks_exact(fout) {
                    for (g, &d) in gb.data_mut().iter_mut().zip(row) {
                        *g += d;
                    }
                }
                let mut dx = vec![T::zero(); n * fin];
                T::gemm(
                    n,
                    fout,
                    fin,
                    dy.data(),
                    false,
                    weight.data(),
                    false,
                    T::zero(),
                    &mut dx,
                );
                Tensor::from_vec(x.shape(), dx)
            }
            Layer::LeakyRelu(a) => {
                let a = *a;
                zip_map(x, dy, |xv, d| if xv > T::zero() { d } else { d * a })
            }
            Layer::Relu => zip_map(x, dy, |xv, d| if xv > T::zero() { d } else { T::zero() }),
            Layer::Sigmoid => zip_map(y, dy, |yv, d| d * yv * (T::one() - yv)),
            Layer::AvgPool(k) => avgpool_backward(x.shape(), dy, *k),
            Layer::Reshape(_) => dy.clone().reshape(x.shape()),
        }
    }
}

fn two_mut<T>(grads: &mut [Tensor<T>]) -> (&mut Tensor<T>, &mut Tensor<T>) {
    let (a, b) = grads.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| f(p, q))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    acts: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("tape holds at least the input")
    }

    /// Input of layer `i` (`i == layers.len()` is the output).
    pub fn activation(&self, i: usize) -> &Tensor<T> {
        &self.acts[i]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur);
        }
        cur
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tape<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for l in &self.layers {
            let next = l.forward(acts.last().unwrap());
            acts.push(next);
        }
        Tape { acts }
    }

    /// Backpropagates `dy` through the recorded pass. `grads` must be aligned
    /// with [`ParamSet::params`] and is accumulated into, not overwritten.
    pub fn backward(&self, tape: &Tape<T>, dy: &Tensor<T>, grads: &mut [Tensor<T>]) -> Tensor<T> {
        self.backward_from(tape, self.layers.len(), dy, grads)
    }

    /// Like [`backward`](Self::backward), with `dy` the gradient of the input
    /// of layer `end`: only layers `0..end` are traversed.
    pub fn backward_from(
        &self,
        tape: &Tape<T>,
        end: usize,
        dy: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_refs().len();
        }
        assert_eq!(off, grads.len(), "gradient buffer count");
        let mut d = dy.clone();
        for (i, l) in self.layers[..end].iter().enumerate().rev() {
            let np = l.param_refs().len();
            let g = &mut grads[offsets[i]..offsets[i] + np];
            d = l.backward(&tape.acts[i], &tape.acts[i + 1], &d, g);
        }
        d
    }
}

impl<T: Real> ParamSet<T> for Sequential<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.param_refs()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_muts())
            .collect()
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= k, "kernel larger than padded input");
    (size + 2 * pad - k) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, c, h, w) = dims4(x);
    let cout = weight.shape()[0];
    assert_eq!(weight.shape()[1], c * k * k, "conv input channels");
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let plane = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * plane];
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for b in 0..n {
        im2col(x.item(b), c, h, w, k, stride, pad, ho, wo, &mut cols);
        let y = out.item_mut(b);
        for (co, chunk) in y.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        T::gemm(
            cout,
            c * k * k,
            plane,
            weight.data(),
            false,
            &cols,
            false,
            T::one(),
            y,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    gw: &mut Tensor<T>,
    gb: &mut Tensor<T>,
) -> Tensor<T> {
    let (n, c, h, w) = dims4(x);
    let (_, cout, ho, wo) = dims4(dy);
    let plane = ho * wo;
    let ckk = c * k * k;
    let mut cols = vec![T::zero(); ckk * plane];
    let mut dcols = vec![T::zero(); ckk * plane];
    let mut dx = Tensor::zeros(x.shape());
    for b in 0..n {
        im2col(x.item(b), c, h, w, k, stride, pad, ho, wo, &mut cols);
        let d = dy.item(b);
        T::gemm(
            cout,
            plane,
            ckk,
            d,
            false,
            &cols,
            true,
            T::one(),
            gw.data_mut(),
        );
        for (co, chunk) in d.chunks_exact(plane).enumerate() {
            gb.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        T::gemm(
            ckk,
            cout,
            plane,
            weight.data(),
            true,
            d,
            false,
            T::zero(),
            &mut dcols,
        );
        col2im(&dcols, c, h, w, k, stride, pad, ho, wo, dx.item_mut(b));
    }
    dx
}

fn deconv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size - 1) * stride + k - 2 * pad
}

fn deconv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, cin, hi, wi) = dims4(x);
    assert_eq!(weight.shape()[0], cin, "deconv input channels");
    let cout = weight.shape()[1] / (k * k);
    let ho = deconv_out(hi, k, stride, pad);
    let wo = deconv_out(wi, k, stride, pad);
    let plane_in = hi * wi;
    let mut cols = vec![T::zero(); cout * k * k * plane_in];
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for b in 0..n {
        T::gemm(
            cout * k * k,
            cin,
            plane_in,
            weight.data(),
            true,
            x.item(b),
            false,
            T::zero(),
            &mut cols,
        );
        let y = out.item_mut(b);
        for (co, chunk) in y.chunks_exact_mut(ho * wo).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        col2im(&cols, cout, ho, wo, k, stride, pad, hi, wi, y);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn deconv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    gw: &mut Tensor<T>,
    gb: &mut Tensor<T>,
) -> Tensor<T> {
    let (n, cin, hi, wi) = dims4(x);
    let (_, cout, ho, wo) = dims4(dy);
    let plane_in = hi * wi;
    let ckk = cout * k * k;
    let mut cols = vec![T::zero(); ckk * plane_in];
    let mut dx = Tensor::zeros(x.shape());
    for b in 0..n {
        let d = dy.item(b);
        im2col(d, cout, ho, wo, k, stride, pad, hi, wi, &mut cols);
        T::gemm(
            cin,
            ckk,
            plane_in,
            weight.data(),
            false,
            &cols,
            false,
            T::zero(),
            dx.item_mut(b),
        );
        T::gemm(
            cin,
            plane_in,
            ckk,
            x.item(b),
            false,
            &cols,
            true,
            T::one(),
            gw.data_mut(),
        );
        for (co, chunk) in d.chunks_exact(ho * wo).enumerate() {
            gb.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
    }
    dx
}

fn avgpool_forward<T: Real>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = dims4(x);
    let (ho, wo) = (h / k, w / k);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(ho * wo).enumerate() {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        s += src[base + (oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * wo + ox] = s * scale;
            }
        }
    }
    out
}

fn avgpool_backward<T: Real>(shape: &[usize], dy: &Tensor<T>, k: usize) -> Tensor<T> {
    let (h, w) = (shape[2], shape[3]);
    let (ho, wo) = (h / k, w / k);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut dx = Tensor::zeros(shape);
    for (plane, src) in dy.data().chunks_exact(ho * wo).enumerate() {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * scale;
                for ddy in 0..k {
                    for ddx in 0..k {
                        dx.data_mut()[base + (oy * k + ddy) * w + ox * k + ddx] = g;
                    }
                }
            }
        }
    }
    dx
}

fn dims4<T>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = &t.shape;
    assert_eq!(s.len(), 4, "expected an NCHW tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-summation convolution used as an oracle for the im2col path.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        k: usize,
        s: usize,
        p: usize,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = dims4(x);
        let cout = w.shape()[0];
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[co * c * k * k + (ci * k + ky) * k + kx]
                                        * x.data()
                                            [((bi * c + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 3, 7, 6]);
        let layer = Layer::<f64>::conv(&mut rng, 3, 4, 3, 2, 1);
        let Layer::Conv { weight, .. } = &layer else {
            unreachable!()
        };
        let bias = rand_tensor(&mut rng, &[4]);
        let got = conv_forward(&x, weight, &bias, 3, 2, 1);
        let want = naive_conv(&x, weight, &bias, 3, 2, 1);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> with shared weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, cout, k, s, p) = (3, 5, 4, 2, 1);
        let x = rand_tensor(&mut rng, &[1, c, 8, 8]);
        let w = rand_tensor(&mut rng, &[cout, c * k * k]);
        let zero_out = Tensor::zeros(&[cout]);
        let y_conv = conv_forward(&x, &w, &zero_out, k, s, p);
        let y = rand_tensor(&mut rng, y_conv.shape());
        // Deconv weight layout is [cin, cout·k·k] where cin is the conv's cout.
        let mut wt = Tensor::zeros(&[cout, c * k * k]);
        wt.data_mut().copy_from_slice(w.data());
        let x_back = deconv_forward(&y, &wt, &Tensor::zeros(&[c]), k, s, p);
        assert_eq!(x_back.shape(), x.shape());
        let lhs: f64 = y_conv.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(x_back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn sequential_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Sequential::new(vec![
            Layer::<f64>::conv(&mut rng, 2, 3, 4, 2, 1),
            Layer::LeakyRelu(0.2),
            Layer::AvgPool(2),
            Layer::Reshape(vec![3 * 2 * 2]),
            Layer::linear(&mut rng, 12, 12),
            Layer::Relu,
            Layer::Reshape(vec![3, 2, 2]),
            Layer::deconv(&mut rng, 3, 2, 4, 2, 1),
            Layer::Sigmoid,
        ]);
        let x = rand_tensor(&mut rng, &[2, 2, 8, 8]);
        let target = rand_tensor(&mut rng, &[2, 2, 4, 4]);
        let loss = |net: &Sequential<f64>| -> f64 {
            let y = net.infer(&x);
            y.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum()
        };
        let tape = net.forward(&x);
        let y = tape.output().clone();
        let dy = Tensor::from_vec(
            y.shape(),
            y.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| a - b)
                .collect(),
        );
        let mut grads = net.zero_grads();
        net.backward(&tape, &dy, &mut grads);
        let analytic = super::super::flatten_grads(&grads);
        let flat = net.to_flat();
        let eps = 1e-6;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += eps;
            net.set_flat(&p);
            let up = loss(&net);
            p[i] -= 2.0 * eps;
            net.set_flat(&p);
            let down = loss(&net);
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic[i] - numeric).abs() / denom < 1e-5,
                "param {i}: {} vs {numeric}",
                analytic[i]
            );
        }
        net.set_flat(&flat);
    }
}
