//! Dense feature maps and the handful of layers the classifier needs, each
//! with an explicit backward pass.

/// Channel-major feature map, `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Shape of a 3x3, stride 1, zero-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv3x3 {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * 9
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    /// `params` holds the weights (`[out][in][ky][kx]`) followed by the biases.
    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_ch);
        let (h, w) = (x.h, x.w);
        let (weights, bias) = params.split_at(self.weight_len());
        let mut out = Tensor::zeros(self.out_ch, h, w);
        for o in 0..self.out_ch {
            let plane = out.plane_mut(o);
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..self.in_ch {
                let src = x.plane(i);
                let k = &weights[(o * self.in_ch + i) * 9..][..9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        accumulate_shifted(plane, src, h, w, ky, kx, wv);
                    }
                }
            }
        }
        out
    }

    /// Returns the input gradient and adds parameter gradients into `grad`.
    pub fn backward(&self, params: &[f64], x: &Tensor, dout: &Tensor, grad: &mut [f64]) -> Tensor {
        let (h, w) = (x.h, x.w);
        let weights = &params[..self.weight_len()];
        let (gw, gb) = grad.split_at_mut(self.weight_len());
        let mut dx = Tensor::zeros(self.in_ch, h, w);
        for (o, gbo) in gb.iter_mut().enumerate().take(self.out_ch) {
            let d = dout.plane(o);
            *gbo += d.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let src = x.plane(i);
                let base = (o * self.in_ch + i) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        gw[base + ky * 3 + kx] += correlate_shifted(d, src, h, w, ky, kx);
                        let wv = weights[base + ky * 3 + kx];
                        scatter_shifted(dx.plane_mut(i), d, h, w, ky, kx, wv);
                    }
                }
            }
        }
        dx
    }
}

/// Row and column ranges of output pixels whose tap (ky, kx) lands inside the input.
#[inline]
fn valid_range(len: usize, k: usize) -> (usize, usize) {
    // output index p reads input p + k - 1
    let lo = usize::from(k == 0);
    let hi = if k == 2 { len - 1 } else { len };
    (lo, hi.max(lo))
}

#[inline]
fn accumulate_shifted(
    out: &mut [f64],
    src: &[f64],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    wv: f64,
) {
    let (y0, y1) = valid_range(h, ky);
    let (x0, x1) = valid_range(w, kx);
    for y in y0..y1 {
        let sy = y + ky - 1;
        let o = &mut out[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wv * sv;
        }
    }
}

#[inline]
fn correlate_shifted(d: &[f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let (y0, y1) = valid_range(h, ky);
    let (x0, x1) = valid_range(w, kx);
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = y + ky - 1;
        let dv = &d[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        acc += dv.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

#[inline]
fn scatter_shifted(dx: &mut [f64], d: &[f64], h: usize, w: usize, ky: usize, kx: usize, wv: f64) {
    let (y0, y1) = valid_range(h, ky);
    let (x0, x1) = valid_range(w, kx);
    for y in y0..y1 {
        let sy = y + ky - 1;
        let dv = &d[y * w + x0..y * w + x1];
        let t = &mut dx[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        for (tv, dv) in t.iter_mut().zip(dv) {
            *tv += wv * dv;
        }
    }
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the activation was clipped.
pub fn relu_backward(activated: &Tensor, dout: &mut Tensor) {
    for (d, a) in dout.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
/// Also returns the flat input index of each selected maximum.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut arg = vec![0usize; x.c * oh * ow];
    for c in 0..x.c {
        let base = c * x.h * x.w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + (2 * y) * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = (c * oh + y) * ow + xx;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(
    input_shape: (usize, usize, usize),
    arg: &[usize],
    dout: &Tensor,
) -> Tensor {
    let (c, h, w) = input_shape;
    let mut dx = Tensor::zeros(c, h, w);
    for (o, &i) in arg.iter().enumerate() {
        dx.data[i] += dout.data[o];
    }
    dx
}

/// Mean of each channel over all spatial positions.
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let n = (x.h * x.w) as f64;
    (0..x.c)
        .map(|c| x.plane(c).iter().sum::<f64>() / n)
        .collect()
}

pub fn global_avg_pool_backward(shape: (usize, usize, usize), dpooled: &[f64]) -> Tensor {
    let (c, h, w) = shape;
    let mut dx = Tensor::zeros(c, h, w);
    let n = (h * w) as f64;
    for (ch, &g) in dpooled.iter().enumerate() {
        dx.plane_mut(ch).iter_mut().for_each(|v| *v = g / n);
    }
    dx
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
