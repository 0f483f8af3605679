//! Convolution and activation building blocks on top of candle tensors.
//!
//! Padding is always applied explicitly and inputs are trimmed so the
//! underlying convolution sees no implicit padding; candle's fast backward path
//! for conv1d requires that.

use candle_core::{Tensor, D};

use super::params::{Init, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding keeping the length (stride 1, odd kernel).
    Same,
    /// Edge replication keeping the length.
    Replicate,
    /// Explicit zero padding (left, right).
    Zeros(usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct ConvCfg {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub bias: bool,
    pub zero_init: bool,
    pub weight_norm: bool,
}

impl Default for ConvCfg {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
            bias: true,
            zero_init: false,
            weight_norm: false,
        }
    }
}

impl ConvCfg {
    pub fn dilated(dilation: usize) -> Self {
        Self {
            dilation,
            ..Self::default()
        }
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

pub fn mish(x: &Tensor) -> Result<Tensor> {
    Ok((x * softplus(x)?.tanh()?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

fn pad_time(x: &Tensor, left: usize, right: usize, replicate: bool) -> Result<Tensor> {
    if left == 0 && right == 0 {
        return Ok(x.clone());
    }
    Ok(if replicate {
        x.pad_with_same(D::Minus1, left, right)?
    } else {
        x.pad_with_zeros(D::Minus1, left, right)?
    })
}

/// A kernel, optionally reparameterized as `g * v / |v|` with one gain per
/// output channel.
#[derive(Debug, Clone)]
pub enum Kernel {
    Plain(Tensor),
    Normed { v: Tensor, g: Tensor },
}

fn channel_norm(v: &Tensor) -> Result<Tensor> {
    let c = v.dim(0)?;
    let mut shape = vec![1usize; v.rank()];
    shape[0] = c;
    Ok(v.sqr()?.flatten_from(1)?.sum(1)?.sqrt()?.reshape(shape)?)
}

impl Kernel {
    pub fn new(p: &Params, shape: &[usize], init: Init, weight_norm: bool) -> Result<Self> {
        if !weight_norm {
            return Ok(Self::Plain(p.get(shape, "weight", init)?));
        }
        let v = p.get(shape, "weight_v", init)?;
        let g = p.get_init("weight_g", &channel_norm(&v)?)?;
        Ok(Self::Normed { v, g })
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            Self::Plain(w) => w.dims(),
            Self::Normed { v, .. } => v.dims(),
        }
    }

    pub fn weight(&self) -> Result<Tensor> {
        match self {
            Self::Plain(w) => Ok(w.clone()),
            Self::Normed { v, g } => {
                let scale = (g / (channel_norm(v)? + 1e-12)?)?;
                Ok(v.broadcast_mul(&scale)?)
            }
        }
    }
}

/// 1-D convolution over `(batch, channels, time)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Kernel,
    bias: Option<Tensor>,
    cfg: ConvCfg,
}

impl Conv1d {
    pub fn new(p: &Params, c_in: usize, c_out: usize, kernel: usize, cfg: ConvCfg) -> Result<Self> {
        if matches!(cfg.padding, Padding::Same | Padding::Replicate) && kernel % 2 == 0 {
            return Err(Error::config(format!("same padding needs an odd kernel, got {kernel}")));
        }
        if cfg.dilation > 1 && (cfg.stride != 1 || cfg.padding != Padding::Same) {
            return Err(Error::config("dilated convolutions support stride 1 same padding only"));
        }
        if cfg.zero_init && cfg.weight_norm {
            return Err(Error::config("a weight-normalized convolution cannot start at zero"));
        }
        let init = if cfg.zero_init { Init::Zeros } else { Init::FanIn };
        let weight = Kernel::new(p, &[c_out, c_in, kernel], init, cfg.weight_norm)?;
        let bias = if cfg.bias {
            Some(p.get(c_out, "bias", Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias, cfg })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.weight()?;
        let y = if self.cfg.dilation > 1 {
            self.forward_polyphase(x, &w)?
        } else {
            let k = self.kernel();
            let (l, r, rep) = match self.cfg.padding {
                Padding::Same => ((k - 1) / 2, (k - 1) / 2, false),
                Padding::Replicate => ((k - 1) / 2, (k - 1) / 2, true),
                Padding::Zeros(l, r) => (l, r, false),
            };
            let xp = pad_time(x, l, r, rep)?;
            let len = xp.dim(D::Minus1)?;
            if len < k {
                return Err(Error::dim(format!("input length {len} shorter than kernel {k}")));
            }
            let out = (len - k) / self.cfg.stride + 1;
            let need = (out - 1) * self.cfg.stride + k;
            let xp = if need < len { xp.narrow(D::Minus1, 0, need)? } else { xp };
            xp.contiguous()?.conv1d(&w, 0, self.cfg.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }

    /// Dilated "same" convolution as an undilated one over the interleaved phases.
    fn forward_polyphase(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let d = self.cfg.dilation;
        let k = self.kernel();
        let (b, c, len) = x.dims3()?;
        let phase_len = len.div_ceil(d);
        let x = x.pad_with_zeros(D::Minus1, 0, phase_len * d - len)?;
        let phases = x
            .reshape((b, c, phase_len, d))?
            .permute((0, 3, 1, 2))?
            .reshape((b * d, c, phase_len))?;
        let half = (k - 1) / 2;
        let phases = phases.pad_with_zeros(D::Minus1, half, half)?.contiguous()?;
        let y = phases.conv1d(w, 0, 1, 1, 1)?;
        let c_out = self.out_channels();
        let y = y
            .reshape((b, d, c_out, phase_len))?
            .permute((0, 2, 3, 1))?
            .reshape((b, c_out, phase_len * d))?;
        Ok(y.narrow(D::Minus1, 0, len)?)
    }
}

/// Dense layer applied to the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(p: &Params, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get((c_out, c_in), "weight", Init::FanIn)?,
            bias: p.get(c_out, "bias", Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Learned upsampling by an integer factor, equivalent to a strided transposed
/// convolution: each of the `rate` output phases is a 3-tap convolution of the
/// input, and the phases are interleaved.
#[derive(Debug, Clone)]
pub struct Upsample {
    conv: Conv1d,
    rate: usize,
    c_out: usize,
}

impl Upsample {
    pub fn new(p: &Params, c_in: usize, c_out: usize, rate: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(p, c_in, c_out * rate, 3, ConvCfg::default())?,
            rate,
            c_out,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, t) = x.dims3()?;
        let y = self.conv.forward(x)?;
        Ok(y
            .reshape((b, self.c_out, self.rate, t))?
            .permute((0, 1, 3, 2))?
            .reshape((b, self.c_out, t * self.rate))?)
    }
}

/// 2-D convolution over `(batch, channels, time, freq)` with stride along
/// frequency only, computed as a sum of 1-D frequency convolutions per time tap.
/// The kernel is always weight-normalized.
#[derive(Debug, Clone)]
pub struct Conv2dTf {
    weight: Kernel,
    bias: Tensor,
    kernel: (usize, usize),
    freq_stride: usize,
    padding: (usize, usize),
}

impl Conv2dTf {
    pub fn new(
        p: &Params,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        freq_stride: usize,
        padding: (usize, usize),
    ) -> Result<Self> {
        Ok(Self {
            weight: Kernel::new(p, &[c_out, c_in, kernel.0, kernel.1], Init::FanIn, true)?,
            bias: p.get(c_out, "bias", Init::Zeros)?,
            kernel,
            freq_stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t, f) = x.dims4()?;
        let (kt, kf) = self.kernel;
        let (pt, pf) = self.padding;
        let x = x.pad_with_zeros(2, pt, pt)?.pad_with_zeros(3, pf, pf)?;
        let (tp, fp) = (t + 2 * pt, f + 2 * pf);
        if tp < kt || fp < kf {
            return Err(Error::dim(format!("input {t}x{f} too small for kernel {kt}x{kf}")));
        }
        let t_out = tp - kt + 1;
        let f_out = (fp - kf) / self.freq_stride + 1;
        let need = (f_out - 1) * self.freq_stride + kf;
        let x = x.narrow(3, 0, need)?;
        let weight = self.weight.weight()?;
        let c_out = weight.dim(0)?;
        let mut acc: Option<Tensor> = None;
        for dt in 0..kt {
            let rows = x
                .narrow(2, dt, t_out)?
                .permute((0, 2, 1, 3))?
                .reshape((b * t_out, c, need))?
                .contiguous()?;
            let w = weight.narrow(2, dt, 1)?.squeeze(2)?.contiguous()?;
            let y = rows.conv1d(&w, 0, self.freq_stride, 1, 1)?;
            acc = Some(match acc {
                None => y,
                Some(a) => (a + y)?,
            });
        }
        let y = acc
            .expect("kernel has at least one time tap")
            .reshape((b, t_out, c_out, f_out))?
            .permute((0, 2, 1, 3))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c_out, 1, 1))?)?)
    }
}

/// Non-causal gated residual stack with optional global conditioning.
#[derive(Debug, Clone)]
pub struct WaveNet {
    in_layers: Vec<Conv1d>,
    res_skip: Vec<Conv1d>,
    cond: Option<Conv1d>,
    hidden: usize,
}

impl WaveNet {
    pub fn new(
        p: &Params,
        hidden: usize,
        kernel: usize,
        dilation_rate: usize,
        n_layers: usize,
        cond_channels: usize,
    ) -> Result<Self> {
        let mut in_layers = Vec::with_capacity(n_layers);
        let mut res_skip = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let dilation = dilation_rate.pow(i as u32);
            in_layers.push(Conv1d::new(
                &p.pp(format!("in_layers.{i}")),
                hidden,
                2 * hidden,
                kernel,
                ConvCfg::dilated(dilation),
            )?);
            let out = if i + 1 < n_layers { 2 * hidden } else { hidden };
            res_skip.push(Conv1d::new(
                &p.pp(format!("res_skip.{i}")),
                hidden,
                out,
                1,
                ConvCfg::default(),
            )?);
        }
        let cond = if cond_channels > 0 {
            Some(Conv1d::new(
                &p.pp("cond"),
                cond_channels,
                2 * hidden * n_layers,
                1,
                ConvCfg::default(),
            )?)
        } else {
            None
        };
        Ok(Self {
            in_layers,
            res_skip,
            cond,
            hidden,
        })
    }

    /// `x`: `(B, hidden, T)`; `g`: `(B, cond_channels, 1)` broadcast over time.
    pub fn forward(&self, x: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        let h = self.hidden;
        let g = match (&self.cond, g) {
            (Some(c), Some(g)) => Some(c.forward(g)?),
            (None, None) => None,
            _ => return Err(Error::State("conditioning does not match the layer".into())),
        };
        let mut x = x.clone();
        let mut out: Option<Tensor> = None;
        let n = self.in_layers.len();
        for i in 0..n {
            let mut x_in = self.in_layers[i].forward(&x)?;
            if let Some(g) = &g {
                x_in = x_in.broadcast_add(&g.narrow(1, 2 * h * i, 2 * h)?)?;
            }
            let acts = (x_in.narrow(1, 0, h)?.tanh()? * sigmoid(&x_in.narrow(1, h, h)?)?)?;
            let rs = self.res_skip[i].forward(&acts)?;
            let skip = if i + 1 < n {
                x = (x + rs.narrow(1, 0, h)?)?;
                rs.narrow(1, h, h)?
            } else {
                rs
            };
            out = Some(match out {
                None => skip,
                Some(o) => (o + skip)?,
            });
        }
        Ok(out.unwrap_or_else(|| x.zeros_like().expect("zeros")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::{DType, Device, Var};

    fn store() -> ParamStore {
        ParamStore::new(3, DType::F64, &Device::Cpu)
    }

    fn ramp(shape: (usize, usize, usize)) -> Tensor {
        let n = shape.0 * shape.1 * shape.2;
        Tensor::from_vec(
            (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect::<Vec<_>>(),
            shape,
            &Device::Cpu,
        )
        .unwrap()
    }

    /// Direct dilated convolution with zero padding, for comparison.
    fn naive_dilated(x: &Tensor, w: &Tensor, d: usize) -> Vec<Vec<Vec<f64>>> {
        let x = x.to_vec3::<f64>().unwrap();
        let w = w.to_vec3::<f64>().unwrap();
        let k = w[0][0].len();
        let half = (k - 1) / 2;
        let len = x[0][0].len();
        x.iter()
            .map(|xb| {
                w.iter()
                    .map(|wo| {
                        (0..len)
                            .map(|n| {
                                let mut acc = 0.0;
                                for (ci, wc) in wo.iter().enumerate() {
                                    for (j, wj) in wc.iter().enumerate() {
                                        let pos = n as isize + (j as isize - half as isize) * d as isize;
                                        if pos >= 0 && (pos as usize) < len {
                                            acc += wj * xb[ci][pos as usize];
                                        }
                                    }
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn polyphase_matches_direct_dilation() {
        for (d, len) in [(2usize, 17usize), (3, 20), (5, 7)] {
            let s = store();
            let cfg = ConvCfg {
                bias: false,
                ..ConvCfg::dilated(d)
            };
            let conv = Conv1d::new(&s.root(), 2, 3, 5, cfg).unwrap();
            let x = ramp((2, 2, len));
            let y = conv.forward(&x).unwrap().to_vec3::<f64>().unwrap();
            let expect = naive_dilated(&x, &conv.weight.weight().unwrap(), d);
            for (a, b) in y.iter().flatten().flatten().zip(expect.iter().flatten().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_conv_keeps_length_and_strided_shrinks() {
        let s = store();
        let c = Conv1d::new(&s.root().pp("a"), 2, 4, 5, ConvCfg::default()).unwrap();
        assert_eq!(c.forward(&ramp((1, 2, 13))).unwrap().dims(), &[1, 4, 13]);
        let strided = Conv1d::new(
            &s.root().pp("b"),
            2,
            4,
            5,
            ConvCfg {
                stride: 3,
                padding: Padding::Zeros(2, 2),
                ..ConvCfg::default()
            },
        )
        .unwrap();
        // (13 + 4 - 5) / 3 + 1
        assert_eq!(strided.forward(&ramp((1, 2, 13))).unwrap().dims(), &[1, 4, 5]);
    }

    #[test]
    fn replicate_padding_keeps_constants_constant() {
        let s = store();
        let c = Conv1d::new(
            &s.root(),
            1,
            2,
            5,
            ConvCfg {
                padding: Padding::Replicate,
                ..ConvCfg::default()
            },
        )
        .unwrap();
        let x = Tensor::full(0.7f64, (1, 1, 9), &Device::Cpu).unwrap();
        let y = c.forward(&x).unwrap().to_vec3::<f64>().unwrap();
        for row in &y[0] {
            assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn upsample_length() {
        let s = store();
        let u = Upsample::new(&s.root(), 4, 2, 11).unwrap();
        assert_eq!(u.forward(&ramp((2, 4, 7))).unwrap().dims(), &[2, 2, 77]);
    }

    #[test]
    fn conv2d_matches_direct() {
        let s = store();
        let conv = Conv2dTf::new(&s.root(), 2, 3, (3, 5), 2, (1, 2)).unwrap();
        let x = ramp((1, 2, 4 * 9)).reshape((1, 2, 4, 9)).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 4, 5]);
        let xs: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
        let ws: Vec<f64> = conv.weight.weight().unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let ys: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        let xi = |c: usize, t: isize, f: isize| -> f64 {
            if t < 0 || t >= 4 || f < 0 || f >= 9 {
                0.0
            } else {
                xs[c * 36 + t as usize * 9 + f as usize]
            }
        };
        for o in 0..3 {
            for t in 0..4 {
                for fo in 0..5 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for kt in 0..3 {
                            for kf in 0..5 {
                                let w = ws[((o * 2 + c) * 3 + kt) * 5 + kf];
                                acc += w * xi(c, t as isize + kt as isize - 1, (fo * 2) as isize + kf as isize - 2);
                            }
                        }
                    }
                    let got = ys[(o * 4 + t) * 5 + fo];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn weight_norm_starts_at_direction_and_scales_with_gain() {
        let s = store();
        let cfg = ConvCfg {
            weight_norm: true,
            ..ConvCfg::default()
        };
        let conv = Conv1d::new(&s.root(), 2, 3, 3, cfg).unwrap();
        let vars = s.named_vars();
        let names: Vec<&str> = vars.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["bias", "weight_g", "weight_v"]);
        let v = vars[2].1.as_tensor().clone();
        let w0 = conv.weight.weight().unwrap();
        let diff = (&w0 - &v).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
        vars[1].1.set(&(vars[1].1.as_tensor() * 2.0).unwrap()).unwrap();
        let w1 = conv.weight.weight().unwrap();
        let diff = (&w1 - (&v * 2.0).unwrap()).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-10, "{diff}");
        assert_eq!(vars[1].1.dims(), &[3, 1, 1]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = ramp((1, 3, 6));
        let s = softmax_last(&x).unwrap().sum(D::Minus1).unwrap();
        for v in s.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_flow_through_conv_paths() {
        let s = store();
        let conv = Conv1d::new(&s.root(), 2, 2, 3, ConvCfg::dilated(2)).unwrap();
        let x = Var::from_tensor(&ramp((1, 2, 10))).unwrap();
        let loss = conv.forward(x.as_tensor()).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        for (_, v) in s.named_vars() {
            assert!(grads.get(&v).is_some());
        }
        assert!(grads.get(&x).is_some());
    }

    #[test]
    fn mish_is_finite_for_large_inputs() {
        let x = Tensor::new(&[-100.0f64, 0.0, 100.0], &Device::Cpu).unwrap();
        let y = mish(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y[2] - 100.0).abs() < 1e-9);
    }
}
