use super::{expect_rank4, expect_shape, no_cache, LayerParams};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, init_weights, Init, Real, Tensor};

const K: usize = 3;
const TAPS: usize = K * K;

/// 3x3 stride-1 cross-correlation with zero padding 1 ("same" output size).
///
/// Runs as im2col + GEMM per batch element. Weights are `F x C x 3 x 3`,
/// bias is `F`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub params: LayerParams<T>,
    in_channels: usize,
    filters: usize,
    /// The first layer has no upstream consumer for its input gradient.
    pub input_grad: bool,
    /// When false the bias is held at zero: ignored in forward, never
    /// accumulated in backward.
    pub use_bias: bool,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, in_channels: usize, filters: usize, rng: &mut Rng) -> Result<Self> {
        let weights = init_weights(&[filters, in_channels, K, K], Init::HeUniform, rng)?;
        let bias = Tensor::zeros(&[filters])?;
        Self::from_params(LayerParams::new(name, weights, bias))
    }

    pub fn from_params(params: LayerParams<T>) -> Result<Self> {
        let (filters, in_channels) = match *params.weights.shape() {
            [f, c, K, K] if params.bias.shape() == [f] => (f, c),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv2d {}: weights {:?} / bias {:?} are not F x C x 3 x 3 / F",
                    params.name,
                    params.weights.shape(),
                    params.bias.shape()
                )))
            }
        };
        Ok(Self {
            params,
            in_channels,
            filters,
            input_grad: true,
            use_bias: true,
            cache: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (b, c, h, w) = expect_rank4(x, "conv2d")?;
        if c != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv2d {}: input has {c} channels, kernels expect {}",
                self.params.name, self.in_channels
            )));
        }
        Ok((b, c, h, w))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = self.check_input(x)?;
        let hw = h * w;
        let f = self.filters;
        let weights = self.params.weights.data();
        let bias = self.use_bias.then(|| self.params.bias.data());
        let input = x.data();
        let mut out = vec![T::zero(); b * f * hw];
        par::for_each_chunk_mut(&mut out, f * hw, |n, out_n| {
            let cols = im2col(&input[n * c * hw..(n + 1) * c * hw], c, h, w);
            if let Some(bias) = bias {
                for (row, &bv) in out_n.chunks_mut(hw).zip(bias) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(f, c * TAPS, hw, weights, &cols, out_n);
        });
        self.cache = Some(x.clone());
        Ok(Tensor::from_parts(vec![b, f, h, w], out))
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| no_cache("conv2d"))?;
        let (b, c, h, w) = expect_rank4(&x, "conv2d")?;
        let f = self.filters;
        let hw = h * w;
        let ck = c * TAPS;
        expect_shape(g, &[b, f, h, w], "conv2d")?;

        let weights = self.params.weights.data();
        let input = x.data();
        let upstream = g.data();
        let want_dx = self.input_grad;

        // Per-sample partials, reduced below in sample order.
        let partials = par::map_indexed(b, |n| {
            let g_n = &upstream[n * f * hw..(n + 1) * f * hw];
            let cols = im2col(&input[n * c * hw..(n + 1) * c * hw], c, h, w);
            let mut dw = vec![T::zero(); f * ck];
            gemm_nt(f, hw, ck, g_n, &cols, &mut dw);
            let db: Vec<T> = g_n.chunks(hw).map(|r| r.iter().copied().sum()).collect();
            let dx = want_dx.then(|| {
                let mut dcols = vec![T::zero(); ck * hw];
                gemm_tn(ck, f, hw, weights, g_n, &mut dcols);
                col2im(&dcols, c, h, w)
            });
            (dw, db, dx)
        });

        let mut dx_all = if want_dx {
            Vec::with_capacity(b * c * hw)
        } else {
            Vec::new()
        };
        for (dw, db, dx) in partials {
            for (acc, v) in self.params.grad_weights.data_mut().iter_mut().zip(dw) {
                *acc += v;
            }
            if self.use_bias {
                for (acc, v) in self.params.grad_bias.data_mut().iter_mut().zip(db) {
                    *acc += v;
                }
            }
            if let Some(dx) = dx {
                dx_all.extend(dx);
            }
        }
        if !want_dx {
            dx_all = vec![T::zero(); b * c * hw];
        }
        Ok(Tensor::from_parts(vec![b, c, h, w], dx_all))
    }
}

/// Unfolds one `C x H x W` image into a `(C*9) x (H*W)` column matrix.
fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * TAPS) + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    // dst[x] = src[x + kx - 1] where in range
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut img = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * TAPS) + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    img
}
