use super::{expect_rank4, expect_shape, no_cache};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// 2x2 max pooling, stride 2. A trailing odd row or column is dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    input_shape: Vec<usize>,
    /// Flat input offset of each output's winner.
    argmax: Vec<usize>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_dims(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = expect_rank4(x, "maxpool2")?;
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "maxpool2: spatial dims {h}x{w} are smaller than the 2x2 window"
            )));
        }
        let (oh, ow) = Self::output_dims(h, w);
        let data = x.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    // row-major window order; strict > keeps the first of ties
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some(PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        });
        Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
    }

    pub fn backward<T: Real>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| no_cache("maxpool2"))?;
        let s = &cache.input_shape;
        let (oh, ow) = Self::output_dims(s[2], s[3]);
        expect_shape(g, &[s[0], s[1], oh, ow], "maxpool2")?;
        let mut dx = vec![T::zero(); s.iter().product()];
        for (&idx, &gv) in cache.argmax.iter().zip(g.data()) {
            dx[idx] += gv;
        }
        Ok(Tensor::from_parts(s.clone(), dx))
    }
}
