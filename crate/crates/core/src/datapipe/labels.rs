//! One-hot label encoding and argmax decoding.

use crate::capgen::{Charset, LABEL_LEN};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `LABEL_LEN x K` binary matrix; row = character position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEncoding {
    classes: usize,
    cells: Vec<u8>,
}

impl LabelEncoding {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, position: usize) -> &[u8] {
        &self.cells[position * self.classes..(position + 1) * self.classes]
    }

    /// Class index of the hot cell at each position.
    pub fn indices(&self) -> [usize; LABEL_LEN] {
        std::array::from_fn(|p| {
            self.row(p)
                .iter()
                .position(|&v| v == 1)
                .expect("each row has one hot cell")
        })
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![LABEL_LEN, self.classes],
            self.cells.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }
}

pub fn encode_label(text: &str, charset: &Charset) -> Result<LabelEncoding> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != LABEL_LEN {
        return Err(Error::Validation(format!(
            "label {text:?} has {} characters, expected {LABEL_LEN}",
            chars.len()
        )));
    }
    let k = charset.len();
    let mut cells = vec![0u8; LABEL_LEN * k];
    for (position, &symbol) in chars.iter().enumerate() {
        let idx = charset
            .index_of(symbol)
            .ok_or(Error::Encoding { symbol, position })?;
        cells[position * k + idx] = 1;
    }
    Ok(LabelEncoding { classes: k, cells })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-head argmax, mapped back to charset symbols.
pub fn decode_prediction<V: AsRef<[f64]>>(heads: &[V], charset: &Charset) -> Result<String> {
    heads
        .iter()
        .enumerate()
        .map(|(h, probs)| {
            let probs = probs.as_ref();
            if probs.len() != charset.len() {
                return Err(Error::Dimension(format!(
                    "head {h} has {} scores for a {}-symbol charset",
                    probs.len(),
                    charset.len()
                )));
            }
            Ok(charset.symbol(argmax(probs)).expect("index within charset"))
        })
        .collect()
}
