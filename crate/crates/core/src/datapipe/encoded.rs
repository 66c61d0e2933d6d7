use super::preprocess::{normalize, Preprocess};
use super::store::Dataset;
use super::labels::encode_label;
use crate::capgen::LABEL_LEN;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Network-ready view of a dataset: normalized pixels plus class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet<T: Real> {
    height: usize,
    width: usize,
    classes: usize,
    inputs: Vec<T>,
    labels: Vec<[usize; LABEL_LEN]>,
}

impl<T: Real> EncodedSet<T> {
    pub fn from_dataset(dataset: &Dataset, preprocess: &Preprocess) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::with_capacity(dataset.len());
        let mut dims = None;
        for s in &dataset.samples {
            let img = preprocess.apply(&s.image)?;
            let d = (img.height(), img.width());
            if *dims.get_or_insert(d) != d {
                return Err(Error::Dimension(format!(
                    "sample {} preprocesses to {}x{}, others to {}x{}",
                    s.id, d.1, d.0, dims.unwrap().1, dims.unwrap().0
                )));
            }
            inputs.extend_from_slice(normalize::<T>(&img).data());
            labels.push(encode_label(&s.label, &dataset.charset)?.indices());
        }
        let (height, width) = dims.expect("non-empty");
        Ok(Self { height, width, classes: dataset.charset.len(), inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[[usize; LABEL_LEN]] {
        &self.labels
    }

    /// `B x 1 x H x W` input batch for the given sample indices.
    pub fn batch_inputs(&self, indices: &[usize]) -> Tensor<T> {
        let px = self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * px..(i + 1) * px]);
        }
        Tensor::from_parts(vec![indices.len(), 1, self.height, self.width], data)
    }

    /// One `B x K` one-hot target matrix per character position.
    pub fn batch_targets(&self, indices: &[usize]) -> Vec<Tensor<T>> {
        (0..LABEL_LEN)
            .map(|p| {
                let mut data = vec![T::zero(); indices.len() * self.classes];
                for (row, &i) in indices.iter().enumerate() {
                    data[row * self.classes + self.labels[i][p]] = T::one();
                }
                Tensor::from_parts(vec![indices.len(), self.classes], data)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::{generate_dataset, Charset, DistortionSpec};

    #[test]
    fn batches_match_samples() {
        let cs = Charset::digits();
        let ds = Dataset::new(cs.clone(), generate_dataset(4, &cs, &DistortionSpec::default(), 1).unwrap());
        let enc = EncodedSet::<f64>::from_dataset(&ds, &Preprocess::default()).unwrap();
        assert_eq!((enc.len(), enc.height(), enc.width(), enc.classes()), (4, 50, 200, 10));
        let x = enc.batch_inputs(&[2, 0]);
        assert_eq!(x.shape(), &[2, 1, 50, 200]);
        assert_eq!(x.data()[0], ds.samples[2].image.pixels()[0] as f64 / 255.0);
        let t = enc.batch_targets(&[2, 0]);
        assert_eq!(t.len(), 5);
        let first = ds.samples[0].label.chars().next().unwrap();
        assert_eq!(t[0].data()[10 + cs.index_of(first).unwrap()], 1.0);
        assert_eq!(t[0].sum(), 2.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset::new(Charset::digits(), vec![]);
        assert!(EncodedSet::<f32>::from_dataset(&ds, &Preprocess::default()).is_err());
    }
}
