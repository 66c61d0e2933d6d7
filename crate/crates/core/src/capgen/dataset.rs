use std::collections::HashSet;

use super::render::{check_renderable, render_captcha, sample_text, CaptchaSample, DistortionSpec};
use super::{Charset, LABEL_LEN};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream, Rng};

pub const MAX_LABEL_RETRIES: u64 = 1000;

/// Child index of a sample's rendering stream; label attempts use 0, 1, ...
const RENDER_STREAM: u64 = u64::MAX;

pub fn label_capacity(charset: &Charset) -> u128 {
    (charset.len() as u128).saturating_pow(LABEL_LEN as u32)
}

/// `n` samples with pairwise-distinct labels. Sample `i` draws only from
/// streams keyed by `(seed, i)`, so output is independent of thread count.
pub fn generate_dataset(
    n: usize,
    charset: &Charset,
    spec: &DistortionSpec,
    seed: u64,
) -> Result<Vec<CaptchaSample>> {
    spec.validate()?;
    check_renderable(charset.symbols().iter().copied())?;
    let capacity = label_capacity(charset);
    if n as u128 > capacity {
        return Err(Error::Capacity {
            requested: n as u128,
            available: capacity,
        });
    }
    let root = Rng::new(seed).child(stream::DATASET);
    let symbols = charset.symbols();
    let draw = |i: usize, attempt: u64| {
        sample_text(symbols, LABEL_LEN, &mut root.child(i as u64).child(attempt))
    };

    let mut labels = par::map_indexed(n, |i| draw(i, 0));
    let mut seen = HashSet::with_capacity(n);
    for (i, label) in labels.iter_mut().enumerate() {
        let mut attempt = 0;
        while seen.contains(label) {
            attempt += 1;
            if attempt > MAX_LABEL_RETRIES {
                return Err(Error::Validation(format!(
                    "sample {i}: no unused label after {MAX_LABEL_RETRIES} retries"
                )));
            }
            *label = draw(i, attempt);
        }
        seen.insert(label.clone());
    }

    par::map_indexed(n, |i| {
        let mut rng = root.child(i as u64).child(RENDER_STREAM);
        render_captcha(&labels[i], spec, &mut rng).map(|mut s| {
            s.id = i;
            s
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request() {
        let v = generate_dataset(0, &Charset::default(), &DistortionSpec::default(), 1).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn thousand_unique_and_repeatable() {
        let cs = Charset::digits();
        let spec = DistortionSpec::default();
        let a = generate_dataset(1000, &cs, &spec, 21).unwrap();
        let labels: HashSet<_> = a.iter().map(|s| s.label.clone()).collect();
        assert_eq!(labels.len(), 1000);
        let b = generate_dataset(1000, &cs, &spec, 21).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, s)| s.id == i));
    }

    #[test]
    fn seeds_give_different_label_sets() {
        let cs = Charset::default();
        let spec = DistortionSpec::zero();
        let mut a: Vec<_> = generate_dataset(20, &cs, &spec, 1).unwrap().into_iter().map(|s| s.label).collect();
        let mut b: Vec<_> = generate_dataset(20, &cs, &spec, 2).unwrap().into_iter().map(|s| s.label).collect();
        a.sort();
        b.sort();
        assert_ne!(a, b);
    }

    #[test]
    fn capacity_limit() {
        let cs = Charset::new("01").unwrap();
        let full = generate_dataset(32, &cs, &DistortionSpec::zero(), 3).unwrap();
        assert_eq!(full.iter().map(|s| &s.label).collect::<HashSet<_>>().len(), 32);
        let err = generate_dataset(33, &cs, &DistortionSpec::zero(), 3).unwrap_err();
        assert!(matches!(err, Error::Capacity { requested: 33, available: 32 }));
    }

    #[test]
    fn prefix_stability() {
        let cs = Charset::default();
        let spec = DistortionSpec::default();
        let small = generate_dataset(5, &cs, &spec, 9).unwrap();
        let large = generate_dataset(12, &cs, &spec, 9).unwrap();
        assert_eq!(small[..], large[..5]);
    }

    #[test]
    fn identical_across_thread_counts() {
        let cs = Charset::digits();
        let spec = DistortionSpec::default();
        let one = par::with_threads(1, || generate_dataset(40, &cs, &spec, 5).unwrap());
        let four = par::with_threads(4, || generate_dataset(40, &cs, &spec, 5).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn unrenderable_charset() {
        let cs = Charset::new("0A").unwrap();
        assert!(matches!(
            generate_dataset(1, &cs, &DistortionSpec::zero(), 0),
            Err(Error::Rendering(_))
        ));
    }
}
