use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::uncertainty::uncertainty;
use crate::capgen::LABEL_LEN;
use crate::capnet::Predictor;
use crate::datapipe::{Dataset, EncodedSet, Preprocess};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Real;

pub const ROTATION_BUCKET_DEG: f64 = 5.0;
pub const GRAY_BUCKET_LEVELS: u32 = 16;
pub const PEPPER_BUCKET_WIDTH: f64 = 0.02;
pub const TOP_PAIRS: usize = 20;

pub const REPORT_JSON: &str = "vuln_report.json";
pub const ROTATION_CSV: &str = "accuracy_by_rotation.csv";
pub const GRAY_CSV: &str = "accuracy_by_gray_level.csv";
pub const PEPPER_CSV: &str = "accuracy_by_pepper_density.csv";

/// Per-character accuracy within `[lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharBucket {
    pub lower: f64,
    pub upper: f64,
    pub characters: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-sample accuracies within `[lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBucket {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub char_accuracy: f64,
    pub full_correct: usize,
    pub full_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub truth: char,
    pub predicted: char,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: usize,
    pub label: String,
    pub predicted: String,
    pub correct_chars: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnReport {
    pub charset: String,
    pub samples: usize,
    pub char_accuracy: f64,
    pub full_accuracy: f64,
    pub mean_eta: f64,
    pub mean_eta_correct: Option<f64>,
    pub mean_eta_incorrect: Option<f64>,
    /// True symbol -> predicted symbol -> count, pooled over positions.
    pub confusion: BTreeMap<char, BTreeMap<char, usize>>,
    pub top_confusable_pairs: Vec<ConfusablePair>,
    pub accuracy_by_rotation: Vec<CharBucket>,
    pub accuracy_by_gray_level: Vec<SampleBucket>,
    pub accuracy_by_pepper_density: Vec<SampleBucket>,
    pub per_sample: Vec<SampleOutcome>,
}

fn check_meta(dataset: &Dataset) -> Result<()> {
    let mut missing = Vec::new();
    let count = |f: &dyn Fn(&crate::capgen::SampleMeta) -> bool| {
        dataset.samples.iter().filter(|s| f(&s.meta)).count()
    };
    for (field, n) in [
        ("rotations", count(&|m| m.rotations.is_none())),
        ("pepper_density", count(&|m| m.pepper_density.is_none())),
        ("gray_level", count(&|m| m.gray_level.is_none())),
    ] {
        if n > 0 {
            missing.push(format!("{field} ({n} of {} samples)", dataset.len()));
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "dataset lacks generation meta: {}",
            missing.join(", ")
        )))
    }
}

#[derive(Default)]
struct Tally {
    items: usize,
    correct: usize,
    full: usize,
}

fn bucket_index(value: f64, width: f64) -> usize {
    // Nudge so values sitting exactly on an edge land in the upper bucket.
    ((value / width) + 1e-9).floor().max(0.0) as usize
}

fn sample_buckets(tallies: BTreeMap<usize, Tally>, width: f64) -> Vec<SampleBucket> {
    tallies
        .into_iter()
        .map(|(i, t)| SampleBucket {
            lower: i as f64 * width,
            upper: (i + 1) as f64 * width,
            samples: t.items,
            char_accuracy: t.correct as f64 / (LABEL_LEN * t.items) as f64,
            full_correct: t.full,
            full_accuracy: t.full as f64 / t.items as f64,
        })
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs inference over `dataset` and tabulates where the model fails.
pub fn analyze<T: Real, P: Predictor<T> + ?Sized>(
    predictor: &mut P,
    dataset: &Dataset,
    preprocess: &Preprocess,
) -> Result<VulnReport> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot analyze an empty dataset".into()));
    }
    check_meta(dataset)?;
    if predictor.charset() != &dataset.charset {
        return Err(Error::Validation(format!(
            "model charset {:?} differs from dataset charset {:?}",
            predictor.charset(),
            dataset.charset
        )));
    }
    let encoded = EncodedSet::<T>::from_dataset(dataset, preprocess)?;
    let preds = predictor.predict(&encoded)?;
    let cs = &dataset.charset;

    let outcomes = par::map_indexed(dataset.len(), |i| {
        let decoded = preds.decoded(i);
        let eta = uncertainty(&preds.heads(i)).map(|u| u.eta);
        (decoded, eta)
    });

    let mut confusion: BTreeMap<char, BTreeMap<char, usize>> = BTreeMap::new();
    let mut rotation: BTreeMap<usize, Tally> = BTreeMap::new();
    let mut gray: BTreeMap<usize, Tally> = BTreeMap::new();
    let mut pepper: BTreeMap<usize, Tally> = BTreeMap::new();
    let (mut eta_correct, mut eta_incorrect) = (Vec::new(), Vec::new());
    let mut per_sample = Vec::with_capacity(dataset.len());
    let (mut chars_ok, mut full_ok) = (0, 0);

    for ((sample, truth), (decoded, eta)) in dataset.samples.iter().zip(encoded.labels()).zip(outcomes) {
        let eta = eta?;
        let meta = &sample.meta;
        let rotations = meta.rotations.expect("checked");
        let mut correct = 0;
        for h in 0..LABEL_LEN {
            let t = cs.symbol(truth[h]).expect("in charset");
            let p = cs.symbol(decoded[h]).expect("in charset");
            *confusion.entry(t).or_default().entry(p).or_default() += 1;
            let ok = truth[h] == decoded[h];
            correct += ok as usize;
            let b = rotation.entry(bucket_index(rotations[h].abs(), ROTATION_BUCKET_DEG)).or_default();
            b.items += 1;
            b.correct += ok as usize;
        }
        let full = correct == LABEL_LEN;
        let gray_idx = (meta.gray_level.expect("checked") as u32 / GRAY_BUCKET_LEVELS) as usize;
        let pepper_idx = bucket_index(meta.pepper_density.expect("checked"), PEPPER_BUCKET_WIDTH);
        for b in [gray.entry(gray_idx).or_default(), pepper.entry(pepper_idx).or_default()] {
            b.items += 1;
            b.correct += correct;
            b.full += full as usize;
        }
        chars_ok += correct;
        full_ok += full as usize;
        if full {
            eta_correct.push(eta);
        } else {
            eta_incorrect.push(eta);
        }
        per_sample.push(SampleOutcome {
            id: sample.id,
            label: sample.label.clone(),
            predicted: decoded.iter().map(|&c| cs.symbol(c).expect("in charset")).collect(),
            correct_chars: correct,
            eta,
        });
    }

    let mut pairs: Vec<ConfusablePair> = confusion
        .iter()
        .flat_map(|(&t, row)| {
            row.iter()
                .filter(move |(&p, _)| p != t)
                .map(move |(&p, &count)| ConfusablePair { truth: t, predicted: p, count })
        })
        .collect();
    // Stable sort keeps the (truth, predicted) order among equal counts.
    pairs.sort_by_key(|p| std::cmp::Reverse(p.count));
    pairs.truncate(TOP_PAIRS);

    let n = dataset.len();
    let all_eta: Vec<f64> = per_sample.iter().map(|s| s.eta).collect();
    Ok(VulnReport {
        charset: cs.as_string(),
        samples: n,
        char_accuracy: chars_ok as f64 / (LABEL_LEN * n) as f64,
        full_accuracy: full_ok as f64 / n as f64,
        mean_eta: mean(&all_eta).expect("non-empty"),
        mean_eta_correct: mean(&eta_correct),
        mean_eta_incorrect: mean(&eta_incorrect),
        confusion,
        top_confusable_pairs: pairs,
        accuracy_by_rotation: rotation
            .into_iter()
            .map(|(i, t)| CharBucket {
                lower: i as f64 * ROTATION_BUCKET_DEG,
                upper: (i + 1) as f64 * ROTATION_BUCKET_DEG,
                characters: t.items,
                correct: t.correct,
                accuracy: t.correct as f64 / t.items as f64,
            })
            .collect(),
        accuracy_by_gray_level: sample_buckets(gray, GRAY_BUCKET_LEVELS as f64),
        accuracy_by_pepper_density: sample_buckets(pepper, PEPPER_BUCKET_WIDTH),
        per_sample,
    })
}

pub fn report_json(report: &VulnReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn csv_text<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Writes the JSON report and one CSV per bucket dimension into `dir`.
pub fn emit_report(report: &VulnReport, dir: impl AsRef<Path>) -> Result<()> {
    if report.samples == 0 {
        return Err(Error::Validation("report covers no samples".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        (REPORT_JSON, report_json(report)),
        (ROTATION_CSV, csv_text(&report.accuracy_by_rotation)?),
        (GRAY_CSV, csv_text(&report.accuracy_by_gray_level)?),
        (PEPPER_CSV, csv_text(&report.accuracy_by_pepper_density)?),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::{generate_dataset, Charset, DistortionSpec, SampleMeta};
    use crate::capnet::{OracleModel, Predictions};
    use crate::optim::PROB_CLIP;

    /// Always predicts class 0 with near certainty.
    struct Constant(Charset);

    impl Predictor<f32> for Constant {
        fn charset(&self) -> &Charset {
            &self.0
        }

        fn predict(&mut self, data: &EncodedSet<f32>) -> Result<Predictions> {
            let k = self.0.len();
            let mut probs = vec![PROB_CLIP; data.len() * LABEL_LEN * k];
            for cell in probs.chunks_mut(k) {
                cell[0] = 1.0 - (k - 1) as f64 * PROB_CLIP;
            }
            Predictions::new(data.len(), k, probs)
        }
    }

    fn dataset(n: usize) -> Dataset {
        let cs = Charset::digits();
        let spec = DistortionSpec { rotation_max_deg: 25.0, ..DistortionSpec::default() };
        Dataset::new(cs.clone(), generate_dataset(n, &cs, &spec, 12).unwrap())
    }

    fn oracle_report(ds: &Dataset) -> VulnReport {
        analyze::<f32, _>(&mut OracleModel::new(ds.charset.clone()), ds, &Preprocess::default()).unwrap()
    }

    #[test]
    fn oracle_gives_diagonal_and_perfect_buckets() {
        let ds = dataset(60);
        let r = oracle_report(&ds);
        for (t, row) in &r.confusion {
            assert_eq!(row.keys().collect::<Vec<_>>(), vec![t]);
        }
        assert!(r.top_confusable_pairs.is_empty());
        assert!(r.accuracy_by_rotation.iter().all(|b| b.accuracy == 1.0));
        assert!(r.accuracy_by_gray_level.iter().all(|b| b.full_accuracy == 1.0));
        assert!(r.accuracy_by_pepper_density.iter().all(|b| b.char_accuracy == 1.0));
        let floor = PROB_CLIP / (1.0 - 9.0 * PROB_CLIP);
        assert!((r.mean_eta - floor).abs() < 1e-15);
        assert_eq!(r.mean_eta_incorrect, None);
    }

    #[test]
    fn constant_model_fills_column_zero() {
        let ds = dataset(80);
        let r = analyze(&mut Constant(ds.charset.clone()), &ds, &Preprocess::default()).unwrap();
        for row in r.confusion.values() {
            assert_eq!(row.keys().collect::<Vec<_>>(), vec![&'0']);
        }
        for b in &r.accuracy_by_rotation {
            let zeros = ds
                .samples
                .iter()
                .flat_map(|s| s.label.chars().zip(s.meta.rotations.unwrap()))
                .filter(|(_, rot)| bucket_index(rot.abs(), ROTATION_BUCKET_DEG) as f64 * ROTATION_BUCKET_DEG == b.lower)
                .filter(|(c, _)| *c == '0')
                .count();
            assert_eq!(b.correct, zeros);
        }
        assert_eq!(r.top_confusable_pairs[0].predicted, '0');
    }

    #[test]
    fn tables_cover_every_sample_once() {
        let ds = dataset(50);
        let r = analyze(&mut Constant(ds.charset.clone()), &ds, &Preprocess::default()).unwrap();
        let total: usize = r.confusion.values().flat_map(|row| row.values()).sum();
        assert_eq!(total, 5 * 50);
        let mut occurrences: BTreeMap<char, usize> = BTreeMap::new();
        for s in &ds.samples {
            for c in s.label.chars() {
                *occurrences.entry(c).or_default() += 1;
            }
        }
        for (t, row) in &r.confusion {
            assert_eq!(row.values().sum::<usize>(), occurrences[t]);
        }
        assert_eq!(r.accuracy_by_rotation.iter().map(|b| b.characters).sum::<usize>(), 250);
        assert_eq!(r.accuracy_by_gray_level.iter().map(|b| b.samples).sum::<usize>(), 50);
        assert_eq!(r.accuracy_by_pepper_density.iter().map(|b| b.samples).sum::<usize>(), 50);
        assert!(r.accuracy_by_rotation.len() >= 5);
    }

    #[test]
    fn missing_meta_is_listed() {
        let mut ds = dataset(4);
        ds.samples[1].meta = SampleMeta { gray_level: Some(60), ..SampleMeta::default() };
        let err = analyze::<f32, _>(&mut OracleModel::new(ds.charset.clone()), &ds, &Preprocess::default()).unwrap_err();
        let Error::Validation(msg) = err else { panic!("{err:?}") };
        assert!(msg.contains("rotations") && msg.contains("pepper_density") && !msg.contains("gray_level"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset::new(Charset::digits(), vec![]);
        assert!(analyze::<f32, _>(&mut OracleModel::new(Charset::digits()), &ds, &Preprocess::default()).is_err());
    }

    #[test]
    fn charset_mismatch_rejected() {
        let ds = dataset(3);
        let err = analyze::<f32, _>(&mut OracleModel::new(Charset::default()), &ds, &Preprocess::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn json_is_canonical() {
        let r = oracle_report(&dataset(20));
        let text = report_json(&r);
        let back: VulnReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report_json(&back), text);
    }

    #[test]
    fn emitted_csv_rows_match_buckets() {
        let dir = tempfile::tempdir().unwrap();
        let r = oracle_report(&dataset(30));
        emit_report(&r, dir.path()).unwrap();
        let rows = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap().lines().count() - 1;
        assert_eq!(rows(ROTATION_CSV), r.accuracy_by_rotation.len());
        assert_eq!(rows(GRAY_CSV), r.accuracy_by_gray_level.len());
        assert_eq!(rows(PEPPER_CSV), r.accuracy_by_pepper_density.len());
        assert!(dir.path().join(REPORT_JSON).is_file());
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_index(0.0, 5.0), 0);
        assert_eq!(bucket_index(4.999, 5.0), 0);
        assert_eq!(bucket_index(5.0, 5.0), 1);
        assert_eq!(bucket_index(0.06, 0.02), 3);
        assert_eq!(bucket_index(0.05, 0.02), 2);
    }
}
