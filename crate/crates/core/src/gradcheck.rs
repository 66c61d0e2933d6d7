//! Finite-difference verification of every backward pass.
//!
//! Each layer is probed with the scalar objective `sum(out * R)` for a fixed
//! random `R`, so the upstream gradient is `R` itself. The end-to-end check
//! differentiates the joint BCE of a tiny model with respect to every
//! parameter.

use std::fmt;

use crate::capgen::Charset;
use crate::capnet::{build_model, joint_loss, ModelConfig};
use crate::error::Result;
use crate::layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, LayerParams, MaxPool2, Mode, Relu, Softmax,
};
use crate::optim::bce_loss;
use crate::rng::Rng;
use crate::tensor::{Precision, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

const DROPOUT_PROBE_SEED: u64 = 0x0d0d;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A differentiable unit under test.
pub trait Probe {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn params_mut(&mut self) -> Option<&mut LayerParams<f64>>;
}

/// A layer run in a fixed mode. Dropout is reseeded before every forward so
/// all perturbed evaluations share one mask.
pub struct LayerProbe {
    pub layer: Layer<f64>,
    pub mode: Mode,
}

impl Probe for LayerProbe {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        if let Layer::Dropout(d) = &mut self.layer {
            d.reseed(Rng::new(DROPOUT_PROBE_SEED));
        }
        self.layer.forward(x, self.mode)
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.layer.backward(g)
    }

    fn params_mut(&mut self) -> Option<&mut LayerParams<f64>> {
        self.layer.params_mut()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.passed())
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<28} {:>6} entries  max rel err {:.3e}  {}",
                r.name,
                r.entries,
                r.max_rel_err,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn random(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi)).expect("valid shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between analytic and central-difference gradients
/// of `sum(probe(x) * R)` over every input and parameter entry.
pub fn check_probe(name: &str, probe: &mut dyn Probe, x: &Tensor<f64>, seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let out = probe.forward(x)?;
    let r = random(out.shape(), &mut rng, -1.0, 1.0);
    if let Some(p) = probe.params_mut() {
        p.zero_grad();
    }
    let dx = probe.backward(&r)?;
    let analytic_params = probe
        .params_mut()
        .map(|p| (p.grad_weights.clone(), p.grad_bias.clone()));

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let objective = |probe: &mut dyn Probe, x: &Tensor<f64>| -> Result<f64> {
        Ok(dot(&probe.forward(x)?, &r))
    };

    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = objective(probe, &xp)?;
        xp.data_mut()[i] = orig - STEP;
        let down = objective(probe, &xp)?;
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * STEP)));
        entries += 1;
    }

    if let Some((gw, gb)) = analytic_params {
        for (which, analytic) in [(0, gw), (1, gb)] {
            for i in 0..analytic.len() {
                let eval = |delta: f64, probe: &mut dyn Probe| -> Result<f64> {
                    let p = probe.params_mut().expect("has params");
                    let t = if which == 0 { &mut p.weights } else { &mut p.bias };
                    t.data_mut()[i] += delta;
                    let v = objective(probe, x);
                    let p = probe.params_mut().expect("has params");
                    let t = if which == 0 { &mut p.weights } else { &mut p.bias };
                    t.data_mut()[i] -= delta;
                    v
                };
                let up = eval(STEP, probe)?;
                let down = eval(-STEP, probe)?;
                worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * STEP)));
                entries += 1;
            }
        }
    }
    Ok(CheckResult { name: name.to_string(), entries, max_rel_err: worst })
}

/// Inputs bounded away from zero so no finite-difference step crosses the kink.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(0.1, 1.0);
        if rng.chance(0.5) { m } else { -m }
    })
    .expect("valid shape")
}

/// Distinct values 0.05 apart so no step changes a pooling argmax.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    rng.shuffle(&mut v);
    Tensor::new(shape, v).expect("valid shape")
}

/// `(name, probe, input)` for one layer check.
pub type ProbeCase = (String, Box<dyn Probe>, Tensor<f64>);

/// The standard per-layer suite.
pub fn layer_probes() -> Result<Vec<ProbeCase>> {
    let mut rng = Rng::new(2024);
    let mut probes: Vec<ProbeCase> = Vec::new();
    let mut push = |name: &str, layer: Layer<f64>, mode: Mode, x: Tensor<f64>| {
        probes.push((name.to_string(), Box::new(LayerProbe { layer, mode }), x));
    };

    let mut conv = Conv2d::new("conv", 3, 4, &mut rng)?;
    conv.params.bias = random(&[4], &mut rng, -0.5, 0.5);
    let x = random(&[2, 3, 5, 6], &mut rng, -1.0, 1.0);
    push("conv2d", Layer::Conv(conv), Mode::Train, x);

    let x = away_from_zero(&[3, 2, 4, 4], &mut rng);
    push("relu", Layer::Relu(Relu::new()), Mode::Train, x);

    let x = distinct(&[2, 2, 6, 5], &mut rng);
    push("maxpool2", Layer::MaxPool(MaxPool2::new()), Mode::Train, x);

    for (name, mode) in [("batchnorm/train", Mode::Train), ("batchnorm/infer", Mode::Infer)] {
        let mut bn = BatchNorm::new("bn", 2)?;
        bn.params.weights = random(&[2], &mut rng, 0.5, 1.5);
        bn.params.bias = random(&[2], &mut rng, -0.5, 0.5);
        bn.running_mean = random(&[2], &mut rng, -0.2, 0.2);
        bn.running_var = random(&[2], &mut rng, 0.5, 1.5);
        bn.track_running_stats = false;
        let x = random(&[4, 2, 3, 3], &mut rng, -1.0, 1.0);
        push(name, Layer::BatchNorm(bn), mode, x);
    }

    let mut dense = Dense::new("dense", 5, 4, &mut rng)?;
    dense.params.bias = random(&[4], &mut rng, -0.5, 0.5);
    let x = random(&[3, 5], &mut rng, -1.0, 1.0);
    push("dense", Layer::Dense(dense), Mode::Train, x);

    let x = random(&[3, 6], &mut rng, -1.0, 1.0);
    push("dropout", Layer::Dropout(Dropout::new(0.5, Rng::new(0))?), Mode::Train, x);

    let x = random(&[2, 2, 3, 3], &mut rng, -1.0, 1.0);
    push("flatten", Layer::Flatten(Flatten::new()), Mode::Train, x);

    let x = random(&[3, 4], &mut rng, -2.0, 2.0);
    push("softmax", Layer::Softmax(Softmax::new()), Mode::Train, x);

    Ok(probes)
}

/// BCE gradient with respect to the predictions.
pub fn check_bce() -> Result<CheckResult> {
    let mut rng = Rng::new(77);
    let p = random(&[4, 6], &mut rng, 0.05, 0.95);
    let y = Tensor::from_fn(&[4, 6], |_| if rng.chance(0.3) { 1.0 } else { 0.0 })?;
    let analytic = bce_loss(&p, &y)?.gradient;
    let mut worst: f64 = 0.0;
    let mut probe = p.clone();
    for i in 0..p.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = bce_loss(&probe, &y)?.loss;
        probe.data_mut()[i] = orig - STEP;
        let down = bce_loss(&probe, &y)?.loss;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * STEP)));
    }
    Ok(CheckResult { name: "bce_loss".into(), entries: p.len(), max_rel_err: worst })
}

/// Smallest model whose input survives four pooling stages.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        image_width: 16,
        image_height: 16,
        filters: [2, 2, 2, 2],
        dense_width: 8,
        dropout: 0.0,
        precision: Precision::F64,
    }
}

/// Joint-BCE gradient of the tiny model, one result per parameter set.
pub fn check_end_to_end() -> Result<Vec<CheckResult>> {
    let cfg = tiny_model_config();
    let charset = Charset::new("abc")?;
    let mut model = build_model::<f64>(&cfg, &charset, &Rng::new(31))?;
    let mut rng = Rng::new(32);
    for p in model.params_mut() {
        let shape = p.bias.shape().to_vec();
        p.bias = random(&shape, &mut rng, -0.1, 0.1);
    }
    let x = random(&[2, 1, cfg.image_height, cfg.image_width], &mut rng, 0.0, 1.0);
    let targets: Vec<Tensor<f64>> = (0..5)
        .map(|_| {
            let hot = [rng.below(3), rng.below(3)];
            Tensor::from_fn(&[2, 3], |i| if i % 3 == hot[i / 3] { 1.0 } else { 0.0 }).expect("shape")
        })
        .collect();

    model.zero_grad();
    let heads = model.forward(&x, Mode::Train)?;
    let (_, grads) = joint_loss(&heads, &targets)?;
    model.backward(&grads)?;
    // Held-at-zero biases are not parameters of the function being checked.
    let analytic: Vec<(String, Tensor<f64>, Option<Tensor<f64>>)> = model
        .layers()
        .filter_map(|l| {
            let live_bias = !matches!(l, Layer::Conv(c) if !c.use_bias);
            l.params().map(|p| (p.name.clone(), p.grad_weights.clone(), live_bias.then(|| p.grad_bias.clone())))
        })
        .collect();

    let loss_at = |model: &mut crate::capnet::CapNet<f64>| -> Result<f64> {
        let heads = model.forward(&x, Mode::Train)?;
        Ok(joint_loss(&heads, &targets)?.0)
    };
    let mut results = Vec::new();
    for (pi, (name, gw, gb)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (which, g) in [(0, Some(gw)), (1, gb.as_ref())] {
            let Some(g) = g else { continue };
            for i in 0..g.len() {
                let mut central = [0.0; 2];
                for (slot, delta) in [STEP, -STEP].into_iter().enumerate() {
                    let bump = |model: &mut crate::capnet::CapNet<f64>, d: f64| {
                        let p = model.params_mut().nth(pi).expect("param index");
                        let t = if which == 0 { &mut p.weights } else { &mut p.bias };
                        t.data_mut()[i] += d;
                    };
                    bump(&mut model, delta);
                    central[slot] = loss_at(&mut model)?;
                    bump(&mut model, -delta);
                }
                worst = worst.max(rel_err(g.data()[i], (central[0] - central[1]) / (2.0 * STEP)));
            }
        }
        results.push(CheckResult {
            name: format!("model/{name}"),
            entries: gw.len() + gb.as_ref().map_or(0, Tensor::len),
            max_rel_err: worst,
        });
    }
    Ok(results)
}

/// Runs the given layer probes, the loss check, and the end-to-end check.
pub fn run_with(probes: Vec<ProbeCase>) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for (i, (name, mut probe, x)) in probes.into_iter().enumerate() {
        report.results.push(check_probe(&name, probe.as_mut(), &x, 100 + i as u64)?);
    }
    report.results.push(check_bce()?);
    report.results.extend(check_end_to_end()?);
    Ok(report)
}

pub fn run_gradcheck() -> Result<GradcheckReport> {
    run_with(layer_probes()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run_gradcheck().unwrap();
        assert!(report.all_passed(), "\n{report}");
        assert!(report.results.iter().any(|r| r.name == "model/conv1"));
        assert!(report.results.iter().any(|r| r.name == "model/head4.dense2"));
    }

    struct Skewed(LayerProbe);

    impl Probe for Skewed {
        fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
            self.0.forward(x)
        }
        fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
            self.0.backward(g)?.scale(1.01)
        }
        fn params_mut(&mut self) -> Option<&mut LayerParams<f64>> {
            self.0.params_mut()
        }
    }

    #[test]
    fn corrupted_conv_backward_is_caught() {
        let probes = layer_probes()
            .unwrap()
            .into_iter()
            .map(|(name, probe, x)| {
                if name == "conv2d" {
                    let mut rng = Rng::new(1);
                    let conv = Conv2d::new("conv", 3, 4, &mut rng).unwrap();
                    let skewed: Box<dyn Probe> =
                        Box::new(Skewed(LayerProbe { layer: Layer::Conv(conv), mode: Mode::Train }));
                    (name, skewed, x)
                } else {
                    (name, probe, x)
                }
            })
            .collect();
        let report = run_with(probes).unwrap();
        assert_eq!(report.failing(), vec!["conv2d"]);
    }
}
