use std::time::Instant;

use anyhow::Result;
use bcdnet_core::autograd::{grad_check, GradCheckReport, Parameter, Tape, Var};
use bcdnet_core::nn::{BatchNorm2d, Conv2d, Dropout, Layer, Linear, MaxPool2d, Mode, Relu};
use bcdnet_core::optim::CrossEntropyLoss;
use bcdnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 10;

/// Entries in report order.
pub const SUITE: [&str; 7] = [
    "conv2d",
    "maxpool2d",
    "relu",
    "linear",
    "batchnorm2d",
    "dropout",
    "softmax_cross_entropy",
];

/// Test fixture: passes the wrapped layer's forward through unchanged but
/// scales every gradient flowing back into it by 1.5.
#[derive(Clone)]
struct Faulty<L>(L);

impl<L: Layer<f64>> Layer<f64> for Faulty<L> {
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    fn forward(&mut self, tape: &mut Tape<f64>, x: Var) -> bcdnet_core::Result<Var> {
        let y = self.0.forward(tape, x)?;
        let out = tape.value(y).clone();
        tape.record("fault", &[y], out, Box::new(|g, _| vec![Some(g.map(|v| 1.5 * v))]))
    }

    fn parameters(&self) -> Vec<&Parameter<f64>> {
        self.0.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.0.parameters_mut()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub layer: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub worst: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.entries.iter().filter(|e| !e.pass).map(|e| e.layer).collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>13} {:>8} {:>9}  {}\n",
            "layer", "max_rel_error", "checked", "excluded", "status"
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{:<22} {:>13.3e} {:>8} {:>9}  {}\n",
                e.layer,
                e.max_rel_error,
                e.checked,
                e.excluded,
                if e.pass { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

fn run<L: Layer<f64> + Clone>(layer: L, x: &Tensor<f64>, faulty: bool) -> Result<GradCheckReport> {
    let r = if faulty {
        grad_check(&Faulty(layer), x, GRADCHECK_EPS, GRADCHECK_TOL)?
    } else {
        grad_check(&layer, x, GRADCHECK_EPS, GRADCHECK_TOL)?
    };
    Ok(r)
}

fn check_layer(name: &str, seed: u64, faulty: bool) -> Result<GradCheckReport> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    match name {
        "conv2d" => {
            let (stride, pad) = [(1, 1), (2, 0), (1, 0), (2, 1)][(seed % 4) as usize];
            let mut conv = Conv2d::<f64>::new("conv", 2, 3, 3, stride, pad, rng)?;
            conv.bias.value = uniform(&[3], rng);
            run(conv, &uniform(&[2, 2, 5, 5], rng), faulty)
        }
        "maxpool2d" => run(MaxPool2d::new(2, 2)?, &uniform(&[2, 2, 4, 4], rng), faulty),
        "relu" => run(Relu, &uniform(&[4, 6], rng), faulty),
        "linear" => {
            let mut fc = Linear::<f64>::new("fc", 6, 4, rng)?;
            fc.bias.value = uniform(&[4], rng);
            run(fc, &uniform(&[3, 6], rng), faulty)
        }
        "batchnorm2d" => {
            let mut bn = BatchNorm2d::<f64>::new("bn", 3);
            bn.gamma.value = Tensor::rand_uniform(&[3], 0.5, 1.5, rng);
            bn.beta.value = uniform(&[3], rng);
            Layer::<f64>::set_mode(&mut bn, Mode::Train);
            run(bn, &uniform(&[4, 3, 3, 3], rng), faulty)
        }
        "dropout" => run(Dropout::new(0.5, rng.gen())?, &uniform(&[4, 8], rng), faulty),
        "softmax_cross_entropy" => {
            let labels = (0..4).map(|_| rng.gen_range(0..5)).collect();
            run(CrossEntropyLoss { labels }, &uniform(&[4, 5], rng), faulty)
        }
        other => anyhow::bail!("unknown layer {other}"),
    }
}

/// Gradient-check every layer of the suite over `seeds` seeds, in double
/// precision. `inject_fault` corrupts the backward pass of the named layer.
pub fn run_suite(seeds: u64, inject_fault: Option<&str>) -> Result<SuiteReport> {
    if let Some(f) = inject_fault {
        if !SUITE.contains(&f) {
            anyhow::bail!("--inject-fault: unknown layer {f:?}");
        }
    }
    let started = Instant::now();
    let mut entries = Vec::with_capacity(SUITE.len());
    for layer in SUITE {
        let faulty = inject_fault == Some(layer);
        let mut entry = SuiteEntry {
            layer,
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
            worst: String::new(),
            pass: true,
        };
        for seed in 0..seeds {
            let r = check_layer(layer, seed, faulty)?;
            entry.checked += r.checked;
            entry.excluded += r.excluded;
            entry.pass &= r.pass;
            if r.max_rel_error >= entry.max_rel_error {
                entry.max_rel_error = r.max_rel_error;
                entry.worst = format!("seed {seed}: {}", r.worst);
            }
        }
        entries.push(entry);
    }
    Ok(SuiteReport {
        entries,
        seconds: started.elapsed().as_secs_f64(),
    })
}
