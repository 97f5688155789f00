//! Central-difference validation of backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tape;
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::Tensor;

/// Relative disagreement between the two one-sided slopes above which a
/// probe point is treated as a kink (ReLU at 0, a max-pool tie) and skipped.
pub const KINK_TOLERANCE: f64 = 1e-2;

/// Multiple of `f64::EPSILON · max(1, |f|) / eps` below which a slope is
/// indistinguishable from rounding noise in the central difference.
pub const RESOLUTION_FACTOR: f64 = 64.0;

const PROJECTION_SEED: u64 = 0x6772_6164;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Elements compared.
    pub checked: usize,
    /// Elements skipped as non-differentiable points.
    pub excluded: usize,
    /// Where `max_rel_error` occurred, e.g. `input[3]` or `fc.weight[10]`.
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Fixed random weights reducing a layer output to a scalar loss. Magnitudes
/// are bounded away from zero so that every kink shows up in the loss.
fn projection(shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.5..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn loss_of<L: Layer<f64>>(
    layer: &mut L,
    tape: &mut Tape<f64>,
    input: &Tensor<f64>,
) -> Result<(super::Var, super::Var)> {
    let x = tape.leaf(input.clone());
    let out = layer.forward(tape, x)?;
    let loss = if tape.value(out).numel() == 1 {
        out
    } else {
        let w = projection(tape.value(out).shape());
        tape.weighted_sum(out, &w)?
    };
    Ok((x, loss))
}

fn evaluate<L: Layer<f64> + Clone>(pristine: &L, input: &Tensor<f64>) -> Result<f64> {
    let mut layer = pristine.clone();
    let mut tape = Tape::no_grad();
    let (_, loss) = loss_of(&mut layer, &mut tape, input)?;
    tape.value(loss).item()
}

/// Compare the analytic gradient of `layer` (input and every parameter)
/// against central differences `(f(x+eps) - f(x-eps)) / 2eps`.
///
/// The layer is cloned before every evaluation, so stateful layers (dropout
/// RNG, batch-norm running statistics) see identical state each time. A
/// non-scalar output is reduced with a fixed random projection.
///
/// Two kinds of probe point are skipped and counted in `excluded`: kinks,
/// where the one-sided slopes disagree, and points where both gradients are
/// below the finite-difference resolution.
pub fn grad_check<L: Layer<f64> + Clone>(
    layer: &L,
    input: &Tensor<f64>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let base = evaluate(layer, input)?;
    let again = evaluate(layer, input)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicLayer {
            first: base,
            second: again,
        });
    }

    let mut analytic_layer = layer.clone();
    let mut tape = Tape::new();
    let (x, loss) = loss_of(&mut analytic_layer, &mut tape, input)?;
    let grads = tape.backward(loss)?;
    let zeros = Tensor::zeros(input.shape());
    let input_grad = grads.get(x).unwrap_or(&zeros).clone();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        pass: true,
        checked: 0,
        excluded: 0,
        worst: String::new(),
    };
    let resolution = RESOLUTION_FACTOR * f64::EPSILON * base.abs().max(1.0) / eps;
    let probe = |report: &mut GradCheckReport, label: &dyn Fn() -> String, analytic: f64, plus: f64, minus: f64| {
        let right = (plus - base) / eps;
        let left = (base - minus) / eps;
        if (right - left).abs() > KINK_TOLERANCE * right.abs().max(left.abs()).max(1.0) {
            report.excluded += 1;
            return;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        // An identically zero gradient (a bias ahead of batch norm) can only
        // be measured as rounding noise.
        let exact = analytic == 0.0 && numeric == 0.0;
        if !exact && analytic.abs() < resolution && numeric.abs() < resolution {
            report.excluded += 1;
            return;
        }
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = label();
        }
    };

    for i in 0..input.numel() {
        let mut shifted = input.clone();
        shifted.data_mut()[i] += eps;
        let plus = evaluate(layer, &shifted)?;
        shifted.data_mut()[i] = input.data()[i] - eps;
        let minus = evaluate(layer, &shifted)?;
        probe(
            &mut report,
            &|| format!("input[{i}]"),
            input_grad.data()[i],
            plus,
            minus,
        );
    }

    let param_count = layer.parameters().len();
    for p in 0..param_count {
        let param = layer.parameters()[p];
        let name = param.name.clone();
        let analytic = grads
            .param(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(param.value.shape()));
        for j in 0..param.numel() {
            let original = param.value.data()[j];
            let mut shifted = layer.clone();
            shifted.parameters_mut()[p].value.data_mut()[j] = original + eps;
            let plus = evaluate(&shifted, input)?;
            shifted.parameters_mut()[p].value.data_mut()[j] = original - eps;
            let minus = evaluate(&shifted, input)?;
            probe(&mut report, &|| format!("{name}[{j}]"), analytic.data()[j], plus, minus);
        }
    }

    report.pass = report.max_rel_error <= tol;
    Ok(report)
}
