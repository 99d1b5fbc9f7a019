//! Fully connected sigmoid networks with hand-written backpropagation.
//!
//! Hidden layers use the logistic sigmoid; the output layer is linear and
//! feeds one of three likelihood heads:
//! - Gaussian and Cauchy heads emit `(location, log-scale)`,
//! - the propensity head emits a single logit.
//!
//! Outcome heads are trained on `(y - shift) / scale` and the affine
//! `OutputTransform` maps predictions back to outcome units.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{ComponentDistribution, Family};
use crate::error::{ModensError, Result};

/// Emitted scales are floored here (outcome units) to keep the NLL finite.
pub const MIN_SCALE: f64 = 1e-6;

const LOG_SCALE_MIN: f64 = -13.815_510_557_964_274; // ln(1e-6)
const LOG_SCALE_MAX: f64 = 30.0;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_PI: f64 = 1.144_729_885_849_400_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Gaussian,
    Cauchy,
    Propensity,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Gaussian | Head::Cauchy => 2,
            Head::Propensity => 1,
        }
    }

    pub fn family(self) -> Option<Family> {
        match self {
            Head::Gaussian => Some(Family::Gaussian),
            Head::Cauchy => Some(Family::Cauchy),
            Head::Propensity => None,
        }
    }
}

impl std::str::FromStr for Head {
    type Err = ModensError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Head::Gaussian),
            "cauchy" => Ok(Head::Cauchy),
            "propensity" => Ok(Head::Propensity),
            other => Err(ModensError::Config(format!("unknown head `{other}`"))),
        }
    }
}

/// Dense layer `z = W a + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            biases: Array1::zeros(fan_out),
        }
    }

    fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Maps raw network outputs to outcome units: `location = shift + scale·μ`,
/// `σ = scale·exp(log σ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputTransform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutputTransform {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

/// What a network predicts for one input row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Outcome(ComponentDistribution),
    Propensity(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub head: Head,
    pub layers: Vec<Layer>,
    pub output: OutputTransform,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-row loss and its derivative w.r.t. the raw outputs, in the model's
/// normalized units.
pub(crate) fn head_loss(head: Head, out: &[f64], target: f64, grad: &mut [f64]) -> f64 {
    match head {
        Head::Propensity => {
            let logit = out[0];
            grad[0] = sigmoid(logit) - target;
            softplus(logit) - target * logit
        }
        Head::Gaussian | Head::Cauchy => {
            let mu = out[0];
            let (ls, clamped) = if out[1] < LOG_SCALE_MIN {
                (LOG_SCALE_MIN, true)
            } else if out[1] > LOG_SCALE_MAX {
                (LOG_SCALE_MAX, true)
            } else {
                (out[1], false)
            };
            let s = ls.exp();
            let z = (target - mu) / s;
            let (loss, d_mu, d_ls) = if head == Head::Gaussian {
                (LN_SQRT_2PI + ls + 0.5 * z * z, -z / s, 1.0 - z * z)
            } else {
                let q = 1.0 + z * z;
                (LN_PI + ls + q.ln(), -2.0 * z / (s * q), 1.0 - 2.0 * z * z / q)
            };
            grad[0] = d_mu;
            grad[1] = if clamped { 0.0 } else { d_ls };
            loss
        }
    }
}

impl MlpParams {
    /// All-zero parameters for `layer_sizes = [input, hidden…, output]`.
    pub fn zeros(head: Head, layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(head, layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            head,
            layers,
            output: OutputTransform::default(),
        })
    }

    /// Uniform `±√(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(head: Head, layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(head, layer_sizes)?;
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in()];
        sizes.extend(self.layers.iter().map(|l| l.fan_out()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
            && self.output.shift.is_finite()
            && self.output.scale.is_finite()
    }

    /// Activations of every layer; the last entry holds the raw outputs.
    pub(crate) fn activations(&self, inputs: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights.t());
            z += &layer.biases;
            if l < last {
                z.mapv_inplace(sigmoid);
            }
            acts.push(z);
        }
        acts
    }

    /// Raw (normalized) outputs for a batch of input rows.
    pub fn raw_outputs(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        Ok(self.activations(inputs).pop().expect("at least one layer"))
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(ModensError::domain(format!(
                "input has {dim} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Converts one row of raw outputs to a prediction in outcome units.
    pub fn interpret(&self, raw: &[f64]) -> Result<Prediction> {
        match self.head {
            Head::Propensity => Ok(Prediction::Propensity(sigmoid(raw[0]))),
            Head::Gaussian | Head::Cauchy => {
                let ls = raw[1].clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
                let location = self.output.shift + self.output.scale * raw[0];
                let scale = (self.output.scale * ls.exp()).max(MIN_SCALE);
                let family = self.head.family().expect("outcome head");
                Ok(Prediction::Outcome(ComponentDistribution::new(
                    family, location, scale,
                )?))
            }
        }
    }

    pub fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Prediction>> {
        let raw = self.raw_outputs(inputs)?;
        raw.rows()
            .into_iter()
            .map(|r| self.interpret(&row_buf(r)))
            .collect()
    }

    /// Mean NLL over a batch; targets are in the model's normalized units.
    pub fn loss(&self, inputs: ArrayView2<'_, f64>, targets: &[f64]) -> Result<f64> {
        let raw = self.raw_outputs(inputs)?;
        let mut g = [0.0; 2];
        let total: f64 = raw
            .rows()
            .into_iter()
            .zip(targets)
            .map(|(r, &t)| head_loss(self.head, &row_buf(r), t, &mut g))
            .sum();
        Ok(total / targets.len() as f64)
    }

    /// Mean NLL and its gradient by backpropagation.
    pub fn loss_and_grad(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: &[f64],
    ) -> Result<(f64, Vec<Layer>)> {
        self.check_input(inputs.ncols())?;
        if inputs.nrows() != targets.len() || targets.is_empty() {
            return Err(ModensError::domain(format!(
                "{} input rows for {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        let n = targets.len() as f64;
        let acts = self.activations(inputs);
        let out = acts.last().expect("outputs");

        let mut delta = Array2::zeros(out.raw_dim());
        let mut total = 0.0;
        for ((r, mut d), &t) in out
            .rows()
            .into_iter()
            .zip(delta.rows_mut())
            .zip(targets)
        {
            let mut g = [0.0; 2];
            total += head_loss(self.head, &row_buf(r), t, &mut g);
            for (dv, gv) in d.iter_mut().zip(g) {
                *dv = gv / n;
            }
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let g_w = delta.t().dot(a_prev);
            let g_b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut d_prev = delta.dot(&self.layers[l].weights);
                d_prev.zip_mut_with(a_prev, |d, &a| *d *= a * (1.0 - a));
                delta = d_prev;
            }
            grads.push(Layer {
                weights: g_w,
                biases: g_b,
            });
        }
        grads.reverse();
        Ok((total / n, grads))
    }
}

fn row_buf(row: ndarray::ArrayView1<'_, f64>) -> [f64; 2] {
    let mut buf = [0.0; 2];
    for (b, v) in buf.iter_mut().zip(row) {
        *b = *v;
    }
    buf
}

pub(crate) fn check_sizes(head: Head, layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(ModensError::Config(format!(
            "layer sizes must list at least input and output widths, all positive; got {layer_sizes:?}"
        )));
    }
    if *layer_sizes.last().unwrap() != head.output_dim() {
        return Err(ModensError::Config(format!(
            "{head:?} head needs output width {}, got {layer_sizes:?}",
            head.output_dim()
        )));
    }
    Ok(())
}

/// Wire form of a network: weights as nested rows, biases as vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct MemberRepr {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub output: OutputTransform,
}

impl From<&MlpParams> for MemberRepr {
    fn from(p: &MlpParams) -> Self {
        MemberRepr {
            weights: p
                .layers
                .iter()
                .map(|l| l.weights.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: p.layers.iter().map(|l| l.biases.to_vec()).collect(),
            output: p.output,
        }
    }
}

impl MemberRepr {
    pub(crate) fn into_params(self, head: Head, layer_sizes: &[usize]) -> Result<MlpParams> {
        check_sizes(head, layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(ModensError::Config(format!(
                "member has {} weight and {} bias layers, expected {n_layers}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, (w, b)) in self.weights.into_iter().zip(self.biases).enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.len() != fan_out || w.iter().any(|r| r.len() != fan_in) || b.len() != fan_out {
                return Err(ModensError::Config(format!(
                    "layer {l} does not match shape {fan_out}x{fan_in}"
                )));
            }
            let flat: Vec<f64> = w.into_iter().flatten().collect();
            layers.push(Layer {
                weights: Array2::from_shape_vec((fan_out, fan_in), flat)
                    .map_err(|e| ModensError::Internal(e.to_string()))?,
                biases: Array1::from(b),
            });
        }
        let p = MlpParams {
            head,
            layers,
            output: self.output,
        };
        if !p.is_finite() || !(p.output.scale > 0.0) {
            return Err(ModensError::Config("network parameters must be finite".into()));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_predicts_standard_laws() {
        let g = MlpParams::zeros(Head::Gaussian, &[3, 4, 2]).unwrap();
        let x = array![[0.3, -1.0, 1.0]];
        match g.predict_batch(x.view()).unwrap()[0] {
            Prediction::Outcome(d) => {
                assert_eq!(d, ComponentDistribution::gaussian(0.0, 1.0).unwrap())
            }
            _ => panic!("expected an outcome"),
        }
        let p = MlpParams::zeros(Head::Propensity, &[2, 5, 1]).unwrap();
        assert_eq!(
            p.predict_batch(array![[4.0, 2.0]].view()).unwrap()[0],
            Prediction::Propensity(0.5)
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = MlpParams::zeros(Head::Cauchy, &[3, 2]).unwrap();
        assert!(g.raw_outputs(array![[1.0, 2.0]].view()).is_err());
        assert!(MlpParams::zeros(Head::Cauchy, &[3, 1]).is_err());
        assert!(MlpParams::zeros(Head::Propensity, &[3]).is_err());
    }

    #[test]
    fn loss_matches_closed_forms() {
        let mut g = [0.0; 2];
        let l = head_loss(Head::Gaussian, &[0.0, 0.0], 0.0, &mut g);
        assert!((l - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let l = head_loss(Head::Cauchy, &[0.0, 0.0], 0.0, &mut g);
        assert!((l - std::f64::consts::PI.ln()).abs() < 1e-15);
        let l = head_loss(Head::Propensity, &[0.0], 1.0, &mut g);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        // large logits stay finite
        assert!(head_loss(Head::Propensity, &[800.0], 0.0, &mut g).is_finite());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpParams::init(Head::Gaussian, &[5, 8, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = MlpParams::init(Head::Gaussian, &[5, 8, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = MlpParams::init(Head::Gaussian, &[5, 8, 2], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 13.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_eq!(a.n_params(), 5 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn repr_round_trip() {
        let a = MlpParams::init(Head::Cauchy, &[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let repr = MemberRepr::from(&a);
        assert_eq!(repr.into_params(Head::Cauchy, &[3, 4, 2]).unwrap(), a);
        assert!(MemberRepr::from(&a).into_params(Head::Cauchy, &[3, 5, 2]).is_err());
    }

    /// Central differences, step 1e-5, against backprop on random nets.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let h = 1e-5;
        for head in [Head::Gaussian, Head::Cauchy, Head::Propensity] {
            for _ in 0..50 {
                let sizes = [3, rng.random_range(1..5), rng.random_range(1..4), head.output_dim()];
                let mut p = MlpParams::init(head, &sizes, &mut rng).unwrap();
                for l in &mut p.layers {
                    l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                }
                let x = Array2::from_shape_fn((2, 3), |_| rng.random_range(-2.0..2.0));
                let y: Vec<f64> = if head == Head::Propensity {
                    vec![1.0, 0.0]
                } else {
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]
                };
                let (_, grads) = p.loss_and_grad(x.view(), &y).unwrap();
                for l in 0..p.layers.len() {
                    let nw = p.layers[l].weights.len();
                    let cols = p.layers[l].weights.ncols();
                    for k in 0..nw + p.layers[l].biases.len() {
                        fn slot(q: &mut Layer, k: usize, cols: usize) -> &mut f64 {
                            let nw = q.weights.len();
                            if k < nw {
                                &mut q.weights[[k / cols, k % cols]]
                            } else {
                                &mut q.biases[k - nw]
                            }
                        }
                        let mut plus = p.clone();
                        let mut minus = p.clone();
                        *slot(&mut plus.layers[l], k, cols) += h;
                        *slot(&mut minus.layers[l], k, cols) -= h;
                        let fd = (plus.loss(x.view(), &y).unwrap() - minus.loss(x.view(), &y).unwrap()) / (2.0 * h);
                        let bp = *slot(&mut grads[l].clone(), k, cols);
                        let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-3);
                        assert!(rel < 1e-4, "{head:?} layer {l} param {k}: fd {fd} bp {bp}");
                    }
                }
            }
        }
    }
}
