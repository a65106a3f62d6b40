use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

use super::Adam;

/// Affine layer `x W + b` acting on row-major batches (`W` is `in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: DMatrix::zeros(inputs, outputs), bias: DVector::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        add_bias(&mut z, &self.bias);
        z
    }
}

fn add_bias(z: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (j, b) in bias.iter().enumerate() {
        z.column_mut(j).add_scalar_mut(*b);
    }
}

/// Multilayer perceptron with a rectifier after every hidden layer and
/// optional inverted dropout on hidden activations during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    layers: Vec<Dense>,
    dropout: f64,
}

/// Activations saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    masks: Vec<Option<DMatrix<f64>>>,
}

/// Gradients for every layer, in parameter order, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input: DMatrix<f64>,
}

impl MlpGrads {
    pub fn flat(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|g| g.iter().all(|&x| x == 0.0))
    }
}

impl Mlp {
    /// Kaiming-uniform fan-in initialization for layers feeding a rectifier,
    /// `1/sqrt(fan_in)` bounds for the output layer, zero biases.
    pub fn new(widths: &[usize], dropout: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        let mut net = Self::zeros(widths, dropout)?;
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let fan_in = layer.inputs() as f64;
            let bound = if l == last { (1.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
            layer.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize], dropout: f64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(usage("an MLP needs at least input and output widths, all positive"));
        }
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self::from_layers(layers, dropout)
    }

    pub fn from_layers(layers: Vec<Dense>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(usage("an MLP needs at least one layer"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(usage(format!("dropout rate {dropout} outside [0, 1)")));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(usage("consecutive layer widths do not chain"));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(usage("bias length differs from layer width"));
            }
        }
        Ok(Self { layers, dropout })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(usage(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass (dropout is the identity).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward_layers(x.clone(), 0))
    }

    fn forward_layers(&self, mut h: DMatrix<f64>, first: usize) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate().skip(first) {
            h = layer.forward(&h);
            if l < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok(out.iter().copied().collect())
    }

    /// Evaluation-mode forward over every pairing of a row of `left` with a row
    /// of `right`, as if the network saw `[left_i, right_j]`. Output row
    /// `i * right.nrows() + j` belongs to pair `(i, j)`. The first layer is
    /// split so each half is multiplied once.
    pub fn forward_pairs(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let first = &self.layers[0];
        if left.ncols() + right.ncols() != first.inputs() {
            return Err(usage("paired inputs do not add up to the network input width"));
        }
        let top = first.weight.rows(0, left.ncols());
        let bottom = first.weight.rows(left.ncols(), right.ncols());
        let a = left * top;
        let mut b = right * bottom;
        add_bias(&mut b, &first.bias);
        let (n, q, width) = (left.nrows(), right.nrows(), first.outputs());
        let relu = self.layers.len() > 1;
        let h = DMatrix::from_fn(n * q, width, |row, c| {
            let v = a[(row / q, c)] + b[(row % q, c)];
            if relu {
                v.max(0.0)
            } else {
                v
            }
        });
        Ok(self.forward_layers(h, 1))
    }

    /// Training-mode forward pass. Dropout is applied when the rate is positive
    /// and an rng is supplied; a positive rate without an rng is an error.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        mut rng: Option<&mut R>,
    ) -> Result<(DMatrix<f64>, MlpCache)> {
        self.check_input(x)?;
        if self.dropout > 0.0 && rng.is_none() {
            return Err(usage("training with dropout requires an rng"));
        }
        let keep = 1.0 - self.dropout;
        let last = self.layers.len() - 1;
        let mut cache = MlpCache { inputs: Vec::new(), pre_activations: Vec::new(), masks: Vec::new() };
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            cache.inputs.push(h);
            if l == last {
                return Ok((z, cache));
            }
            let mut a = z.map(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            cache.pre_activations.push(z);
            cache.masks.push(mask);
            h = a;
        }
        unreachable!("the loop returns at the output layer")
    }

    /// Reverse-mode gradients given `dL/d(output)` for the cached batch.
    pub fn backward(&self, cache: &MlpCache, upstream: &DMatrix<f64>) -> Result<MlpGrads> {
        let rows = cache.inputs.first().map_or(0, DMatrix::nrows);
        if cache.inputs.len() != self.layers.len()
            || upstream.nrows() != rows
            || upstream.ncols() != self.output_dim()
        {
            return Err(usage("upstream gradient does not match the cached forward pass"));
        }
        let depth = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); depth];
        let mut biases = vec![DVector::zeros(0); depth];
        let mut g = upstream.clone();
        for l in (0..depth).rev() {
            weights[l] = cache.inputs[l].tr_mul(&g);
            biases[l] = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            let mut down = &g * self.layers[l].weight.transpose();
            if l > 0 {
                if let Some(mask) = &cache.masks[l - 1] {
                    down.component_mul_assign(mask);
                }
                let pre = &cache.pre_activations[l - 1];
                down.zip_apply(pre, |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            g = down;
        }
        Ok(MlpGrads { weights, biases, input: g })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn apply_gradients(&mut self, grads: &MlpGrads, adam: &mut Adam) -> Result<()> {
        let flat = grads.flat();
        adam.step(&mut self.params_mut(), &flat)
    }
}

/// On-disk form: layers keyed `dense_00`, `dense_01`, ... with row-major
/// `inputs x outputs` weights.
#[derive(Serialize, Deserialize)]
struct MlpRecord {
    dropout: f64,
    layers: BTreeMap<String, DenseRecord>,
}

#[derive(Serialize, Deserialize)]
struct DenseRecord {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        let layers = net
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let record = DenseRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weight: l.weight.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                };
                (format!("dense_{i:02}"), record)
            })
            .collect();
        Self { dropout: net.dropout, layers }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = crate::Error;

    fn try_from(record: MlpRecord) -> Result<Self> {
        let layers = record
            .layers
            .into_values()
            .map(|r| {
                if r.weight.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
                    return Err(usage("layer record has inconsistent shapes"));
                }
                Ok(Dense {
                    weight: DMatrix::from_row_slice(r.inputs, r.outputs, &r.weight),
                    bias: DVector::from_vec(r.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, record.dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], 0.0).unwrap();
        let out = net.forward(&random_batch(4, 3, 1)).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_layer_echoes_input() {
        let layer = Dense { weight: DMatrix::identity(3, 3), bias: DVector::zeros(3) };
        let net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        let x = random_batch(2, 3, 2);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_dropout_training_equals_evaluation() {
        let net = Mlp::new(&[4, 8, 8, 3], 0.0, &mut rng(3)).unwrap();
        let x = random_batch(5, 4, 4);
        let (train, _) = net.forward_train(&x, Some(&mut rng(9))).unwrap();
        assert_eq!(train, net.forward(&x).unwrap());
        let (no_rng, _) = net.forward_train::<NoRng>(&x, None).unwrap();
        assert_eq!(no_rng, train);
    }

    #[test]
    fn dropout_requires_rng_in_training() {
        let net = Mlp::new(&[2, 4, 1], 0.5, &mut rng(0)).unwrap();
        let x = random_batch(1, 2, 0);
        assert!(net.forward_train::<NoRng>(&x, None).is_err());
        // evaluation never needs one
        assert!(net.forward(&x).is_ok());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Mlp::new(&[2, 4, 1], 0.0, &mut rng(0)).unwrap();
        assert!(net.forward(&random_batch(1, 3, 0)).is_err());
        let (_, cache) = net.forward_train::<NoRng>(&random_batch(2, 2, 0), None).unwrap();
        assert!(net.backward(&cache, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(&[3, 6, 2], 0.0, &mut rng(5)).unwrap();
        let (_, cache) = net.forward_train::<NoRng>(&random_batch(4, 3, 6), None).unwrap();
        let grads = net.backward(&cache, &DMatrix::zeros(4, 2)).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let net = Mlp::new(&[3, 2], 0.0, &mut rng(7)).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]);
        let up = DMatrix::from_row_slice(1, 2, &[3.0, -0.25]);
        let (_, cache) = net.forward_train::<NoRng>(&x, None).unwrap();
        let grads = net.backward(&cache, &up).unwrap();
        assert_eq!(grads.weights[0], x.transpose() * &up);
    }

    /// Loss `sum(out .* probe)` and its gradient, with a fixed dropout stream.
    fn probe_loss(net: &Mlp, x: &DMatrix<f64>, probe: &DMatrix<f64>, seed: u64) -> f64 {
        let (out, _) = net.forward_train(x, Some(&mut rng(seed))).unwrap();
        out.component_mul(probe).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        for (dropout, seed) in [(0.0, 1u64), (0.5, 2), (0.75, 3)] {
            let mut net = Mlp::new(&[4, 7, 5, 3], dropout, &mut rng(seed)).unwrap();
            // nonzero biases keep fully dropped rows away from the rectifier kink
            let mut r = rng(seed + 30);
            for layer in &mut net.layers {
                layer.bias.apply(|b| *b = r.random_range(0.1..0.5));
            }
            let x = random_batch(6, 4, seed + 10);
            let probe = random_batch(6, 3, seed + 20);
            let (_, cache) = net.forward_train(&x, Some(&mut rng(99))).unwrap();
            let grads = net.backward(&cache, &probe).unwrap();
            let analytic: Vec<f64> = grads.flat().concat();
            let h = 1e-5;
            let mut numeric = Vec::new();
            let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
            for (block, &len) in sizes.iter().enumerate() {
                for i in 0..len {
                    let orig = net.params()[block][i];
                    net.params_mut()[block][i] = orig + h;
                    let up = probe_loss(&net, &x, &probe, 99);
                    net.params_mut()[block][i] = orig - h;
                    let down = probe_loss(&net, &x, &probe, 99);
                    net.params_mut()[block][i] = orig;
                    numeric.push((up - down) / (2.0 * h));
                }
            }
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "dropout {dropout}: relative error {err}");

            // input gradient
            let mut numeric_in = Vec::new();
            for idx in 0..x.len() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[idx] += h;
                down[idx] -= h;
                numeric_in.push(
                    (probe_loss(&net, &up, &probe, 99) - probe_loss(&net, &down, &probe, 99)) / (2.0 * h),
                );
            }
            assert!(relative_error(grads.input.as_slice(), &numeric_in) < 1e-4);
        }
    }

    #[test]
    fn paired_forward_matches_concatenated_inputs() {
        let net = Mlp::new(&[5, 9, 4], 0.0, &mut rng(4)).unwrap();
        let left = random_batch(3, 3, 1);
        let right = random_batch(4, 2, 2);
        let paired = net.forward_pairs(&left, &right).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let x: Vec<f64> = left.row(i).iter().chain(right.row(j).iter()).copied().collect();
                let direct = net.forward_one(&x).unwrap();
                for (c, v) in direct.iter().enumerate() {
                    assert!((paired[(i * 4 + j, c)] - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_uses_named_layers() {
        let net = Mlp::new(&[3, 4, 2], 0.25, &mut rng(8)).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        assert!(json.contains("\"dense_00\"") && json.contains("\"dense_01\""));
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }
}
