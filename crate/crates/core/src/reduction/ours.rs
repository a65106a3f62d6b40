use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Error, Result};
use crate::nn::{softmax_rows, softmax_rows_backward, Adam, Mlp, MlpGrads};

/// Constraint switches for the learned map. The default keeps every
/// constraint and no bias.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// `+bias`: learn an additive offset.
    pub bias: bool,
    /// `-rowst`: drop row normalization (entries stay positive).
    pub no_row_stochastic: bool,
    /// `-positivity`: allow entries of either sign (rows still sum to one).
    pub no_positivity: bool,
    /// `-dropout`: train the reconstructor without dropout.
    pub no_dropout: bool,
}

impl Ablation {
    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }

    pub fn parameterization(&self) -> Parameterization {
        match (self.no_row_stochastic, self.no_positivity) {
            (false, false) => Parameterization::Softmax,
            (true, false) => Parameterization::Exp,
            (false, true) => Parameterization::Centered,
            (true, true) => Parameterization::Free,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated flags among `+bias`, `-rowst`, `-positivity`,
    /// `-dropout`; empty or `none` means no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Self::default();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty() && *f != "none") {
            match flag {
                "+bias" => out.bias = true,
                "-rowst" => out.no_row_stochastic = true,
                "-positivity" => out.no_positivity = true,
                "-dropout" => out.no_dropout = true,
                other => return Err(usage(format!("unknown ablation flag `{other}`"))),
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags: Vec<&str> = [
            (self.bias, "+bias"),
            (self.no_row_stochastic, "-rowst"),
            (self.no_positivity, "-positivity"),
            (self.no_dropout, "-dropout"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if flags.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&flags.join(","))
        }
    }
}

/// How the raw parameters realize the matrix `A`. Every variant starts at the
/// uniform matrix with entries `1/K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Row softmax of logits: positive and row-stochastic.
    Softmax,
    /// Elementwise exponential: positive, rows unconstrained.
    Exp,
    /// `W - (rowsum(W) - 1)/K`: row-stochastic, any sign.
    Centered,
    /// `A = W`.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionMatrix {
    pub parameterization: Parameterization,
    pub raw: DMatrix<f64>,
}

impl ReductionMatrix {
    pub fn new(parameterization: Parameterization, m: usize, k: usize) -> Self {
        let init = match parameterization {
            Parameterization::Softmax => 0.0,
            Parameterization::Exp => (1.0 / k as f64).ln(),
            Parameterization::Centered | Parameterization::Free => 1.0 / k as f64,
        };
        Self { parameterization, raw: DMatrix::from_element(m, k, init) }
    }

    pub fn realize(&self) -> DMatrix<f64> {
        match self.parameterization {
            Parameterization::Softmax => softmax_rows(&self.raw),
            Parameterization::Exp => self.raw.map(f64::exp),
            Parameterization::Centered => {
                let k = self.raw.ncols() as f64;
                let mut a = self.raw.clone();
                for mut row in a.row_iter_mut() {
                    let shift = (row.sum() - 1.0) / k;
                    row.add_scalar_mut(-shift);
                }
                a
            }
            Parameterization::Free => self.raw.clone(),
        }
    }

    /// Pulls `dL/dA` back to the raw parameters.
    pub fn backward(&self, realized: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
        match self.parameterization {
            Parameterization::Softmax => softmax_rows_backward(realized, grad),
            Parameterization::Exp => grad.component_mul(realized),
            Parameterization::Centered => {
                let k = grad.ncols() as f64;
                let mut g = grad.clone();
                for mut row in g.row_iter_mut() {
                    let mean = row.sum() / k;
                    row.add_scalar_mut(-mean);
                }
                g
            }
            Parameterization::Free => grad.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OursParams {
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub update_interval: usize,
    pub batch_size: usize,
}

impl Default for OursParams {
    fn default() -> Self {
        Self { lr: 3e-4, hidden: vec![32, 32], dropout: 0.75, update_interval: 5, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OursGrads {
    pub matrix: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub reconstructor: MlpGrads,
}

/// Affine reduction `f(r) = A r (+ b)` trained jointly with a reconstructor
/// `g` on the loss `mean ||r - g(f(r))||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OursReducer {
    matrix: ReductionMatrix,
    bias: Option<DVector<f64>>,
    reconstructor: Mlp,
    matrix_adam: Adam,
    reconstructor_adam: Adam,
    params: OursParams,
    ablation: Ablation,
}

impl OursReducer {
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        m: usize,
        params: OursParams,
        ablation: Ablation,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 1 || m >= k {
            return Err(usage(format!("reduction needs K > m >= 1, got K={k}, m={m}")));
        }
        let dropout = if ablation.no_dropout { 0.0 } else { params.dropout };
        let mut widths = vec![m];
        widths.extend(&params.hidden);
        widths.push(k);
        let reconstructor = Mlp::new(&widths, dropout, rng)?;
        Ok(Self {
            matrix: ReductionMatrix::new(ablation.parameterization(), m, k),
            bias: ablation.bias.then(|| DVector::zeros(m)),
            reconstructor,
            matrix_adam: Adam::new(params.lr),
            reconstructor_adam: Adam::new(params.lr),
            params,
            ablation,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.raw.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.raw.nrows()
    }

    pub fn params(&self) -> &OursParams {
        &self.params
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn matrix(&self) -> &ReductionMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut ReductionMatrix {
        &mut self.matrix
    }

    pub fn bias(&self) -> Option<&DVector<f64>> {
        self.bias.as_ref()
    }

    pub fn reconstructor(&self) -> &Mlp {
        &self.reconstructor
    }

    pub fn reconstructor_mut(&mut self) -> &mut Mlp {
        &mut self.reconstructor
    }

    /// The learnable bias under `+bias`.
    pub fn bias_mut(&mut self) -> Option<&mut DVector<f64>> {
        self.bias.as_mut()
    }

    pub fn realized(&self) -> DMatrix<f64> {
        self.matrix.realize()
    }

    pub fn transform(&self, r: &[f64]) -> Result<Vec<f64>> {
        ensure_len("reward", r.len(), self.source_dim())?;
        let out = self.transform_batch(&DMatrix::from_row_slice(1, r.len(), r))?;
        Ok(out.iter().copied().collect())
    }

    /// Maps a batch of rewards (one per row) to reduced rewards.
    pub fn transform_batch(&self, rewards: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("reward batch width", rewards.ncols(), self.source_dim())?;
        Ok(self.reduce(rewards, &self.realized()))
    }

    fn reduce(&self, rewards: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = rewards * a.transpose();
        if let Some(b) = &self.bias {
            for (j, bj) in b.iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*bj);
            }
        }
        z
    }

    /// Reconstruction loss and its gradients for one batch. Dropout masks are
    /// drawn from `rng`, so a fixed seed gives a deterministic loss surface.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        rewards: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<(f64, OursGrads)> {
        ensure_len("reward batch width", rewards.ncols(), self.source_dim())?;
        if rewards.nrows() == 0 {
            return Err(usage("empty reward batch"));
        }
        let a = self.realized();
        let z = self.reduce(rewards, &a);
        let (out, cache) = self.reconstructor.forward_train(&z, Some(rng))?;
        let residual = out - rewards;
        let n = rewards.nrows() as f64;
        let loss = residual.norm_squared() / n;
        let upstream = residual * (2.0 / n);
        let reconstructor = self.reconstructor.backward(&cache, &upstream)?;
        let dz = &reconstructor.input;
        let da = dz.tr_mul(rewards);
        let matrix = self.matrix.backward(&a, &da);
        let bias = self
            .bias
            .as_ref()
            .map(|_| DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum())));
        Ok((loss, OursGrads { matrix, bias, reconstructor }))
    }

    /// One Adam step on the matrix (and bias) and the reconstructor. Returns
    /// the pre-step loss. A non-finite loss skips the step.
    pub fn update<R: Rng + ?Sized>(&mut self, rewards: &DMatrix<f64>, rng: &mut R) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(rewards, rng)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("reconstruction loss is {loss}")));
        }
        {
            let mut params: Vec<&mut [f64]> = vec![self.matrix.raw.as_mut_slice()];
            let mut flat: Vec<&[f64]> = vec![grads.matrix.as_slice()];
            if let (Some(b), Some(gb)) = (self.bias.as_mut(), grads.bias.as_ref()) {
                params.push(b.as_mut_slice());
                flat.push(gb.as_slice());
            }
            self.matrix_adam.step(&mut params, &flat)?;
        }
        self.reconstructor.apply_gradients(&grads.reconstructor, &mut self.reconstructor_adam)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pareto_dominates;
    use crate::nn::relative_error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn reducer(k: usize, m: usize, ablation: &str, seed: u64) -> OursReducer {
        OursReducer::new(k, m, OursParams::default(), ablation.parse().unwrap(), &mut rng(seed)).unwrap()
    }

    fn random_rewards(rows: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        DMatrix::from_fn(rows, k, |_, _| r.random_range(-2.0..1.0))
    }

    #[test]
    fn uniform_start_averages_each_reward() {
        let ours = reducer(4, 2, "", 0);
        assert_eq!(ours.transform(&[4.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(ours.transform(&[0.0; 4]).unwrap(), vec![0.0, 0.0]);
        assert!(ours.transform(&[1.0; 3]).is_err());
    }

    #[test]
    fn every_parameterization_starts_uniform() {
        for flags in ["", "-rowst", "-positivity", "-rowst,-positivity"] {
            let a = reducer(5, 3, flags, 1).realized();
            assert!(a.iter().all(|&x| (x - 0.2).abs() < 1e-15), "{flags}");
        }
    }

    #[test]
    fn ablation_flags_round_trip() {
        for s in ["none", "+bias", "-rowst,-positivity", "+bias,-rowst,-positivity,-dropout"] {
            let parsed: Ablation = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("-nonsense".parse::<Ablation>().is_err());
        assert!("".parse::<Ablation>().unwrap().is_none());
    }

    fn fd_check(flags: &str, seed: u64) {
        let mut ours = reducer(6, 3, flags, seed);
        // move away from the symmetric start
        let mut r = rng(seed + 100);
        ours.matrix.raw.apply(|x| *x += r.random_range(-0.3..0.3));
        if let Some(b) = ours.bias.as_mut() {
            b.apply(|x| *x = r.random_range(-0.5..0.5));
        }
        let batch = random_rewards(8, 6, seed + 200);
        let (_, grads) = ours.loss_and_gradients(&batch, &mut rng(7)).unwrap();
        let h = 1e-5;
        let mut numeric = Vec::new();
        for i in 0..ours.matrix.raw.len() {
            let orig = ours.matrix.raw[i];
            ours.matrix.raw[i] = orig + h;
            let up = ours.loss_and_gradients(&batch, &mut rng(7)).unwrap().0;
            ours.matrix.raw[i] = orig - h;
            let down = ours.loss_and_gradients(&batch, &mut rng(7)).unwrap().0;
            ours.matrix.raw[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let err = relative_error(grads.matrix.as_slice(), &numeric);
        assert!(err < 1e-4, "{flags}: matrix gradient relative error {err}");
        if let Some(gb) = &grads.bias {
            let mut numeric = Vec::new();
            for i in 0..gb.len() {
                let orig = ours.bias.as_ref().unwrap()[i];
                ours.bias.as_mut().unwrap()[i] = orig + h;
                let up = ours.loss_and_gradients(&batch, &mut rng(7)).unwrap().0;
                ours.bias.as_mut().unwrap()[i] = orig - h;
                let down = ours.loss_and_gradients(&batch, &mut rng(7)).unwrap().0;
                ours.bias.as_mut().unwrap()[i] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
            assert!(relative_error(gb.as_slice(), &numeric) < 1e-4);
        }
    }

    #[test]
    fn matrix_gradients_match_central_differences() {
        for (i, flags) in ["", "+bias", "-rowst", "-positivity", "-rowst,-positivity", "-dropout"]
            .iter()
            .enumerate()
        {
            fd_check(flags, i as u64);
        }
    }

    #[test]
    fn constraints_hold_after_every_update() {
        let mut ours = reducer(16, 4, "", 3);
        let mut r = rng(11);
        for step in 0..300 {
            let batch = random_rewards(32, 16, step);
            ours.update(&batch, &mut r).unwrap();
            let a = ours.realized();
            for row in a.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn overfits_a_constant_batch() {
        let mut ours = OursReducer::new(
            4,
            2,
            OursParams { lr: 1e-2, dropout: 0.0, ..OursParams::default() },
            Ablation::default(),
            &mut rng(5),
        )
        .unwrap();
        let row = [0.3, -0.7, 1.2, 0.5];
        let batch = DMatrix::from_fn(16, 4, |_, j| row[j]);
        let mut r = rng(6);
        let mut loss = f64::INFINITY;
        for _ in 0..5000 {
            loss = ours.update(&batch, &mut r).unwrap();
            if loss < 1e-3 {
                break;
            }
        }
        assert!(loss < 1e-3, "final loss {loss}");
    }

    #[test]
    fn non_finite_rewards_skip_the_step() {
        let mut ours = reducer(3, 2, "", 0);
        let before = ours.clone();
        let mut batch = random_rewards(4, 3, 1);
        batch[(0, 0)] = f64::NAN;
        assert!(matches!(ours.update(&batch, &mut rng(0)), Err(Error::Numeric(_))));
        assert_eq!(ours, before);
    }

    fn positive_row_stochastic(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        let logits = DMatrix::from_fn(m, k, |_, _| r.random_range(-3.0..3.0));
        softmax_rows(&logits)
    }

    proptest! {
        #[test]
        fn positive_maps_preserve_dominance(
            seed in 0u64..10_000,
            v in prop::collection::vec(-5.0f64..5.0, 6),
            gap in prop::collection::vec(0.0f64..2.0, 6),
            strict in 0usize..6,
        ) {
            let a = positive_row_stochastic(3, 6, seed);
            let mut u = v.clone();
            for k in 0..6 {
                u[k] += gap[k];
            }
            u[strict] += 0.5;
            prop_assert!(pareto_dominates(&u, &v).unwrap());
            let au = &a * DVector::from_vec(u);
            let av = &a * DVector::from_vec(v);
            prop_assert!(pareto_dominates(au.as_slice(), av.as_slice()).unwrap());
        }

        #[test]
        fn transposed_map_sends_preferences_into_the_source_simplex(
            seed in 0u64..10_000,
            w in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let total: f64 = w.iter().sum::<f64>() + 1e-12;
            let w = DVector::from_iterator(3, w.iter().map(|x| x / total));
            let a = positive_row_stochastic(3, 7, seed);
            let lifted = a.transpose() * &w;
            prop_assert!(lifted.iter().all(|&x| x >= 0.0));
            prop_assert!((lifted.sum() - w.sum()).abs() < 1e-9);
        }
    }
}
