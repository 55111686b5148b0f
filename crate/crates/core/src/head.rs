//! Trainable linear projection head, triplet loss and its analytic gradient.
//!
//! The head maps an upstream embedding `x` to `normalize(W x + b)`. Gradients
//! of the hinge triplet loss flow through the Euclidean distances, the L2
//! normalization and the affine map.

use serde::{Deserialize, Serialize};

use crate::data::{euclidean, normalize_in_place, EmbeddingSet, Sample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::miner::Triplet;

/// Adam hyper-parameters and the optional L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out x d_in`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step_count: u64,
}

impl ProjectionHead {
    /// Identity weight (zero-padded when the shapes differ) and zero bias.
    pub fn identity(d_in: usize, d_out: usize) -> Self {
        let mut weight = vec![0.0; d_out * d_in];
        for i in 0..d_in.min(d_out) {
            weight[i * d_in + i] = 1.0;
        }
        Self::from_parts(d_in, d_out, weight, vec![0.0; d_out]).expect("shapes are consistent")
    }

    pub fn from_parts(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != d_out * d_in {
            return Err(Error::Dimension {
                expected: d_out * d_in,
                actual: weight.len(),
            });
        }
        if bias.len() != d_out {
            return Err(Error::Dimension {
                expected: d_out,
                actual: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("head parameters must be finite".into()));
        }
        let n = weight.len() + bias.len();
        Ok(ProjectionHead {
            d_in,
            d_out,
            weight,
            bias,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        })
    }

    /// Rebuilds a head from the flat `weight ‖ bias` vector.
    pub fn from_params(d_in: usize, d_out: usize, params: &[f64]) -> Result<Self> {
        let split = d_out * d_in;
        if params.len() != split + d_out {
            return Err(Error::Dimension {
                expected: split + d_out,
                actual: params.len(),
            });
        }
        Self::from_parts(d_in, d_out, params[..split].to_vec(), params[split..].to_vec())
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Flat `weight ‖ bias`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub(crate) fn param_mut(&mut self, k: usize) -> &mut f64 {
        let split = self.weight.len();
        if k < split {
            &mut self.weight[k]
        } else {
            &mut self.bias[k - split]
        }
    }

    /// `W x + b` before normalization.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d_in);
        self.weight
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Normalized output for one input; `None` when `W x + b` is zero.
    pub fn embed(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut z = self.affine(x);
        normalize_in_place(&mut z)?;
        Some(z)
    }

    pub fn project(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        self.project_with(set, Exec::default())
    }

    /// Applies the head to every sample; ids, cameras and labels carry over.
    pub fn project_with(&self, set: &EmbeddingSet, exec: Exec) -> Result<EmbeddingSet> {
        if set.dim() != self.d_in {
            return Err(Error::Dimension {
                expected: self.d_in,
                actual: set.dim(),
            });
        }
        let out: Vec<Result<Sample>> = exec.map(set.len(), |i| {
            let s = set.sample(i);
            let feature = self.embed(&s.feature).ok_or_else(|| Error::ZeroNorm(s.id.clone()))?;
            Ok(Sample {
                id: s.id.clone(),
                camera: s.camera,
                label: s.label.clone(),
                feature,
            })
        });
        EmbeddingSet::from_normalized(out.into_iter().collect::<Result<_>>()?)
    }

    /// Gradient of the mean hinge loss over `batch` with respect to the flat
    /// parameters, together with the loss itself. Features are recomputed
    /// from `raw` with the current parameters.
    pub fn loss_and_gradient(
        &self,
        batch: &[Triplet],
        raw: &EmbeddingSet,
        margin: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        if batch.is_empty() {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for t in batch {
            let (xa, xp, xn) = (raw.feature(t.anchor), raw.feature(t.positive), raw.feature(t.negative));
            let (za, zp, zn) = (self.affine(xa), self.affine(xp), self.affine(xn));
            let (na, np, nn) = (norm(&za), norm(&zp), norm(&zn));
            if na == 0.0 || np == 0.0 || nn == 0.0 {
                let id = [t.anchor, t.positive, t.negative]
                    .into_iter()
                    .zip([na, np, nn])
                    .find(|(_, n)| *n == 0.0)
                    .map(|(i, _)| raw.sample(i).id.clone())
                    .unwrap_or_default();
                return Err(Error::ZeroNorm(id));
            }
            let fa = scaled(&za, 1.0 / na);
            let fp = scaled(&zp, 1.0 / np);
            let fn_ = scaled(&zn, 1.0 / nn);
            let d_ap = euclidean(&fa, &fp);
            let d_an = euclidean(&fa, &fn_);
            let term = d_ap - d_an + margin;
            if term <= 0.0 {
                continue;
            }
            loss += term * scale;

            // d term / d f for each output; zero-distance pairs contribute a
            // zero subgradient.
            let u_ap = unit_diff(&fa, &fp, d_ap);
            let u_an = unit_diff(&fa, &fn_, d_an);
            let g_fa: Vec<f64> = u_ap.iter().zip(&u_an).map(|(p, n)| (p - n) * scale).collect();
            let g_fp: Vec<f64> = u_ap.iter().map(|p| -p * scale).collect();
            let g_fn: Vec<f64> = u_an.iter().map(|n| n * scale).collect();

            self.accumulate(&mut grad, xa, &fa, na, &g_fa);
            self.accumulate(&mut grad, xp, &fp, np, &g_fp);
            self.accumulate(&mut grad, xn, &fn_, nn, &g_fn);
        }
        Ok((loss, grad))
    }

    /// Back-propagates `g_f` through `f = z / |z|`, `z = W x + b`.
    fn accumulate(&self, grad: &mut [f64], x: &[f64], f: &[f64], z_norm: f64, g_f: &[f64]) {
        let proj: f64 = f.iter().zip(g_f).map(|(a, b)| a * b).sum();
        let split = self.weight.len();
        for r in 0..self.d_out {
            let g_z = (g_f[r] - f[r] * proj) / z_norm;
            if g_z == 0.0 {
                continue;
            }
            let row = &mut grad[r * self.d_in..(r + 1) * self.d_in];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += g_z * xi;
            }
            grad[split + r] += g_z;
        }
    }

    /// One Adam step on the mean triplet loss of `batch`. Returns the loss
    /// at the parameters before the step. A batch with no margin violation
    /// only advances the step counter.
    pub fn train_step(
        &mut self,
        batch: &TripletBatch,
        raw: &EmbeddingSet,
        margin: f64,
        lr: f64,
        adam: &AdamConfig,
    ) -> Result<f64> {
        let (loss, mut grad) = self.loss_and_gradient(batch.triplets(), raw, margin)?;
        if adam.weight_decay != 0.0 {
            for (k, g) in grad.iter_mut().enumerate() {
                *g += adam.weight_decay * self.param(k);
            }
        }
        if grad.iter().any(|g| !g.is_finite()) || !loss.is_finite() {
            return Err(Error::NonFiniteGradient { batch: batch.index });
        }
        self.step_count += 1;
        if grad.iter().all(|&g| g == 0.0) {
            return Ok(loss);
        }
        let t = self.step_count as i32;
        let bc1 = 1.0 - adam.beta1.powi(t);
        let bc2 = 1.0 - adam.beta2.powi(t);
        for (k, &g) in grad.iter().enumerate() {
            let m = adam.beta1 * self.adam_m[k] + (1.0 - adam.beta1) * g;
            let v = adam.beta2 * self.adam_v[k] + (1.0 - adam.beta2) * g * g;
            self.adam_m[k] = m;
            self.adam_v[k] = v;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + adam.eps);
            *self.param_mut(k) -= update;
        }
        Ok(loss)
    }

    fn param(&self, k: usize) -> f64 {
        let split = self.weight.len();
        if k < split {
            self.weight[k]
        } else {
            self.bias[k - split]
        }
    }

    /// Copy without optimizer state, for inference-only heads.
    pub fn without_optimizer_state(&self) -> ProjectionHead {
        let mut h = self.clone();
        h.adam_m.iter_mut().for_each(|v| *v = 0.0);
        h.adam_v.iter_mut().for_each(|v| *v = 0.0);
        h.step_count = 0;
        h
    }
}

fn norm(v: &[f64]) -> f64 {
    crate::data::norm(v)
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

fn unit_diff(a: &[f64], b: &[f64], d: f64) -> Vec<f64> {
    if d == 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
}

/// A non-empty batch of triplets with its position within the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    triplets: Vec<Triplet>,
    pub index: usize,
}

impl TripletBatch {
    pub fn new(triplets: Vec<Triplet>, index: usize) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::Config("a triplet batch must not be empty".into()));
        }
        Ok(TripletBatch { triplets, index })
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Mean hinge triplet loss on already-normalized features.
pub fn triplet_loss(batch: &[Triplet], feats: &EmbeddingSet, margin: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|t| {
            let a = feats.feature(t.anchor);
            let d_ap = euclidean(a, feats.feature(t.positive));
            let d_an = euclidean(a, feats.feature(t.negative));
            (d_ap - d_an + margin).max(0.0)
        })
        .sum();
    total / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(features: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::new(
            features
                .into_iter()
                .enumerate()
                .map(|(i, f)| Sample::new(format!("s{i}"), i as u32 % 2, f))
                .collect(),
        )
        .unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingSet {
        set((0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect())
        .l2_normalize()
        .unwrap()
    }

    #[test]
    fn identity_head_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_set(&mut rng, 6, 5);
        let out = ProjectionHead::identity(5, 5).project(&s).unwrap();
        for i in 0..s.len() {
            for (a, b) in s.feature(i).iter().zip(out.feature(i)) {
                assert!((a - b).abs() <= 1e-9);
            }
            assert_eq!(out.sample(i).id, s.sample(i).id);
            assert_eq!(out.camera(i), s.camera(i));
        }
        assert!(out.is_normalized());
    }

    #[test]
    fn positive_scaling_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_set(&mut rng, 4, 3);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 2.0;
        }
        let h = ProjectionHead::from_parts(3, 3, w, vec![0.0; 3]).unwrap();
        let out = h.project(&s).unwrap();
        for i in 0..s.len() {
            for (a, b) in s.feature(i).iter().zip(out.feature(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn random_head_outputs_unit_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_set(&mut rng, 5, 8);
        let w = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
        let out = ProjectionHead::from_parts(8, 4, w, b).unwrap().project(&s).unwrap();
        assert_eq!(out.dim(), 4);
        for i in 0..out.len() {
            assert!((crate::data::norm(out.feature(i)) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_projection_is_an_error() {
        let s = set(vec![vec![1.0, 0.0]]);
        let h = ProjectionHead::from_parts(2, 2, vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(h.project(&s), Err(Error::ZeroNorm(ref id)) if id == "s0"));
    }

    /// Points on a line embedded in 2-D so that distances are exact.
    fn loss_fixture() -> EmbeddingSet {
        // a=0, p=0.2, n=0.9 ; a2=0, p2=0.5, n2=0.4 (as x coordinate)
        let pts = [0.0, 0.2, 0.9, 0.0, 0.5, 0.4];
        EmbeddingSet::new(
            pts.iter()
                .enumerate()
                .map(|(i, &x)| Sample::new(format!("p{i}"), 0, vec![x, 0.0]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        let f = loss_fixture();
        let t1 = Triplet::new(0, 1, 2);
        let t2 = Triplet::new(3, 4, 5);
        assert_eq!(triplet_loss(&[t1], &f, 0.3), 0.0);
        assert!((triplet_loss(&[t2], &f, 0.3) - 0.4).abs() < 1e-12);
        assert!((triplet_loss(&[t1, t2], &f, 0.3) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn satisfied_batch_leaves_parameters_untouched() {
        let raw = set(vec![vec![1.0, 0.0], vec![0.99, 0.05], vec![-1.0, 0.0]]);
        let mut h = ProjectionHead::identity(2, 2);
        let before = h.clone();
        let batch = TripletBatch::new(vec![Triplet::new(0, 1, 2)], 0).unwrap();
        let loss = h.train_step(&batch, &raw, 0.3, 1e-2, &AdamConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(h.params(), before.params());
        assert_eq!(h.step_count(), 1);
    }

    #[test]
    fn step_is_deterministic_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = random_set(&mut rng, 12, 6);
        let batch = TripletBatch::new(
            (0..4).map(|i| Triplet::new(i, i + 4, i + 8)).collect(),
            0,
        )
        .unwrap();
        let mut a = ProjectionHead::identity(6, 6);
        let mut b = ProjectionHead::identity(6, 6);
        let cfg = AdamConfig::default();
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..50 {
            let la = a.train_step(&batch, &raw, 1.0, 1e-2, &cfg).unwrap();
            let lb = b.train_step(&batch, &raw, 1.0, 1e-2, &cfg).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
            first.get_or_insert(la);
            last = la;
        }
        assert_eq!(a, b);
        assert!(last < first.unwrap(), "{last} !< {first:?}");
    }

    #[test]
    fn params_round_trip() {
        let h = ProjectionHead::from_parts(2, 3, vec![1., 2., 3., 4., 5., 6.], vec![7., 8., 9.]).unwrap();
        let p = h.params();
        assert_eq!(p, vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        assert_eq!(ProjectionHead::from_params(2, 3, &p).unwrap(), h);
        assert!(ProjectionHead::from_params(2, 3, &p[..8]).is_err());
    }
}
