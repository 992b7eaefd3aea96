use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{BehaviorConfig, BehaviorModel, InputMode};
use crate::error::{ensure_len, Error, Result};
use crate::nnkit::{Direction, Optimizer};

/// Rows to evaluate at once when scoring a held-out set.
const EVAL_CHUNK: usize = 2048;

/// Training rows for a behavior model, stored compactly: parameter vectors
/// are kept once per pushed batch rather than once per row.
#[derive(Debug, Clone)]
pub struct BehaviorSamples {
    levels: usize,
    dim_v: usize,
    zeta: Vec<f64>,
    v: Vec<f64>,
    labels: Vec<usize>,
    group: Vec<usize>,
    params: Vec<Vec<f64>>,
}

impl BehaviorSamples {
    pub fn new(levels: usize, dim_v: usize) -> Self {
        Self {
            levels,
            dim_v,
            zeta: Vec::new(),
            v: Vec::new(),
            labels: Vec::new(),
            group: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn zeta(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.levels), &self.zeta).expect("row-major store")
    }

    /// Appends one batch. `theta` is the policy deployed for it, needed only
    /// by end-to-end models.
    pub fn push(&mut self, zeta: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, labels: &[usize], theta: Option<&[f64]>) -> Result<()> {
        let n = labels.len();
        ensure_len("behavior sample zeta rows", n, zeta.nrows())?;
        ensure_len("behavior sample zeta width", self.levels, zeta.ncols())?;
        ensure_len("behavior sample v rows", n, v.nrows())?;
        ensure_len("behavior sample v width", self.dim_v, v.ncols())?;
        if let Some(&bad) = labels.iter().find(|&&u| u >= self.levels) {
            return Err(Error::Shape {
                context: "behavior sample label",
                expected: self.levels,
                got: bad,
            });
        }
        self.zeta.extend(zeta.iter());
        self.v.extend(v.iter());
        self.labels.extend_from_slice(labels);
        let g = self.params.len();
        self.params.push(theta.map(<[f64]>::to_vec).unwrap_or_default());
        self.group.extend(std::iter::repeat_n(g, n));
        Ok(())
    }

    /// True when at least two rows carry different evaluation vectors.
    pub fn zeta_varies(&self) -> bool {
        let k = self.levels;
        self.zeta.chunks(k).skip(1).any(|row| row != &self.zeta[..k])
    }
}

/// Outcome of one call to [`BehaviorModel::train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Held-out cross-entropy after every pass.
    pub loss_trace: Vec<f64>,
    /// Held-out cross-entropy of the restored parameters.
    pub best_loss: f64,
    pub accuracy: f64,
    pub passes: usize,
}

impl BehaviorModel {
    fn gather(&self, samples: &BehaviorSamples, rows: &[usize]) -> Result<Array2<f64>> {
        let (k, d) = (samples.levels, samples.dim_v);
        ensure_len("behavior sample levels", self.levels, k)?;
        ensure_len("behavior sample features", self.dim_v, d)?;
        let width = self.net.input_dim();
        let mut x = Array2::zeros((rows.len(), width));
        for (r, &i) in rows.iter().enumerate() {
            let zeta = &samples.zeta[i * k..(i + 1) * k];
            let v = &samples.v[i * d..(i + 1) * d];
            let mut row = x.row_mut(r);
            match self.mode {
                InputMode::ZetaOnly => row.assign(&ndarray::ArrayView1::from(zeta)),
                InputMode::ZetaAndV => {
                    row.slice_mut(s![..k]).assign(&ndarray::ArrayView1::from(zeta));
                    row.slice_mut(s![k..]).assign(&ndarray::ArrayView1::from(v));
                }
                InputMode::VAndParams => {
                    let theta = &samples.params[samples.group[i]];
                    ensure_len("behavior sample parameters", self.param_dim, theta.len())?;
                    row.slice_mut(s![..d]).assign(&ndarray::ArrayView1::from(v));
                    row.slice_mut(s![d..]).assign(&ndarray::ArrayView1::from(&theta[..]));
                }
            }
        }
        Ok(x)
    }

    /// Mean cross-entropy of the unfloored model and its accuracy over `rows`.
    pub fn score(&self, samples: &BehaviorSamples, rows: &[usize]) -> Result<(f64, f64)> {
        let (mut loss, mut hits) = (0.0, 0usize);
        for chunk in rows.chunks(EVAL_CHUNK) {
            let q = self.net.predict_batch(self.gather(samples, chunk)?.view())?;
            for (r, &i) in chunk.iter().enumerate() {
                let row = q.row(r);
                let u = samples.labels[i];
                loss -= row[u].max(f64::MIN_POSITIVE).ln();
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (j, &p)| if p > row[b] { j } else { b });
                hits += (best == u) as usize;
            }
        }
        let n = rows.len().max(1) as f64;
        Ok((loss / n, hits as f64 / n))
    }

    /// Mini-batch SGD on cross-entropy with a random train/validation split,
    /// early stopping on the validation loss, and restoration of the best
    /// parameters seen.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &BehaviorSamples,
        cfg: &BehaviorConfig,
        max_passes: usize,
        rng: &mut R,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        let n = samples.len();
        if n < 2 {
            return Err(Error::Behavior(format!("need at least 2 rows, got {n}")));
        }
        if !samples.zeta_varies() {
            return Err(Error::Behavior("evaluation vectors show no variation".into()));
        }
        if samples.labels.iter().all(|&u| u == samples.labels[0]) {
            log::warn!("behavior data has a single class ({}); the model will degenerate to it", samples.labels[0]);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).min(n - 1);
        let (val, train) = order.split_at(n_val);
        let val: Vec<usize> = if val.is_empty() { train.to_vec() } else { val.to_vec() };
        let mut train = train.to_vec();

        let mut opt = Optimizer::sgd(cfg.learning_rate);
        let (mut best, mut best_acc) = self.score(samples, &val)?;
        let mut best_params = self.net.params().to_vec();
        let mut trace = Vec::new();
        let mut stale = 0;
        for _ in 0..max_passes {
            train.shuffle(rng);
            for batch in train.chunks(cfg.batch_size) {
                let x = self.gather(samples, batch)?;
                let cache = self.net.forward_batch(x.view())?;
                let mut g = cache.output().clone();
                for (r, &i) in batch.iter().enumerate() {
                    g[[r, samples.labels[i]]] -= 1.0;
                }
                g /= batch.len() as f64;
                let grads = self.net.backward_from_logits(&cache, g.view(), false)?;
                opt.step(&mut self.net, &grads.params, Direction::Descend)?;
            }
            let (loss, acc) = self.score(samples, &val)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "behavior validation loss".into(),
                });
            }
            trace.push(loss);
            if loss < best - cfg.min_delta {
                best = loss;
                best_acc = acc;
                best_params.copy_from_slice(self.net.params());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        self.net.set_params(&best_params)?;
        Ok(TrainReport {
            passes: trace.len(),
            loss_trace: trace,
            best_loss: best,
            accuracy: best_acc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeta_only(seed: u64) -> (BehaviorModel, BehaviorConfig) {
        let cfg = BehaviorConfig {
            input_mode: InputMode::ZetaOnly,
            hidden: Some(32),
            ..BehaviorConfig::default()
        };
        let m = BehaviorModel::new(&cfg, 5, 0, 0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (m, cfg)
    }

    fn samples(n: usize, seed: u64, label: impl Fn(&[f64], &mut ChaCha8Rng) -> usize) -> BehaviorSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zeta = Array2::from_shape_fn((n, 5), |_| rng.random::<f64>());
        let labels: Vec<usize> = zeta.rows().into_iter().map(|r| label(r.as_slice().unwrap(), &mut rng)).collect();
        let mut s = BehaviorSamples::new(5, 0);
        s.push(zeta.view(), Array2::zeros((n, 0)).view(), &labels, None).unwrap();
        s
    }

    fn argmax(z: &[f64]) -> usize {
        (0..z.len()).fold(0, |b, j| if z[j] > z[b] { j } else { b })
    }

    #[test]
    fn learns_deterministic_argmax() {
        let (mut m, cfg) = zeta_only(1);
        let s = samples(20_000, 2, |z, _| argmax(z));
        let report = m.train(&s, &cfg, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let fresh = samples(4000, 4, |z, _| argmax(z));
        let rows: Vec<usize> = (0..fresh.len()).collect();
        let (_, acc) = m.score(&fresh, &rows).unwrap();
        assert!(acc >= 0.95, "held-out accuracy {acc}, passes {}", report.passes);
    }

    #[test]
    fn uniform_labels_reach_log_k() {
        let (mut m, cfg) = zeta_only(5);
        let s = samples(20_000, 6, |_, rng| rng.random_range(0..5));
        let report = m.train(&s, &cfg, 200, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!((report.best_loss - 5f64.ln()).abs() <= 0.05, "loss {}", report.best_loss);
    }

    #[test]
    fn loss_trace_running_minimum_never_increases() {
        let (mut m, cfg) = zeta_only(8);
        let s = samples(3000, 9, |z, _| argmax(z));
        let report = m.train(&s, &cfg, 30, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert!(report.loss_trace.iter().all(|l| l.is_finite()));
        let mut running = f64::INFINITY;
        for l in &report.loss_trace {
            let next = running.min(*l);
            assert!(next <= running);
            running = next;
        }
        assert!(report.best_loss <= report.loss_trace[0] + 1e-12 || report.loss_trace.len() < 2);
    }

    #[test]
    fn constant_zeta_is_rejected() {
        let (mut m, cfg) = zeta_only(11);
        let mut s = BehaviorSamples::new(5, 0);
        s.push(Array2::from_elem((10, 5), 0.5).view(), Array2::zeros((10, 0)).view(), &[1; 10], None)
            .unwrap();
        assert!(matches!(m.train(&s, &cfg, 5, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Behavior(_))));
    }

    #[test]
    fn training_leaves_the_policy_alone() {
        use crate::nnkit::{Mlp, OutputActivation};
        let policy = Mlp::new(&[7, 6, 1], OutputActivation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let before = policy.checksum();
        let (mut m, cfg) = zeta_only(13);
        let s = samples(500, 14, |z, _| argmax(z));
        m.train(&s, &cfg, 3, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        let behavior = m.net().checksum();
        m.grad_log_q(&policy, &[0.1, 0.2], 1).ok();
        assert_eq!(policy.checksum(), before);
        assert_eq!(m.net().checksum(), behavior);
    }
}
