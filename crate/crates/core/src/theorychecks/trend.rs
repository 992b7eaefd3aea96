use ndarray::Array2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{BehaviorConfig, BehaviorModel, BehaviorSamples, InputMode};
use crate::error::{Error, Result};
use crate::synthenv::softmax_choice_probs;

const LEVELS: usize = 5;
const START: usize = 2;
const COST: f64 = 0.1;
const TEST_ROWS: usize = 2000;

fn draw_zeta<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, LEVELS), |_| rng.random::<f64>())
}

/// Mean total-variation distance between a behavior model trained on `n`
/// draws and the softmax mechanism of an agent starting at level 2, for
/// each `n`. Training draws are nested so larger samples extend smaller ones.
pub fn estimation_errors(ns: &[usize], seed: u64) -> Result<Vec<f64>> {
    let max_n = ns.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zeta = draw_zeta(max_n, &mut rng);
    let mut labels = Vec::with_capacity(max_n);
    for row in zeta.rows() {
        let p = softmax_choice_probs(row.as_slice().expect("standard layout"), START, COST);
        let dist = WeightedIndex::new(&p).map_err(|e| Error::Behavior(e.to_string()))?;
        labels.push(dist.sample(&mut rng));
    }
    let test = draw_zeta(TEST_ROWS, &mut rng);
    let test_v = Array2::zeros((TEST_ROWS, 1));

    let cfg = BehaviorConfig {
        input_mode: InputMode::ZetaOnly,
        hidden: Some(20),
        ..BehaviorConfig::default()
    };
    ns.iter()
        .map(|&n| {
            let mut samples = BehaviorSamples::new(LEVELS, 1);
            let v = Array2::zeros((n, 1));
            samples.push(zeta.slice(ndarray::s![..n, ..]), v.view(), &labels[..n], None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut model = BehaviorModel::new(&cfg, LEVELS, 1, 0, &mut rng)?;
            model.train(&samples, &cfg, cfg.max_passes, &mut rng)?;
            let q = model.probabilities(model.inputs(test.view(), test_v.view(), None)?.view())?;
            let tv: f64 = test
                .rows()
                .into_iter()
                .zip(q.rows())
                .map(|(z, qr)| {
                    let p = softmax_choice_probs(z.as_slice().expect("standard layout"), START, COST);
                    0.5 * p.iter().zip(qr.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
                })
                .sum();
            Ok(tv / TEST_ROWS as f64)
        })
        .collect()
}
