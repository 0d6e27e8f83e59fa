//! Fitting a [`FeatureField`] to lifted samples with Adam.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DfdError, Result};
use crate::features::SampleSet;
use crate::field::{rows_to_array, squared_error, Encoding, FeatureField, Gradients, DEFAULT_BANDS, DEFAULT_HIDDEN};
use crate::mesh::Aabb;

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH: usize = 65_536;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
/// Rows per forward/backward pass; gradients of one batch are summed over
/// these in a fixed order.
const MICRO_BATCH: usize = 2048;
/// Samples used for the pre-training loss entry.
const INITIAL_LOSS_SAMPLES: usize = 65_536;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

thread_local! {
    static STEPS_TAKEN: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Optimizer steps taken by training calls made from the current thread.
/// Lets callers assert that some operation never trains.
pub fn optimizer_steps_on_this_thread() -> u64 {
    STEPS_TAKEN.with(|c| c.get())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoding: Encoding,
    pub hidden: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    /// Give up once training has run this long; the report is marked
    /// `timed_out`.
    pub time_limit: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            encoding: Encoding::Fourier { bands: DEFAULT_BANDS },
            hidden: DEFAULT_HIDDEN,
            max_steps: None,
            time_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DfdError::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DfdError::invalid("learning rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(DfdError::invalid("hidden width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss; entry 0 is before any update, then one entry
    /// per (possibly partial) epoch.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub samples: usize,
    pub dropped_samples: usize,
    pub samples_processed: u64,
    pub epochs_completed: usize,
    pub train_seconds: f64,
    pub timed_out: bool,
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(field: &FeatureField, lr: f64) -> Self {
        let shapes: Vec<usize> = field.parameters().iter().map(|t| t.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, field: &mut FeatureField, grads: &Gradients<f32>) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        for (((p, g), m), v) in field
            .parameters_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                p[i] = (p[i] as f64 - step * m[i] / (v[i].sqrt() + ADAM_EPS * c2.sqrt())) as f32;
            }
        }
    }
}

/// Fits a fresh field to `samples`. Features must already be unit norm.
pub fn train_field(samples: &SampleSet, bounds: &Aabb, config: &TrainConfig) -> Result<(FeatureField, TrainReport)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(DfdError::Missing("no training samples".into()));
    }
    let field = FeatureField::new(config.encoding, config.hidden, samples.channels, bounds, config.seed);
    train_from(field, samples, config)
}

/// Continues training an existing field.
pub fn train_from(
    mut field: FeatureField,
    samples: &SampleSet,
    config: &TrainConfig,
) -> Result<(FeatureField, TrainReport)> {
    config.validate()?;
    let n = samples.len();
    if n == 0 {
        return Err(DfdError::Missing("no training samples".into()));
    }
    if field.channels() != samples.channels {
        return Err(DfdError::invalid(format!(
            "field has {} channels, samples have {}",
            field.channels(),
            samples.channels
        )));
    }
    let start = Instant::now();
    let mut report = TrainReport {
        losses: Vec::with_capacity(config.epochs + 1),
        steps: 0,
        samples: n,
        dropped_samples: samples.dropped,
        samples_processed: 0,
        epochs_completed: 0,
        train_seconds: 0.0,
        timed_out: false,
        optimizer: "adam".into(),
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        seed: config.seed,
    };
    let probe: Vec<usize> = (0..n.min(INITIAL_LOSS_SAMPLES)).collect();
    report.losses.push(mean_loss(&field, samples, &probe));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f1e1d);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(&field, config.learning_rate);
    let mut grads = field.zero_gradients();
    let mut epoch_loss = 0.0;
    let mut epoch_seen = 0usize;
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| report.steps >= m) {
                break 'epochs;
            }
            if config.time_limit.is_some_and(|t| start.elapsed() >= t) {
                report.timed_out = true;
                break 'epochs;
            }
            let loss = batch_gradients(&field, samples, batch, &mut grads);
            if !loss.is_finite() || grads.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                report.losses.push(f64::NAN);
                report.train_seconds = start.elapsed().as_secs_f64();
                return Err(DfdError::Diverged(format!(
                    "non-finite loss at step {}; report: {}",
                    report.steps,
                    serde_json::to_string(&report).unwrap_or_default()
                )));
            }
            adam.step(&mut field, &grads);
            STEPS_TAKEN.with(|c| c.set(c.get() + 1));
            report.steps += 1;
            report.samples_processed += batch.len() as u64;
            epoch_loss += loss;
            epoch_seen += batch.len();
        }
        report.losses.push(epoch_loss / epoch_seen as f64);
        report.epochs_completed += 1;
        epoch_loss = 0.0;
        epoch_seen = 0;
    }
    if epoch_seen > 0 {
        report.losses.push(epoch_loss / epoch_seen as f64);
    }
    report.train_seconds = start.elapsed().as_secs_f64();
    Ok((field, report))
}

/// Sum of the per-sample loss over `batch`; `grads` receives the gradient of
/// the batch mean.
fn batch_gradients(field: &FeatureField, samples: &SampleSet, batch: &[usize], grads: &mut Gradients<f32>) -> f64 {
    let parts: Vec<(Gradients<f32>, f64)> = batch
        .par_chunks(MICRO_BATCH)
        .map(|rows| {
            let mut g = field.zero_gradients();
            let pts: Vec<[f32; 3]> = rows.iter().map(|&i| samples.points[i]).collect();
            let targets: Array2<f32> = rows_to_array(&samples.features, samples.channels, rows);
            let cache = field.forward(field.encode_batch(&pts));
            let loss = squared_error(&cache.out, &targets) as f64;
            let d_out = (&cache.out - &targets) * 2.0f32;
            field.backward(&cache, &d_out, &mut g);
            (g, loss)
        })
        .collect();
    grads.fill_zero();
    let mut total = 0.0;
    for (g, loss) in parts {
        add_into(grads, &g);
        total += loss;
    }
    grads.scale(1.0 / batch.len() as f32);
    total
}

fn add_into(acc: &mut Gradients<f32>, g: &Gradients<f32>) {
    for (a, b) in acc.dense.iter_mut().zip(&g.dense) {
        a.w += &b.w;
        a.b += &b.b;
    }
    for (a, b) in acc.norms.iter_mut().zip(&g.norms) {
        a.gamma += &b.gamma;
        a.beta += &b.beta;
    }
}

/// Mean per-sample loss over the given rows.
pub fn mean_loss(field: &FeatureField, samples: &SampleSet, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let total: f64 = rows
        .par_chunks(MICRO_BATCH)
        .map(|rows| {
            let pts: Vec<[f32; 3]> = rows.iter().map(|&i| samples.points[i]).collect();
            let targets: Array2<f32> = rows_to_array(&samples.features, samples.channels, rows);
            let out = field.infer(field.encode_batch(&pts));
            squared_error(&out, &targets) as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / rows.len() as f64
}

/// Epoch count that makes a run over `ablation` samples process as many
/// samples as `epochs` passes over `reference` samples.
pub fn matched_epochs(epochs: usize, reference: usize, ablation: usize) -> usize {
    if ablation == 0 {
        return 0;
    }
    ((epochs as u128 * reference as u128).div_ceil(ablation as u128)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Dense;
    use crate::shapes;
    use rand::Rng;

    fn unit_set(points: Vec<[f32; 3]>, f: impl Fn([f32; 3]) -> Vec<f32>) -> SampleSet {
        let channels = f(points[0]).len();
        let mut features = Vec::with_capacity(points.len() * channels);
        for p in &points {
            let v = f(*p);
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            features.extend(v.iter().map(|x| x / n));
        }
        SampleSet {
            points,
            features,
            channels,
            dropped: 0,
        }
    }

    fn random_points(n: usize, seed: u64) -> Vec<[f32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn cube() -> Aabb {
        Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    /// Central differences on the summed loss in double precision.
    fn gradient_check(hidden: usize, channels: usize, probes_per_tensor: usize) -> f64 {
        let mut field = FeatureField::<f64>::new(Encoding::Fourier { bands: 6 }, hidden, channels, &cube(), 11);
        // non-trivial LayerNorm parameters and biases
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in &mut field.norms {
            n.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            n.beta.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        }
        for Dense { b, .. } in &mut field.dense {
            b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        let pts = random_points(10, 9);
        let mut targets = Array2::<f64>::zeros((10, channels));
        for mut row in targets.rows_mut() {
            row.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        let cache = field.forward(field.encode_batch(&pts));
        let d_out = (&cache.out - &targets) * 2.0;
        let mut grads = field.zero_gradients();
        field.backward(&cache, &d_out, &mut grads);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

        let h = 1e-6;
        let mut worst = 0.0f64;
        for (ti, g) in analytic.iter().enumerate() {
            let count = g.len();
            let picks: Vec<usize> = if count <= probes_per_tensor {
                (0..count).collect()
            } else {
                (0..probes_per_tensor).map(|_| rng.random_range(0..count)).collect()
            };
            for i in picks {
                let orig = field.parameters()[ti][i];
                field.parameters_mut()[ti][i] = orig + h;
                let lp = field.loss(&pts, &targets);
                field.parameters_mut()[ti][i] = orig - h;
                let lm = field.loss(&pts, &targets);
                field.parameters_mut()[ti][i] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = g[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn analytic_gradients_match_finite_differences_small_net() {
        let worst = gradient_check(8, 4, usize::MAX);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences_default_width() {
        let worst = gradient_check(DEFAULT_HIDDEN, 16, 40);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_epochs_reports_initial_loss_only() {
        let set = unit_set(random_points(50, 1), |_| vec![1.0, 0.0]);
        let cfg = TrainConfig {
            epochs: 0,
            hidden: 16,
            ..Default::default()
        };
        let (_, rep) = train_field(&set, &cube(), &cfg).unwrap();
        assert_eq!(rep.losses.len(), 1);
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn constant_target_is_learned() {
        let set = unit_set(random_points(1000, 2), |_| vec![0.0, 1.0, 0.0, 0.0]);
        let cfg = TrainConfig {
            epochs: 800,
            batch_size: 256,
            hidden: 32,
            seed: 3,
            ..Default::default()
        };
        let (field, rep) = train_field(&set, &cube(), &cfg).unwrap();
        assert!(*rep.losses.last().unwrap() < 1e-4, "{:?}", rep.losses.last());
        let out = field.eval(&random_points(20, 99));
        for row in out.chunks(4) {
            assert!(row[1] > 0.99);
        }
    }

    #[test]
    fn smooth_field_fits() {
        let f = |p: [f32; 3]| {
            let mut v = Vec::new();
            for c in p {
                v.push((2.0 * c).sin());
                v.push((2.0 * c).cos());
            }
            v
        };
        let set = unit_set(random_points(4000, 4), f);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 512,
            hidden: 64,
            seed: 4,
            ..Default::default()
        };
        let (field, rep) = train_field(&set, &cube(), &cfg).unwrap();
        assert!(*rep.losses.last().unwrap() < 0.02, "{:?}", rep.losses);
        let held = unit_set(random_points(500, 77), f);
        let rows: Vec<usize> = (0..held.len()).collect();
        assert!(mean_loss(&field, &held, &rows) < 0.05);
    }

    #[test]
    fn full_batch_loss_decreases() {
        let set = unit_set(random_points(512, 6), |p| vec![p[0], p[1] + 2.0, p[2]]);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 512,
            hidden: 32,
            learning_rate: 1e-3,
            seed: 6,
            ..Default::default()
        };
        let (_, rep) = train_field(&set, &cube(), &cfg).unwrap();
        // one full-batch step per epoch: each entry is the loss before that step
        let l = &rep.losses[1..];
        for w in l.windows(2) {
            assert!(w[1] <= w[0] * 1.001, "{l:?}");
        }
        assert!(l.last().unwrap() < &l[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let set = unit_set(random_points(300, 8), |p| vec![p[0], 1.0, p[2]]);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 100,
            hidden: 16,
            seed: 1,
            ..Default::default()
        };
        let (a, ra) = train_field(&set, &cube(), &cfg).unwrap();
        let (b, rb) = train_field(&set, &cube(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.losses, rb.losses);
    }

    #[test]
    fn step_cap_and_deadline() {
        let set = unit_set(random_points(300, 8), |p| vec![p[0], 1.0]);
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 10,
            hidden: 8,
            max_steps: Some(7),
            ..Default::default()
        };
        let (_, rep) = train_field(&set, &cube(), &cfg).unwrap();
        assert_eq!(rep.steps, 7);
        let before = optimizer_steps_on_this_thread();
        let _ = train_field(&set, &cube(), &cfg).unwrap();
        assert_eq!(optimizer_steps_on_this_thread() - before, 7);
        let cfg = TrainConfig {
            max_steps: None,
            time_limit: Some(Duration::ZERO),
            ..cfg
        };
        let (_, rep) = train_field(&set, &cube(), &cfg).unwrap();
        assert!(rep.timed_out);
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn learned_field_is_smooth() {
        let mesh = shapes::icosphere(3);
        let set = unit_set(mesh.vertices.clone(), |p| vec![p[0] + 1.5, p[1], p[2], 1.0]);
        let b = mesh.bounds();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 128,
            hidden: 32,
            ..Default::default()
        };
        let (field, _) = train_field(&set, &b, &cfg).unwrap();
        let delta = 1e-3 * b.diagonal() as f32;
        let mut worst = 0.0f32;
        for v in mesh.vertices.iter().take(200) {
            let a = field.eval(&[*v]);
            let q = field.eval(&[[v[0] + delta, v[1], v[2]]]);
            let d = a.iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt();
            worst = worst.max(d);
        }
        assert!(worst < 0.05, "feature jump {worst} for a {delta} step");
    }

    #[test]
    fn matched_epoch_count() {
        assert_eq!(matched_epochs(10, 1000, 100), 100);
        assert_eq!(matched_epochs(10, 1000, 300), 34);
        assert_eq!(matched_epochs(10, 1000, 0), 0);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let set = unit_set(random_points(10, 1), |_| vec![1.0, 0.0]);
        let field = FeatureField::new(Encoding::None, 4, 3, &cube(), 0);
        assert!(train_from(field, &set, &TrainConfig::default()).is_err());
    }
}
