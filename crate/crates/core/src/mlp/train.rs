use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{loss_name, sample_loss, LossSpec};
use super::model::{Activation, Layer, MlpModel, ModelMeta};
use crate::beamformer::stack_input;
use crate::error::{Error, Result};
use crate::geometry::AngleGrid;
use crate::questioner::{MeasurementRule, Query};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub queries: usize,
    pub validation_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            queries: 10_000,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub hidden: Activation,
    pub loss: LossSpec,
    pub dataset: DatasetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batches_per_epoch: 10,
            batch_size: 32,
            patience: 20,
            max_epochs: 100,
            seed: 0,
            hidden_widths: vec![1024, 1024],
            hidden: Activation::Relu,
            loss: LossSpec::default(),
            dataset: DatasetSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.patience == 0
            || self.batch_size == 0
            || self.batches_per_epoch == 0
            || self.max_epochs == 0
        {
            return Err(Error::config(
                "patience, batch size, batches per epoch and epochs must be ≥ 1",
            ));
        }
        let f = self.dataset.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("validation fraction must lie in (0, 1)"));
        }
        let n_val = (self.dataset.queries as f64 * f).round() as usize;
        if n_val == 0 || n_val >= self.dataset.queries {
            return Err(Error::config(
                "dataset too small for a train/validation split",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters with the lowest validation loss.
    pub model: MlpModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mean loss over `queries` and the summed-over-batch-mean parameter gradients.
pub fn loss_and_gradient(
    model: &MlpModel,
    grid: &AngleGrid,
    rule: MeasurementRule,
    spec: &LossSpec,
    queries: &[Query],
) -> Result<(f64, Vec<Layer>)> {
    let inputs = stack_batch(queries, grid, model.input_width())?;
    let tape = model.forward_batch(inputs.view());
    let out = tape.outputs.last().expect("tape has outputs");
    let b = queries.len() as f64;
    let mut grad_out = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    for (r, q) in queries.iter().enumerate() {
        let row = out.row(r).to_vec();
        let (l, g) = sample_loss(grid, rule, spec, &q.membership(grid.bins()), &row);
        total += l;
        grad_out
            .row_mut(r)
            .iter_mut()
            .zip(g)
            .for_each(|(d, v)| *d = v / b);
    }
    Ok((total / b, model.backward(&tape, grad_out)))
}

/// Mean loss without gradients. Repeated queries are evaluated once and weighted.
pub fn mean_loss(
    model: &MlpModel,
    grid: &AngleGrid,
    rule: MeasurementRule,
    spec: &LossSpec,
    queries: &[Query],
) -> Result<f64> {
    let mut index: HashMap<&Query, usize> = HashMap::new();
    let mut unique: Vec<(Query, f64)> = Vec::new();
    for q in queries {
        let i = *index.entry(q).or_insert_with(|| {
            unique.push((q.clone(), 0.0));
            unique.len() - 1
        });
        unique[i].1 += 1.0;
    }
    let mut total = 0.0;
    for chunk in unique.chunks(256) {
        let qs: Vec<Query> = chunk.iter().map(|(q, _)| q.clone()).collect();
        let inputs = stack_batch(&qs, grid, model.input_width())?;
        let tape = model.forward_batch(inputs.view());
        let out = tape.outputs.last().expect("tape has outputs");
        for (r, (q, count)) in chunk.iter().enumerate() {
            let row = out.row(r).to_vec();
            total += count * sample_loss(grid, rule, spec, &q.membership(grid.bins()), &row).0;
        }
    }
    Ok(total / queries.len() as f64)
}

fn stack_batch(queries: &[Query], grid: &AngleGrid, width: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((queries.len(), width));
    for (r, q) in queries.iter().enumerate() {
        let row = stack_input(q, grid)?;
        if row.len() != width {
            return Err(Error::Shape {
                expected: width,
                actual: row.len(),
            });
        }
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(x)
}

pub fn random_query<R: Rng + ?Sized>(bins: usize, size: usize, rng: &mut R) -> Query {
    Query::new(sample(rng, bins, size).into_vec()).expect("size ≥ 1")
}

pub fn train(
    cfg: &TrainConfig,
    grid: &AngleGrid,
    query_size: usize,
    rule: MeasurementRule,
) -> Result<TrainReport> {
    train_with_progress(cfg, grid, query_size, rule, |_| {})
}

/// Trains one network for queries of size `query_size`, calling `progress`
/// after every epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    grid: &AngleGrid,
    query_size: usize,
    rule: MeasurementRule,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if query_size == 0 || query_size > grid.bins() {
        return Err(Error::domain(format!(
            "query size {query_size} outside [1, {}]",
            grid.bins()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let queries: Vec<Query> = (0..cfg.dataset.queries)
        .map(|_| random_query(grid.bins(), query_size, &mut rng))
        .collect();
    let n_val = (cfg.dataset.queries as f64 * cfg.dataset.validation_fraction).round() as usize;
    let (validation, training) = queries.split_at(n_val);

    let input = 2 * grid.secondary() * query_size * grid.antennas();
    let widths: Vec<usize> = std::iter::once(input)
        .chain(cfg.hidden_widths.iter().copied())
        .chain(std::iter::once(2 * grid.antennas()))
        .collect();
    let meta = ModelMeta {
        query_size,
        bins: grid.bins(),
        antennas: grid.antennas(),
        secondary: grid.secondary(),
        theta_min: grid.theta_min(),
        theta_max: grid.theta_max(),
        spacing: grid.spacing(),
        rule,
        loss: loss_name(rule).to_string(),
        hidden: cfg.hidden,
        seed: cfg.seed,
        epochs: 0,
        best_epoch: 0,
        learning_rate: cfg.learning_rate,
    };
    let mut model = MlpModel::random(&widths, meta, &mut rng)?;
    let sizes: Vec<usize> = model
        .layers()
        .iter()
        .flat_map(|l| [l.weights.len(), l.bias.len()])
        .collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);

    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut train_loss = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let batch: Vec<Query> = (0..cfg.batch_size)
                .map(|_| training[rng.random_range(0..training.len())].clone())
                .collect();
            let (l, grads) = loss_and_gradient(&model, grid, rule, &cfg.loss, &batch)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss became {l}"),
                });
            }
            train_loss += l / cfg.batches_per_epoch as f64;
            let mut params: Vec<&mut [f64]> = model
                .layers_mut()
                .iter_mut()
                .flat_map(|l| {
                    [
                        l.weights.as_slice_mut().expect("standard layout"),
                        l.bias.as_slice_mut().expect("standard layout"),
                    ]
                })
                .collect();
            let g: Vec<&[f64]> = grads
                .iter()
                .flat_map(|l| {
                    [
                        l.weights.as_slice().expect("standard layout"),
                        l.bias.as_slice().expect("standard layout"),
                    ]
                })
                .collect();
            adam.step(&mut params, &g);
        }
        let validation_loss = mean_loss(&model, grid, rule, &cfg.loss, validation)?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss became {validation_loss}"),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            validation_loss,
        };
        progress(&stats);
        history.push(stats);
        if validation_loss < best.0 {
            best = (validation_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, mut model, best_epoch) = best;
    model.meta_mut().epochs = history.len();
    model.meta_mut().best_epoch = best_epoch;
    Ok(TrainReport {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::model::test_meta;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            hidden_widths: vec![64],
            max_epochs: 5,
            patience: 5,
            dataset: DatasetSpec {
                queries: 200,
                validation_fraction: 0.2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_loss_trends_down() {
        let grid = AngleGrid::new(-60.0, 60.0, 8, 2, 8).unwrap();
        let report = train(&small_cfg(), &grid, 1, MeasurementRule::OneBit).unwrap();
        assert_eq!(report.history.len(), 5);
        let h = &report.history;
        assert!(h[4].train_loss < h[0].train_loss, "{h:?}");
        assert!(h[4].validation_loss < h[0].validation_loss, "{h:?}");
        assert_eq!(report.model.meta().epochs, 5);
        assert_eq!(report.model.widths(), vec![2 * 2 * 8, 64, 16]);
    }

    #[test]
    fn same_seed_same_model() {
        let grid = AngleGrid::new(-60.0, 60.0, 4, 1, 4).unwrap();
        let mut cfg = small_cfg();
        cfg.max_epochs = 2;
        let a = train(&cfg, &grid, 2, MeasurementRule::Full).unwrap();
        let b = train(&cfg, &grid, 2, MeasurementRule::Full).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn bad_configs_rejected() {
        let grid = AngleGrid::new(-60.0, 60.0, 4, 1, 4).unwrap();
        let mut cfg = small_cfg();
        cfg.learning_rate = 0.0;
        assert!(matches!(
            train(&cfg, &grid, 1, MeasurementRule::OneBit),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(&small_cfg(), &grid, 5, MeasurementRule::OneBit),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn nan_parameters_give_nan_loss() {
        let grid = AngleGrid::new(-60.0, 60.0, 4, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = MlpModel::random(&[8, 4, 8], test_meta(1, 4, 4, 1), &mut rng).unwrap();
        model.layers_mut()[1].weights.fill(f64::NAN);
        let q = [Query::new(vec![0]).unwrap()];
        let (l, _) = loss_and_gradient(
            &model,
            &grid,
            MeasurementRule::OneBit,
            &LossSpec::default(),
            &q,
        )
        .unwrap();
        assert!(l.is_nan());
    }
}
