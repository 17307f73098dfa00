//! Iterative surrogate learning with fresh-sample absolute-distance estimates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, TrainConfig};
use crate::pac::{self, PacCertificate};
use crate::par::Exec;
use crate::pgd::{pgd_extremes, Direction, PgdConfig};
use crate::rng::{self, derive_seed};
use crate::scenario::{evaluate_all, BlackBox, ParamSpace, ParamVector};

/// Parameter samples with their fitness values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    thetas: Vec<ParamVector>,
    rhos: Vec<f64>,
}

impl Dataset {
    pub fn new(thetas: Vec<ParamVector>, rhos: Vec<f64>) -> Result<Self> {
        if thetas.len() != rhos.len() {
            return Err(Error::Config(format!(
                "dataset has {} parameter vectors but {} fitness values",
                thetas.len(),
                rhos.len()
            )));
        }
        if let Some(first) = thetas.first() {
            if let Some(bad) = thetas.iter().find(|t| t.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        if let Some((index, &value)) = rhos.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { thetas, rhos })
    }

    pub fn thetas(&self) -> &[ParamVector] {
        &self.thetas
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn len(&self) -> usize {
        self.rhos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhos.is_empty()
    }

    /// Input dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, |t| t.len())
    }

    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if !self.is_empty() && !other.is_empty() && other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        self.thetas.extend(other.thetas);
        self.rhos.extend(other.rhos);
        Ok(())
    }

    /// Rows whose index satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Dataset {
        let mut out = Dataset::default();
        for i in 0..self.len() {
            if keep(i) {
                out.thetas.push(self.thetas[i].clone());
                out.rhos.push(self.rhos[i]);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw: Dataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Dataset::new(raw.thetas, raw.rhos)
    }
}

/// Settings of the learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub n_init: usize,
    pub n_inc: usize,
    pub n_ex: usize,
    pub max_iters: usize,
    /// Stop once the absolute distance is at most this.
    pub lambda_target: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub pgd: PgdConfig,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            n_init: 900,
            n_inc: 40,
            n_ex: 10,
            max_iters: 10,
            lambda_target: 0.0,
            epsilon: 0.01,
            eta: 0.001,
            seed: 0,
            hidden: vec![100, 100],
            train: TrainConfig::default(),
            pgd: PgdConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.max_iters == 0 {
            return Err(Error::Config("n_init and max_iters must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 && self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "epsilon and eta must lie in (0, 1), got {} and {}",
                self.epsilon, self.eta
            )));
        }
        if !(self.lambda_target >= 0.0) {
            return Err(Error::Config("lambda_target must be non-negative".into()));
        }
        self.train.validate()
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

/// One pass of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_size: usize,
    pub train_loss: f64,
    pub lambda_star: f64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub model: Mlp,
    /// Certificate of the last iteration, computed on samples `model` never saw.
    pub certificate: PacCertificate,
    /// Every evaluated sample, including the last evaluation set.
    pub dataset: Dataset,
    pub history: Vec<IterationRecord>,
}

/// Progress notifications, e.g. for incremental persistence.
#[derive(Debug)]
pub enum LearnEvent<'a> {
    Samples(&'a Dataset),
    Iteration(&'a IterationRecord),
}

pub fn learn_surrogate<B: BlackBox + ?Sized>(
    bb: &B,
    space: &ParamSpace,
    cfg: &LearnConfig,
) -> Result<LearnOutcome> {
    learn_surrogate_with(bb, space, cfg, |_| {})
}

/// Surrogate learning loop.
///
/// Train on the accumulated set, then estimate the absolute distance on a
/// fresh i.i.d. set of `required_samples(epsilon, eta)` points. Stop when it is
/// at most `lambda_target` or improved by less than 1 %; otherwise grow the
/// training set with the evaluation points, `n_inc` uniform points and `n_ex`
/// PGD extremes (half minimizing, half maximizing the surrogate).
pub fn learn_surrogate_with<B: BlackBox + ?Sized>(
    bb: &B,
    space: &ParamSpace,
    cfg: &LearnConfig,
    mut observe: impl FnMut(LearnEvent<'_>),
) -> Result<LearnOutcome> {
    cfg.validate()?;
    let m = space.dim();
    let mut model = Mlp::new(&cfg.layer_dims(m), derive_seed(cfg.seed, 1))?;
    let mut sampler = rng::seeded(derive_seed(cfg.seed, 2));

    let mut draw = |n: usize| -> Vec<ParamVector> {
        (0..n)
            .map(|_| ParamVector::clamped(rng::uniform_point(&mut sampler, m)))
            .collect()
    };
    let evaluate = |thetas: Vec<ParamVector>| -> Result<Dataset> {
        let rhos = evaluate_all(bb, &thetas, cfg.exec)?;
        Dataset::new(thetas, rhos)
    };

    let mut data = evaluate(draw(cfg.n_init))?;
    observe(LearnEvent::Samples(&data));

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut certificate = None;
    for iteration in 0..cfg.max_iters {
        let train_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, 100 + iteration as u64),
            ..cfg.train.clone()
        };
        let trained = model.train(&data, &train_cfg)?;
        model = trained.model;

        let eval_seed = derive_seed(cfg.seed, 1000 + iteration as u64);
        let (cert, fresh) = pac::estimate_lambda_with(&model, bb, cfg.epsilon, cfg.eta, eval_seed, cfg.exec)?;
        let record = IterationRecord {
            iteration,
            train_size: data.len(),
            train_loss: trained.final_loss,
            lambda_star: cert.lambda_star,
        };
        observe(LearnEvent::Iteration(&record));

        let stalled = history.last().is_some_and(|prev: &IterationRecord| {
            prev.lambda_star <= 0.0
                || (prev.lambda_star - cert.lambda_star) / prev.lambda_star < 0.01
        });
        let done = cert.lambda_star <= cfg.lambda_target || stalled;
        history.push(record);
        certificate = Some(cert);
        data.extend(fresh)?;
        if done || iteration + 1 == cfg.max_iters {
            observe(LearnEvent::Samples(&data));
            break;
        }

        let mut extra = draw(cfg.n_inc);
        let n_min = cfg.n_ex / 2;
        let pgd_seed = derive_seed(cfg.seed, 2000 + iteration as u64);
        extra.extend(pgd_extremes(&model, n_min, Direction::Min, &cfg.pgd, pgd_seed));
        extra.extend(pgd_extremes(
            &model,
            cfg.n_ex - n_min,
            Direction::Max,
            &cfg.pgd,
            pgd_seed ^ 1,
        ));
        data.extend(evaluate(extra)?)?;
        observe(LearnEvent::Samples(&data));
    }

    Ok(LearnOutcome {
        model,
        certificate: certificate.expect("max_iters >= 1"),
        dataset: data,
        history,
    })
}
