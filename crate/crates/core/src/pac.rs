//! Sample sizes, absolute-distance certificates, residual outlier filtering and
//! end-to-end scenario verification.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::{learn_surrogate, Dataset, LearnConfig, LearnOutcome};
use crate::mlp::Mlp;
use crate::par::Exec;
use crate::rng;
use crate::scenario::{evaluate_all, BlackBox, ParamSpace, ParamVector};
use crate::verifier::{certify, BabConfig, ParamBox, VerificationResult};

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn satisfies(k: usize, c: f64, epsilon: f64) -> bool {
    k > 0 && 2.0 * c / k as f64 <= epsilon
}

/// Smallest `K` with `(2/K)(ln(1/eta) + 1) <= epsilon`.
pub fn required_samples(epsilon: f64, eta: f64) -> Result<usize> {
    check_unit_open("epsilon", epsilon)?;
    check_unit_open("eta", eta)?;
    let c = (1.0 / eta).ln() + 1.0;
    let mut k = (2.0 * c / epsilon).ceil() as usize;
    // The float ceil can land one off the exact boundary either way.
    while !satisfies(k, c, epsilon) {
        k += 1;
    }
    while k > 1 && satisfies(k - 1, c, epsilon) {
        k -= 1;
    }
    Ok(k)
}

/// Absolute distance between a surrogate and the black box, with the data
/// needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacCertificate {
    pub lambda_star: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub k: usize,
    pub seed: u64,
    /// Hex sha256 of the drawn samples (see [`sample_digest`]).
    pub sample_digest: String,
}

impl PacCertificate {
    /// `k` meets the sample requirement of `(epsilon, eta)`.
    pub fn is_consistent(&self) -> bool {
        self.lambda_star >= 0.0
            && required_samples(self.epsilon, self.eta).is_ok_and(|k| self.k >= k)
    }

    /// Regenerate the samples this certificate was computed on.
    pub fn replay_samples(&self, dim: usize) -> Result<Vec<ParamVector>> {
        let samples = draw_samples(self.k, dim, self.seed);
        if sample_digest(&samples) != self.sample_digest {
            return Err(Error::Config("certificate sample digest does not match replay".into()));
        }
        Ok(samples)
    }
}

/// `K` i.i.d. uniform points of `[0,1]^m` from the seeded generator.
pub fn draw_samples(k: usize, dim: usize, seed: u64) -> Vec<ParamVector> {
    let mut r = rng::seeded(seed);
    (0..k)
        .map(|_| ParamVector::clamped(rng::uniform_point(&mut r, dim)))
        .collect()
}

/// Hex sha256 over the samples, one line per sample with components written
/// as shortest round-trip decimals separated by commas.
pub fn sample_digest(samples: &[ParamVector]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        let line: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
        h.update(line.join(","));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// `|f(theta_i) - rho_i|` in index order.
pub fn residuals(f: &Mlp, data: &Dataset) -> Result<Vec<f64>> {
    if !data.is_empty() && data.dim() != f.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.input_dim(),
            got: data.dim(),
        });
    }
    Ok(data
        .thetas()
        .iter()
        .zip(data.rhos())
        .map(|(t, r)| (f.value(t) - r).abs())
        .collect())
}

/// Estimate the absolute distance `max |f - rho|` on
/// `required_samples(epsilon, eta)` fresh uniform samples.
///
/// `f` must not have been trained on these samples.
pub fn estimate_lambda<B: BlackBox + ?Sized>(
    f: &Mlp,
    bb: &B,
    epsilon: f64,
    eta: f64,
    seed: u64,
) -> Result<PacCertificate> {
    Ok(estimate_lambda_with(f, bb, epsilon, eta, seed, Exec::default())?.0)
}

/// As [`estimate_lambda`], also returning the evaluated samples.
pub fn estimate_lambda_with<B: BlackBox + ?Sized>(
    f: &Mlp,
    bb: &B,
    epsilon: f64,
    eta: f64,
    seed: u64,
    exec: Exec,
) -> Result<(PacCertificate, Dataset)> {
    let k = required_samples(epsilon, eta)?;
    let thetas = draw_samples(k, f.input_dim(), seed);
    let sample_digest = sample_digest(&thetas);
    let rhos = evaluate_all(bb, &thetas, exec)?;
    let data = Dataset::new(thetas, rhos)?;
    let lambda_star = residuals(f, &data)?.into_iter().fold(0.0, f64::max);
    Ok((
        PacCertificate {
            lambda_star,
            epsilon,
            eta,
            k,
            seed,
            sample_digest,
        },
        data,
    ))
}

/// Hex sha256 of the serialized model.
pub fn model_digest(f: &Mlp) -> Result<String> {
    Ok(hex::encode(Sha256::digest(f.to_json()?.as_bytes())))
}

/// Certificate as persisted next to its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    #[serde(flatten)]
    pub certificate: PacCertificate,
    pub scenario: String,
    /// [`model_digest`] of the surrogate the certificate belongs to.
    pub model_ref: String,
}

impl CertificateFile {
    pub fn new(certificate: PacCertificate, scenario: impl Into<String>, model: &Mlp) -> Result<Self> {
        Ok(Self {
            certificate,
            scenario: scenario.into(),
            model_ref: model_digest(model)?,
        })
    }

    /// Reject a certificate issued for a different model.
    pub fn check_model(&self, model: &Mlp) -> Result<()> {
        let actual = model_digest(model)?;
        if actual != self.model_ref {
            return Err(Error::InvalidModel(format!(
                "certificate belongs to model {} but the given model digests to {actual}",
                self.model_ref
            )));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSample {
    pub index: usize,
    pub theta: ParamVector,
    pub rho: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub flagged: Vec<FlaggedSample>,
    pub kept: Dataset,
    pub policy: String,
    pub threshold_value: f64,
}

impl OutlierReport {
    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flagged.iter().map(|s| s.index).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Flag samples whose residual exceeds `median + k * MAD`.
///
/// With zero MAD but non-constant residuals the rule becomes
/// `Q3 + k * IQR`; when that spread is zero too nothing is flagged.
pub fn outlier_filter(data: &Dataset, f: &Mlp, k: f64) -> Result<OutlierReport> {
    if data.len() < 10 {
        return Err(Error::Config(format!(
            "outlier filtering needs at least 10 samples, got {}",
            data.len()
        )));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::Config(format!("outlier multiplier must be finite and >= 0, got {k}")));
    }
    let r = residuals(f, data)?;
    let med = median(&r);
    let mad = median(&r.iter().map(|x| (x - med).abs()).collect::<Vec<_>>());
    let (policy, threshold_value) = if mad > 0.0 {
        (format!("median+{k}*MAD"), med + k * mad)
    } else {
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
        if q3 > q1 {
            (format!("Q3+{k}*IQR"), q3 + k * (q3 - q1))
        } else {
            ("none".to_string(), sorted[sorted.len() - 1])
        }
    };
    let is_out: Vec<bool> = r.iter().map(|&x| x > threshold_value).collect();
    let flagged = (0..data.len())
        .filter(|&i| is_out[i])
        .map(|i| FlaggedSample {
            index: i,
            theta: data.thetas()[i].clone(),
            rho: data.rhos()[i],
            residual: r[i],
        })
        .collect();
    Ok(OutlierReport {
        flagged,
        kept: data.select(|i| !is_out[i]),
        policy,
        threshold_value,
    })
}

/// Learned surrogate, its certificate and the threshold check on it.
#[derive(Debug, Clone)]
pub struct ScenarioVerdict {
    pub result: VerificationResult,
    pub certificate: PacCertificate,
    pub model: Mlp,
    pub tau: f64,
    pub learning: LearnOutcome,
}

impl ScenarioVerdict {
    pub fn report(&self) -> ScenarioReport {
        ScenarioReport::new(self.result.clone(), &self.certificate, self.tau)
    }
}

/// Verification report with the probabilistic qualifiers spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    #[serde(flatten)]
    pub result: VerificationResult,
    pub tau: f64,
    pub lambda_star: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub k: usize,
    /// Surrogate value at the counterexample minus the absolute distance.
    pub counterexample_value_minus_lambda: Option<f64>,
}

impl ScenarioReport {
    pub fn new(result: VerificationResult, cert: &PacCertificate, tau: f64) -> Self {
        Self {
            counterexample_value_minus_lambda: result.counterexample_value.map(|v| v - cert.lambda_star),
            result,
            tau,
            lambda_star: cert.lambda_star,
            epsilon: cert.epsilon,
            eta: cert.eta,
            k: cert.k,
        }
    }
}

/// Certify `f - lambda* >= tau` on the whole normalized box.
pub fn certify_with_certificate(
    f: &Mlp,
    cert: &PacCertificate,
    tau: f64,
    cfg: &BabConfig,
) -> VerificationResult {
    certify(f, &ParamBox::unit(f.input_dim()), tau + cert.lambda_star, cfg)
}

/// Learn a surrogate, then certify `f >= tau + lambda*` over the whole space.
///
/// SAFE means: with confidence `1 - eta`, `P(rho >= tau) >= 1 - epsilon`.
pub fn verify_scenario<B: BlackBox + ?Sized>(
    bb: &B,
    space: &ParamSpace,
    tau: f64,
    learn_cfg: &LearnConfig,
    verify_cfg: &BabConfig,
) -> Result<ScenarioVerdict> {
    if !tau.is_finite() {
        return Err(Error::Config(format!("tau must be finite, got {tau}")));
    }
    let learning = learn_surrogate(bb, space, learn_cfg)?;
    let result = certify_with_certificate(&learning.model, &learning.certificate, tau, verify_cfg);
    Ok(ScenarioVerdict {
        result,
        certificate: learning.certificate.clone(),
        model: learning.model.clone(),
        tau,
        learning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::FnBlackBox;
    use crate::verifier::Status;

    #[test]
    fn sample_size_examples() {
        assert_eq!(required_samples(0.01, 0.001).unwrap(), 1582);
        assert_eq!(required_samples(1.0 - 1e-9, 0.5).unwrap(), 4);
        assert!(required_samples(0.0, 0.5).is_err());
        assert!(required_samples(0.5, 1.0).is_err());
        assert!(required_samples(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn exact_boundary_is_inclusive() {
        let eta = (-1.0f64).exp(); // ln(1/eta) + 1 = 2
        let c = (1.0 / eta).ln() + 1.0;
        for k in [5usize, 10, 40, 1000] {
            let eps = 2.0 * c / k as f64;
            assert_eq!(required_samples(eps, eta).unwrap(), k);
        }
    }

    #[test]
    fn surrogate_equal_to_black_box() {
        let f = Mlp::affine(&[1.0, 2.0], 0.5);
        let g = f.clone();
        let bb = FnBlackBox::new("same", move |t: &[f64]| g.value(t));
        let cert = estimate_lambda(&f, &bb, 0.05, 0.01, 3).unwrap();
        assert_eq!(cert.lambda_star, 0.0);
        assert!(cert.is_consistent());
    }

    #[test]
    fn constant_offset() {
        let f = Mlp::constant(&[2, 3, 1], 1.5).unwrap();
        let bb = FnBlackBox::new("c", |_: &[f64]| 1.0);
        let cert = estimate_lambda(&f, &bb, 0.05, 0.01, 3).unwrap();
        assert_eq!(cert.lambda_star, 0.5);
    }

    #[test]
    fn digest_replays() {
        let f = Mlp::affine(&[1.0, -1.0], 0.0);
        let bb = FnBlackBox::new("sq", |t: &[f64]| t[0] * t[0]);
        let cert = estimate_lambda(&f, &bb, 0.1, 0.1, 42).unwrap();
        let again = estimate_lambda(&f, &bb, 0.1, 0.1, 42).unwrap();
        assert_eq!(cert, again);
        let samples = cert.replay_samples(2).unwrap();
        let max = samples
            .iter()
            .map(|t| (f.value(t) - t[0] * t[0]).abs())
            .fold(0.0, f64::max);
        assert_eq!(max, cert.lambda_star);
        let mut tampered = cert.clone();
        tampered.seed += 1;
        assert!(tampered.replay_samples(2).is_err());
    }

    fn data_with_residuals(res: &[f64]) -> (Dataset, Mlp) {
        let thetas: Vec<ParamVector> = (0..res.len())
            .map(|i| ParamVector::new(vec![i as f64 / res.len() as f64]).unwrap())
            .collect();
        (
            Dataset::new(thetas, res.to_vec()).unwrap(),
            Mlp::constant(&[1, 2, 1], 0.0).unwrap(),
        )
    }

    #[test]
    fn constant_residuals_flag_nothing() {
        let (d, f) = data_with_residuals(&[2.0; 20]);
        let rep = outlier_filter(&d, &f, 10.0).unwrap();
        assert!(rep.flagged.is_empty());
        assert_eq!(rep.kept.len(), 20);
        assert!(rep.threshold_value.is_finite());
    }

    #[test]
    fn mad_rule_flags_spike() {
        let mut r: Vec<f64> = (0..30).map(|i| 1.0 + 0.01 * i as f64).collect();
        r[7] = 60.0;
        let (d, f) = data_with_residuals(&r);
        let rep = outlier_filter(&d, &f, 10.0).unwrap();
        assert_eq!(rep.flagged_indices(), vec![7]);
        assert_eq!(rep.kept.len() + rep.flagged.len(), 30);
        assert!(rep.policy.contains("MAD"));
    }

    #[test]
    fn zero_mad_falls_back_to_iqr() {
        // More than half identical: MAD is zero, the quartiles still differ.
        let mut r = vec![1.0; 12];
        r.extend([1.5, 1.6, 1.7, 1.8, 2.0, 2.1, 2.2, 2.3, 500.0]);
        let (d, f) = data_with_residuals(&r);
        let rep = outlier_filter(&d, &f, 10.0).unwrap();
        assert!(rep.policy.contains("IQR"));
        assert_eq!(rep.flagged_indices(), vec![20]);
    }

    #[test]
    fn too_few_samples() {
        let (d, f) = data_with_residuals(&[1.0; 9]);
        assert!(outlier_filter(&d, &f, 10.0).is_err());
    }

    fn quick_learn() -> LearnConfig {
        LearnConfig {
            n_init: 50,
            max_iters: 1,
            epsilon: 0.1,
            eta: 0.1,
            hidden: vec![4],
            train: crate::mlp::TrainConfig {
                epochs: 50,
                ..Default::default()
            },
            ..LearnConfig::default()
        }
    }

    #[test]
    fn constant_scenarios() {
        let space = ParamSpace::new(vec![crate::ParamSpec::new("a", 0.0, 1.0, "")]).unwrap();
        let safe = FnBlackBox::new("five", |_: &[f64]| 5.0);
        let v = verify_scenario(&safe, &space, 0.1, &quick_learn(), &BabConfig::default()).unwrap();
        assert_eq!(v.result.status, Status::Safe);
        assert!(v.result.certified_lower - v.certificate.lambda_star >= 0.1);

        let zero = FnBlackBox::new("zero", |_: &[f64]| 0.0);
        let v = verify_scenario(&zero, &space, 0.1, &quick_learn(), &BabConfig::default()).unwrap();
        assert_eq!(v.result.status, Status::Unsafe);
        let report = v.report();
        let val = report.result.counterexample_value.unwrap();
        assert!(val < 0.1 + v.certificate.lambda_star);
        assert_eq!(report.counterexample_value_minus_lambda, Some(val - v.certificate.lambda_star));
        let json = serde_json::to_value(&report).unwrap();
        for key in ["epsilon", "eta", "lambda_star", "tau", "status", "counterexample"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn certificate_file_pairs_with_model() {
        let f = Mlp::affine(&[1.0], 0.0);
        let g = Mlp::affine(&[2.0], 0.0);
        let cert = PacCertificate {
            lambda_star: 0.1,
            epsilon: 0.01,
            eta: 0.001,
            k: 1582,
            seed: 1,
            sample_digest: "x".into(),
        };
        let file = CertificateFile::new(cert, "toy", &f).unwrap();
        assert!(file.check_model(&f).is_ok());
        assert!(file.check_model(&g).is_err());
        let v: serde_json::Value = serde_json::from_str(&file.to_json_pretty().unwrap()).unwrap();
        for key in ["lambda_star", "epsilon", "eta", "k", "seed", "sample_digest", "scenario", "model_ref"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
