//! Train / predict / evaluate orchestration and model persistence.

mod characterize;
mod persist;
mod search;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Response};
use crate::error::{Error, Result};
use crate::features::{Column, FeatureMatrix, FeaturePlan, ModelKind, RbfParams};
use crate::regression::{self, information_criteria, RegressionFit, SystemScores};
use crate::trend_clustering::{fit as fit_trends, visit_deltas, ClusterAlgorithm, ClusterConfig, TrendFit};

pub use characterize::{characterize, pearson, Characterization, Correlation, HostSlope, ScatterSeries};
pub use persist::{load_model, read_model, save_model, write_model, SCHEMA_VERSION};
pub use search::{grid_search, SearchGrid, SearchResult};

/// Tunable settings shared by all model families. Families ignore the
/// fields they do not use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Trend count for the Mixed-Trend families.
    pub k: usize,
    /// RBF kernel width.
    pub gamma: f64,
    /// Ridge penalty; 0 is ordinary least squares.
    pub lambda: f64,
    /// RBF anchor count.
    pub rbf_c: usize,
    /// Seeds clustering initialization and RBF anchor sampling.
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            k: 50,
            gamma: 1.0,
            lambda: 0.0,
            rbf_c: 10,
            seed: 0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if kind == ModelKind::Rbf {
            if self.rbf_c < 1 {
                return Err(Error::invalid("rbf-c must be at least 1"));
            }
            if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                return Err(Error::invalid(format!("gamma {} must be > 0", self.gamma)));
            }
        }
        if kind.trend_algorithm().is_some() {
            if self.k < 1 {
                return Err(Error::invalid("k must be at least 1"));
            }
            if self.max_iter < 1 {
                return Err(Error::invalid("max-iter must be at least 1"));
            }
            if !(self.tol >= 0.0) {
                return Err(Error::invalid("tol must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn rbf_params(&self) -> RbfParams {
        RbfParams {
            c: self.rbf_c,
            gamma: self.gamma,
            anchor_seed: self.seed,
        }
    }

    pub fn cluster_config(&self, algorithm: ClusterAlgorithm) -> ClusterConfig {
        ClusterConfig {
            algorithm,
            k: self.k,
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Regression for one response variable together with its column manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub response: Response,
    pub columns: Vec<Column>,
    pub fit: RegressionFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub plan: FeaturePlan,
    pub responses: Vec<ResponseModel>,
}

impl FittedModel {
    pub fn response(&self, r: Response) -> Option<&ResponseModel> {
        self.responses.iter().find(|m| m.response == r)
    }

    /// Checks the manifest against the plan and the coefficient lengths.
    pub fn validate(&self) -> Result<()> {
        if self.plan.hosts.is_empty() {
            return Err(Error::Schema("model has an empty host list".into()));
        }
        if self.plan.kind != self.kind {
            return Err(Error::Schema("feature plan kind disagrees with model kind".into()));
        }
        for r in Response::ALL {
            let m = self
                .response(r)
                .ok_or_else(|| Error::Schema(format!("missing {} regression", r.name())))?;
            if m.columns != self.plan.columns(r) {
                return Err(Error::Schema(format!(
                    "{} column manifest does not match the feature plan",
                    r.name()
                )));
            }
            if m.fit.coefficients.len() != m.columns.len() {
                return Err(Error::Schema(format!(
                    "{} has {} coefficients for {} columns",
                    r.name(),
                    m.fit.coefficients.len(),
                    m.columns.len()
                )));
            }
        }
        Ok(())
    }
}

/// Clustering (if any), resolved plan, and one design matrix per response.
pub(crate) struct Prepared {
    pub plan: FeaturePlan,
    pub trend: Option<TrendFit>,
    pub matrices: Vec<FeatureMatrix>,
}

pub(crate) fn prepare(ds: &Dataset, kind: ModelKind, hp: &Hyperparameters) -> Result<Prepared> {
    hp.validate(kind)?;
    if !ds.has_targets() {
        return Err(Error::invalid("training data must be non-empty and carry targets"));
    }
    let trend = match kind.trend_algorithm() {
        Some(algorithm) => Some(fit_trends(
            &visit_deltas(ds.pages()),
            &hp.cluster_config(algorithm),
        )?),
        None => None,
    };
    let plan = FeaturePlan::new(
        ds,
        kind,
        Some(hp.rbf_params()),
        trend.as_ref().map(|t| t.model.clone()),
    )?;
    let matrices = if kind.per_response() {
        Response::ALL
            .par_iter()
            .map(|&r| plan.build(ds, r))
            .collect::<Result<Vec<_>>>()?
    } else {
        let shared = plan.build(ds, Response::Visits)?;
        Response::ALL
            .iter()
            .map(|&r| FeatureMatrix {
                response: r,
                ..shared.clone()
            })
            .collect()
    };
    Ok(Prepared {
        plan,
        trend,
        matrices,
    })
}

/// Scores every response at every lambda; `out[r][l]`.
pub(crate) fn score_responses(
    ds: &Dataset,
    prepared: &Prepared,
    lambdas: &[f64],
) -> Result<Vec<Vec<SystemScores>>> {
    if !prepared.plan.kind.per_response() {
        // One design for all responses: decompose it once.
        let targets = prepared
            .matrices
            .iter()
            .map(|fm| ds.targets(fm.response))
            .collect::<Result<Vec<_>>>()?;
        let ys: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
        return regression::score_paths(&prepared.matrices[0].values, &ys, lambdas);
    }
    prepared
        .matrices
        .par_iter()
        .map(|fm| regression::score_path(&fm.values, &ds.targets(fm.response)?, lambdas))
        .collect()
}

/// Clustering then one regression per response, all on the full dataset.
pub fn train(ds: &Dataset, kind: ModelKind, hp: &Hyperparameters) -> Result<FittedModel> {
    let prepared = prepare(ds, kind, hp)?;
    let scores = score_responses(ds, &prepared, &[hp.lambda])?;
    let responses = prepared
        .matrices
        .iter()
        .zip(scores)
        .map(|(fm, mut s)| ResponseModel {
            response: fm.response,
            columns: fm.columns.clone(),
            fit: s.remove(0).fit,
        })
        .collect();
    Ok(FittedModel {
        schema_version: SCHEMA_VERSION,
        kind,
        hyperparameters: hp.clone(),
        plan: prepared.plan,
        responses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub page_id: String,
    pub visits_log: f64,
    pub visits: f64,
    pub likes_log: f64,
    pub likes: f64,
    pub mentions_log: f64,
    pub mentions: f64,
}

pub fn predict(model: &FittedModel, ds: &Dataset) -> Result<Vec<PredictionRow>> {
    model.validate()?;
    if ds.window_count() != model.plan.window_count {
        return Err(Error::LengthMismatch {
            expected: model.plan.window_count,
            found: ds.window_count(),
        });
    }
    let mut per_response = Vec::with_capacity(3);
    for r in Response::ALL {
        let m = model.response(r).expect("validated");
        let fm = model.plan.build(ds, r)?;
        per_response.push(regression::predict(&m.fit, &fm.values)?);
    }
    Ok(ds
        .pages()
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRow {
            page_id: p.page_id.clone(),
            visits_log: per_response[0].log[i],
            visits: per_response[0].raw[i],
            likes_log: per_response[1].log[i],
            likes: per_response[1].raw[i],
            mentions_log: per_response[2].log[i],
            mentions: per_response[2].raw[i],
        })
        .collect())
}

pub fn write_predictions<W: Write>(rows: &[PredictionRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record([
        "page_id",
        "visits_log",
        "visits",
        "likes_log",
        "likes",
        "mentions_log",
        "mentions",
    ])?;
    for r in rows {
        w.write_record([
            r.page_id.clone(),
            r.visits_log.to_string(),
            r.visits.to_string(),
            r.likes_log.to_string(),
            r.likes.to_string(),
            r.mentions_log.to_string(),
            r.mentions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseReport {
    pub response: Response,
    /// In-sample log-RMSE.
    pub rmse_log: f64,
    pub rmse_loocv: f64,
    /// `None` when `trace(H) >= n`.
    pub rmse_gcv: Option<f64>,
    pub loocv_excluded: usize,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    /// Nominal column count.
    pub p: usize,
    /// Effective rank used for AIC/BIC.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringDiagnostics {
    pub algorithm: ClusterAlgorithm,
    pub k: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub responses: Vec<ResponseReport>,
    pub clustering: Option<ClusteringDiagnostics>,
}

impl EvalReport {
    pub fn response(&self, r: Response) -> &ResponseReport {
        self.responses
            .iter()
            .find(|x| x.response == r)
            .expect("reports cover every response")
    }
}

pub(crate) fn response_report(response: Response, p: usize, s: &SystemScores) -> ResponseReport {
    let (aic, bic) = information_criteria(s.fit.rss, s.fit.n, s.fit.rank);
    ResponseReport {
        response,
        rmse_log: s.rmse,
        rmse_loocv: s.loocv.rmse,
        rmse_gcv: s.gcv,
        loocv_excluded: s.loocv.excluded,
        aic,
        bic,
        n: s.fit.n,
        p,
        rank: s.fit.rank,
    }
}

pub(crate) fn diagnostics(trend: &Option<TrendFit>) -> Option<ClusteringDiagnostics> {
    trend.as_ref().map(|t| ClusteringDiagnostics {
        algorithm: t.model.algorithm,
        k: t.model.k,
        objective: t.model.objective,
        iterations: t.model.iterations,
        converged: t.model.converged,
    })
}

/// Trains once on the full dataset and reports in-sample, LOOCV and GCV
/// log-RMSE plus AIC/BIC per response.
pub fn evaluate(ds: &Dataset, kind: ModelKind, hp: &Hyperparameters) -> Result<EvalReport> {
    let prepared = prepare(ds, kind, hp)?;
    let scores = score_responses(ds, &prepared, &[hp.lambda])?;
    let responses = prepared
        .matrices
        .iter()
        .zip(&scores)
        .map(|(fm, s)| response_report(fm.response, fm.columns.len(), &s[0]))
        .collect();
    Ok(EvalReport {
        kind,
        hyperparameters: hp.clone(),
        responses,
        clustering: diagnostics(&prepared.trend),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic, PageRecord, SyntheticSpec, TargetCoefficients, Targets, ValidationMode,
    };

    fn data(seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_hosts: 2,
            pages_per_host: 200,
            noise: 0.3,
            target_noise: 0.1,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn sh_identity_when_targets_equal_first_hour() {
        let ds = data(1);
        let pages: Vec<PageRecord> = ds
            .pages()
            .iter()
            .map(|p| {
                let v = p.visits.last();
                PageRecord {
                    targets: Some(Targets {
                        visits: v,
                        likes: p.likes.last(),
                        mentions: p.mentions.last(),
                    }),
                    ..p.clone()
                }
            })
            .collect();
        let ds = Dataset::new(pages, ValidationMode::Strict).unwrap();
        let m = train(&ds, ModelKind::Sh, &Hyperparameters::default()).unwrap();
        for r in &m.responses {
            assert!((r.fit.coefficients[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_trend_coefficient_length() {
        let ds = data(2);
        let hp = Hyperparameters {
            k: 3,
            ..Hyperparameters::default()
        };
        let m = train(&ds, ModelKind::MixedTrendKsc, &hp).unwrap();
        for r in &m.responses {
            assert_eq!(r.fit.coefficients.len(), 216 + 31 + 2 + 3);
        }
        m.validate().unwrap();
    }

    #[test]
    fn exact_fit_predicts_training_targets() {
        let spec = SyntheticSpec {
            n_hosts: 2,
            pages_per_host: 200,
            shapes: vec![crate::dataset::TrendShape::Decay],
            trend_offsets: vec![0.0],
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap().dataset;
        let report = evaluate(&ds, ModelKind::Mixed, &Hyperparameters::default()).unwrap();
        for r in &report.responses {
            assert!(r.rmse_loocv < 1e-6, "{:?}: {}", r.response, r.rmse_loocv);
        }
        let m = train(&ds, ModelKind::Mixed, &Hyperparameters::default()).unwrap();
        let preds = predict(&m, &ds).unwrap();
        for (row, p) in preds.iter().zip(ds.pages()) {
            let t = p.targets.unwrap();
            assert!((row.visits_log - t.visits.ln_1p()).abs() < 1e-6);
            assert!(row.visits >= 0.0 && row.likes >= 0.0 && row.mentions >= 0.0);
        }
    }

    #[test]
    fn offsets_only_targets_need_trends() {
        let spec = SyntheticSpec {
            n_hosts: 2,
            pages_per_host: 300,
            coefficients: TargetCoefficients::ZERO,
            trend_offsets: vec![0.0, 1.0, 2.0],
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap().dataset;
        let hp = Hyperparameters {
            k: 3,
            ..Hyperparameters::default()
        };
        let with = evaluate(&ds, ModelKind::MixedTrendKsc, &hp).unwrap();
        assert!(with.response(Response::Visits).rmse_loocv < 1e-6);
    }

    #[test]
    fn missing_targets_rejected() {
        let ds = data(3);
        let pages: Vec<PageRecord> = ds
            .pages()
            .iter()
            .map(|p| PageRecord {
                targets: None,
                ..p.clone()
            })
            .collect();
        let ds = Dataset::new(pages, ValidationMode::Strict).unwrap();
        assert!(train(&ds, ModelKind::Sh, &Hyperparameters::default()).is_err());
    }

    #[test]
    fn unseen_host_is_an_error() {
        let ds = data(4);
        let m = train(&ds, ModelKind::Mixed, &Hyperparameters::default()).unwrap();
        let mut p = ds.pages()[0].clone();
        p.host = "newcomer".into();
        let other = Dataset::new(vec![p], ValidationMode::Strict).unwrap();
        match predict(&m, &other) {
            Err(Error::UnknownHost(h)) => assert_eq!(h, "newcomer"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn information_criteria_use_rank() {
        let ds = data(5);
        let report = evaluate(&ds, ModelKind::Mixed, &Hyperparameters::default()).unwrap();
        let r = report.response(Response::Visits);
        assert!(r.rank < r.p);
        let rss = r.rmse_log.powi(2) * r.n as f64;
        let (aic, _) = information_criteria(rss, r.n, r.rank);
        assert!((aic - r.aic).abs() < 1e-6 * aic.abs());
    }
}
