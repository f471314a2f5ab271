use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::{Dataset, Metric, Response};
use crate::error::{Error, Result};
use crate::regression;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub name: String,
    pub rho: f64,
}

/// Per-host single-feature slope of `ln(1 + v_48h)` on `ln(1 + v_1h)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostSlope {
    pub host: String,
    pub pages: usize,
    pub theta: f64,
}

/// `(x, y)` pairs in `ln(1 + value)` space for one scatter plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterSeries {
    pub name: String,
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
}

impl ScatterSeries {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        w.write_record(["x", "y"])?;
        for (x, y) in &self.points {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Characterization {
    pub pages: usize,
    pub correlations: Vec<Correlation>,
    pub host_slopes: Vec<HostSlope>,
    pub scatter: Vec<ScatterSeries>,
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Log-space correlations between first-hour and 48-hour engagement, and
/// between metrics at the reference time, plus per-host SH slopes.
pub fn characterize(ds: &Dataset) -> Result<Characterization> {
    if ds.len() < 3 {
        return Err(Error::invalid(format!(
            "correlations need at least 3 pages, found {}",
            ds.len()
        )));
    }
    let w = ds.window_count();
    let at = |metric: Metric, window: usize| -> Vec<f64> {
        ds.pages()
            .iter()
            .map(|p| p.series(metric)[window].max(0.0).ln_1p())
            .collect()
    };
    let mut scatter = Vec::new();
    for r in Response::ALL {
        let target: Vec<f64> = ds.targets(r)?.iter().map(|v| v.ln_1p()).collect();
        for (label, window) in [("1h", w - 1), ("5min", 0)] {
            let x = at(r.metric(), window);
            scatter.push(ScatterSeries {
                name: format!("{}_{label}_vs_48h", r.name()),
                points: x.into_iter().zip(target.iter().copied()).collect(),
            });
        }
    }
    for (a, b) in [
        (Response::Visits, Response::Likes),
        (Response::Visits, Response::Mentions),
        (Response::Likes, Response::Mentions),
    ] {
        let x = at(a.metric(), w - 1);
        let y = at(b.metric(), w - 1);
        scatter.push(ScatterSeries {
            name: format!("{}_vs_{}_1h", a.name(), b.name()),
            points: x.into_iter().zip(y).collect(),
        });
    }
    let correlations = scatter
        .iter()
        .map(|s| {
            let (x, y): (Vec<f64>, Vec<f64>) = s.points.iter().copied().unzip();
            Correlation {
                name: s.name.clone(),
                rho: pearson(&x, &y),
            }
        })
        .collect();

    let mut host_slopes = Vec::new();
    for host in ds.hosts() {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| &ds.pages()[i].host == host).collect();
        let x = DMatrix::from_iterator(
            idx.len(),
            1,
            idx.iter().map(|&i| ds.pages()[i].visits.last().max(0.0).ln_1p()),
        );
        let y: Vec<f64> = idx
            .iter()
            .map(|&i| ds.pages()[i].targets.map(|t| t.visits).unwrap_or(0.0))
            .collect();
        let fit = regression::fit(&x, &y, 0.0)?;
        host_slopes.push(HostSlope {
            host: host.clone(),
            pages: idx.len(),
            theta: fit.coefficients[0],
        });
    }
    Ok(Characterization {
        pages: ds.len(),
        correlations,
        host_slopes,
        scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, LogLinearWeights, SyntheticSpec, TargetCoefficients};

    #[test]
    fn self_correlation_is_one() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert!((pearson(&x, &x) - 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_nan());
    }

    #[test]
    fn exact_function_of_first_hour_visits() {
        let w = LogLinearWeights {
            visits: 1.3,
            ..LogLinearWeights::ZERO
        };
        let spec = SyntheticSpec {
            coefficients: TargetCoefficients {
                visits: w,
                likes: w,
                mentions: w,
            },
            trend_offsets: vec![0.0; 3],
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap().dataset;
        let c = characterize(&ds).unwrap();
        let rho = c
            .correlations
            .iter()
            .find(|c| c.name == "visits_1h_vs_48h")
            .unwrap()
            .rho;
        assert!((rho - 1.0).abs() < 1e-12);
        for s in &c.host_slopes {
            assert!((s.theta - 1.3).abs() < 1e-10);
        }
        assert_eq!(c.scatter.len(), 9);
    }

    #[test]
    fn too_few_pages() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_hosts: 1,
            pages_per_host: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .dataset;
        assert!(characterize(&ds).is_err());
    }
}
