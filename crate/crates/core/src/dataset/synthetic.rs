//! Seeded synthetic page generator.
//!
//! Each page follows one of `k_true` delta-series shapes scaled by a
//! log-normal first-hour volume. Targets are log-linear in the first-hour
//! totals plus a per-trend offset, so the Mixed feature set is correctly
//! specified up to that offset.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::dataset::{Dataset, PageRecord, Targets, ValidationMode, WINDOW_COUNT};
use crate::error::{Error, Result};
use crate::transforms::{cumulative_sum, CumulativeSeries};

/// Shape of the per-window visit gains for one trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrendShape {
    /// Geometric decay from the first window.
    Decay,
    /// Small baseline plus a spike at a 0-based window index.
    Burst { window: usize },
    /// Gains growing linearly with the window index.
    LinearGrowth,
}

impl TrendShape {
    /// Window weights summing to one.
    pub fn profile(&self, windows: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..windows)
            .map(|j| match *self {
                TrendShape::Decay => (-0.4 * j as f64).exp(),
                TrendShape::Burst { window } => 0.05 + if j == window { 1.0 } else { 0.0 },
                TrendShape::LinearGrowth => (j + 1) as f64,
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Text form: `decay`, `linear`, or `burst:N` with N the 1-based window.
impl FromStr for TrendShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "decay" => Ok(TrendShape::Decay),
            "linear" => Ok(TrendShape::LinearGrowth),
            other => {
                let n = other
                    .strip_prefix("burst:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown trend shape {other:?}")))?;
                Ok(TrendShape::Burst { window: n - 1 })
            }
        }
    }
}

impl fmt::Display for TrendShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrendShape::Decay => write!(f, "decay"),
            TrendShape::LinearGrowth => write!(f, "linear"),
            TrendShape::Burst { window } => write!(f, "burst:{}", window + 1),
        }
    }
}

/// Weights on `ln(1 + x)` of the first-hour totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearWeights {
    pub intercept: f64,
    pub visits: f64,
    pub likes: f64,
    pub mentions: f64,
    pub active_time: f64,
}

impl LogLinearWeights {
    pub const ZERO: LogLinearWeights = LogLinearWeights {
        intercept: 0.0,
        visits: 0.0,
        likes: 0.0,
        mentions: 0.0,
        active_time: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetCoefficients {
    pub visits: LogLinearWeights,
    pub likes: LogLinearWeights,
    pub mentions: LogLinearWeights,
}

impl TargetCoefficients {
    pub const ZERO: TargetCoefficients = TargetCoefficients {
        visits: LogLinearWeights::ZERO,
        likes: LogLinearWeights::ZERO,
        mentions: LogLinearWeights::ZERO,
    };
}

impl Default for TargetCoefficients {
    fn default() -> Self {
        TargetCoefficients {
            visits: LogLinearWeights {
                intercept: 0.8,
                visits: 1.05,
                likes: 0.10,
                mentions: 0.05,
                active_time: 0.02,
            },
            likes: LogLinearWeights {
                intercept: 0.3,
                visits: 0.15,
                likes: 0.95,
                mentions: 0.10,
                active_time: 0.0,
            },
            mentions: LogLinearWeights {
                intercept: 0.2,
                visits: 0.10,
                likes: 0.05,
                mentions: 0.90,
                active_time: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_hosts: usize,
    pub pages_per_host: usize,
    /// One shape per true trend; `k_true = shapes.len()`.
    pub shapes: Vec<TrendShape>,
    /// Log-offset added to every response for pages of each trend.
    pub trend_offsets: Vec<f64>,
    /// Log-normal parameters of the first-hour visit total.
    pub scale_mu: f64,
    pub scale_sigma: f64,
    /// Standard deviation of the multiplicative log-normal jitter applied
    /// to each window gain.
    pub noise: f64,
    /// Standard deviation of the Gaussian noise on log targets.
    pub target_noise: f64,
    pub coefficients: TargetCoefficients,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_hosts: 4,
            pages_per_host: 100,
            shapes: vec![
                TrendShape::Decay,
                TrendShape::Burst { window: 5 },
                TrendShape::LinearGrowth,
            ],
            trend_offsets: vec![0.0, 0.5, 1.0],
            scale_mu: 5.0,
            scale_sigma: 1.0,
            noise: 0.0,
            target_noise: 0.0,
            coefficients: TargetCoefficients::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn k_true(&self) -> usize {
        self.shapes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hosts == 0 || self.pages_per_host == 0 {
            return Err(Error::invalid("host and page counts must be at least 1"));
        }
        if self.shapes.is_empty() {
            return Err(Error::invalid("at least one trend shape is required"));
        }
        if self.trend_offsets.len() != self.shapes.len() {
            return Err(Error::invalid(format!(
                "{} trend offsets given for {} shapes",
                self.trend_offsets.len(),
                self.shapes.len()
            )));
        }
        for s in &self.shapes {
            if let TrendShape::Burst { window } = s {
                if *window >= WINDOW_COUNT {
                    return Err(Error::invalid(format!("burst window {} out of range", window + 1)));
                }
            }
        }
        let finite = [self.scale_mu, self.scale_sigma, self.noise, self.target_noise];
        if finite.iter().any(|x| !x.is_finite())
            || self.scale_sigma < 0.0
            || self.noise < 0.0
            || self.target_noise < 0.0
        {
            return Err(Error::invalid("scale and noise parameters must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Generated dataset plus the true trend index of every page.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub labels: Vec<usize>,
}

fn log_linear(w: &LogLinearWeights, v: f64, f: f64, m: f64, a: f64) -> f64 {
    w.intercept
        + w.visits * v.ln_1p()
        + w.likes * f.ln_1p()
        + w.mentions * m.ln_1p()
        + w.active_time * a.ln_1p()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let w = WINDOW_COUNT;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let scale = LogNormal::new(spec.scale_mu, spec.scale_sigma)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let like_ratio = LogNormal::new((0.05f64).ln(), 0.5).expect("valid log-normal");
    let mention_ratio = LogNormal::new((0.02f64).ln(), 0.5).expect("valid log-normal");
    let dwell = LogNormal::new((40f64).ln(), 0.3).expect("valid log-normal");
    let profiles: Vec<Vec<f64>> = spec.shapes.iter().map(|s| s.profile(w)).collect();

    let n = spec.n_hosts * spec.pages_per_host;
    let mut pages = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for h in 0..spec.n_hosts {
        for _ in 0..spec.pages_per_host {
            let trend = rng.random_range(0..spec.k_true());
            let weekday = rng.random_range(0..7u8);
            let hour = rng.random_range(0..24u8);
            let total = scale.sample(&mut rng);
            // Draws happen regardless of the noise level so that pages only
            // differ by their jitter across noise settings.
            let deltas: Vec<f64> = profiles[trend]
                .iter()
                .map(|&p| total * p * (spec.noise * unit.sample(&mut rng)).exp())
                .collect();
            let visits = cumulative_sum(&deltas);
            let rf = like_ratio.sample(&mut rng);
            let rm = mention_ratio.sample(&mut rng);
            let likes: Vec<f64> = visits.iter().map(|v| v * rf).collect();
            let mentions: Vec<f64> = visits.iter().map(|v| v * rm).collect();
            let base_dwell = dwell.sample(&mut rng);
            let active_time: Vec<f64> = (0..w)
                .map(|_| base_dwell * (spec.noise * 0.2 * unit.sample(&mut rng)).exp())
                .collect();

            let (v1h, f1h, m1h, a1h) = (visits[w - 1], likes[w - 1], mentions[w - 1], active_time[w - 1]);
            let offset = spec.trend_offsets[trend];
            let c = &spec.coefficients;
            let mut target = |weights: &LogLinearWeights| {
                let eps = spec.target_noise * unit.sample(&mut rng);
                (log_linear(weights, v1h, f1h, m1h, a1h) + offset + eps).exp_m1().max(0.0)
            };
            let targets = Targets {
                visits: target(&c.visits),
                likes: target(&c.likes),
                mentions: target(&c.mentions),
            };

            let index = pages.len();
            pages.push(PageRecord {
                page_id: format!("p{index:06}"),
                host: format!("host{h:03}"),
                weekday,
                hour,
                visits: CumulativeSeries::from_raw(visits),
                likes: CumulativeSeries::from_raw(likes),
                mentions: CumulativeSeries::from_raw(mentions),
                active_time,
                targets: Some(targets),
            });
            labels.push(trend);
        }
    }
    let dataset = Dataset::new(pages, ValidationMode::Strict)?;
    Ok(SyntheticData { dataset, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::to_delta;

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticSpec {
            shapes: vec![TrendShape::Decay],
            trend_offsets: vec![0.0],
            seed: 11,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.dataset, other.dataset);
    }

    #[test]
    fn burst_means_peak_at_configured_windows() {
        let windows = [1usize, 5, 9];
        let spec = SyntheticSpec {
            shapes: windows.iter().map(|&window| TrendShape::Burst { window }).collect(),
            trend_offsets: vec![0.0; 3],
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for (trend, &expected) in windows.iter().enumerate() {
            let mut mean = [0.0; WINDOW_COUNT];
            let mut count = 0.0;
            for (p, &l) in data.dataset.pages().iter().zip(&data.labels) {
                if l == trend {
                    for (m, d) in mean.iter_mut().zip(to_delta(p.visits.values())) {
                        *m += d;
                    }
                    count += 1.0;
                }
            }
            assert!(count > 0.0);
            let peak = (0..WINDOW_COUNT)
                .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
                .unwrap();
            assert_eq!(peak, expected);
        }
    }

    #[test]
    fn offsets_only_targets_are_closed_form() {
        let spec = SyntheticSpec {
            coefficients: TargetCoefficients::ZERO,
            trend_offsets: vec![0.0, 2f64.ln(), 3f64.ln()],
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for (p, &l) in data.dataset.pages().iter().zip(&data.labels) {
            let t = p.targets.unwrap();
            let expected = l as f64;
            for v in [t.visits, t.likes, t.mentions] {
                assert!((v - expected).abs() < 1e-12, "trend {l}: {v}");
            }
        }
    }

    #[test]
    fn shape_text_round_trip() {
        for s in ["decay", "linear", "burst:3"] {
            assert_eq!(s.parse::<TrendShape>().unwrap().to_string(), s);
        }
        assert!("burst:0".parse::<TrendShape>().is_err());
        assert!("spike".parse::<TrendShape>().is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec {
            trend_offsets: vec![0.0],
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec {
            n_hosts: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }
}
