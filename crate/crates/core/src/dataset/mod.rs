//! Page records, the canonical CSV format, and the synthetic generator.

mod csv_io;
mod split;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{first_monotonicity_violation, CumulativeSeries};

pub use csv_io::{parse_csv, write_csv, write_labels, CSV_WINDOWS};
pub use split::holdout_split;
pub use synthetic::{
    generate_synthetic, LogLinearWeights, SyntheticData, SyntheticSpec, TargetCoefficients,
    TrendShape,
};

/// Number of observation windows covering the reference time.
pub const WINDOW_COUNT: usize = 12;
/// Width of one observation window, in minutes.
pub const WINDOW_MINUTES: u32 = 5;

/// How validation failures on count series are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    #[default]
    Strict,
    Lenient,
}

/// The three predicted engagement metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Visits,
    Likes,
    Mentions,
}

impl Response {
    pub const ALL: [Response; 3] = [Response::Visits, Response::Likes, Response::Mentions];

    pub fn name(self) -> &'static str {
        match self {
            Response::Visits => "visits",
            Response::Likes => "likes",
            Response::Mentions => "mentions",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            Response::Visits => Metric::Visits,
            Response::Likes => Metric::Likes,
            Response::Mentions => Metric::Mentions,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "visits" => Ok(Response::Visits),
            "likes" => Ok(Response::Likes),
            "mentions" => Ok(Response::Mentions),
            other => Err(Error::invalid(format!("unknown response {other}"))),
        }
    }
}

/// The four first-hour series carried by every page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Visits,
    Likes,
    Mentions,
    ActiveTime,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Visits,
        Metric::Likes,
        Metric::Mentions,
        Metric::ActiveTime,
    ];

    /// Single-letter column prefix used in CSV headers and feature names.
    pub fn prefix(self) -> char {
        match self {
            Metric::Visits => 'v',
            Metric::Likes => 'f',
            Metric::Mentions => 'm',
            Metric::ActiveTime => 'a',
        }
    }
}

/// Engagement at the target time (48 hours).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub visits: f64,
    pub likes: f64,
    pub mentions: f64,
}

impl Targets {
    pub fn get(&self, r: Response) -> f64 {
        match r {
            Response::Visits => self.visits,
            Response::Likes => self.likes,
            Response::Mentions => self.mentions,
        }
    }
}

/// One web page with its first-hour measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub page_id: String,
    pub host: String,
    /// 0 = Monday.
    pub weekday: u8,
    pub hour: u8,
    pub visits: CumulativeSeries,
    pub likes: CumulativeSeries,
    pub mentions: CumulativeSeries,
    /// Average seconds on page per window; not cumulative.
    pub active_time: Vec<f64>,
    pub targets: Option<Targets>,
}

impl PageRecord {
    pub fn series(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Visits => self.visits.values(),
            Metric::Likes => self.likes.values(),
            Metric::Mentions => self.mentions.values(),
            Metric::ActiveTime => &self.active_time,
        }
    }

    /// Checks field ranges and series shapes. Count-series monotonicity
    /// failures are errors in strict mode and warnings in lenient mode.
    pub fn validate(&self, window_count: usize, mode: ValidationMode) -> Result<()> {
        let fail = |column: String, message: String| Error::Validation {
            page_id: self.page_id.clone(),
            column,
            message,
        };
        if self.weekday > 6 {
            return Err(fail("weekday".into(), format!("{} not in 0..=6", self.weekday)));
        }
        if self.hour > 23 {
            return Err(fail("hour".into(), format!("{} not in 0..=23", self.hour)));
        }
        for metric in Metric::ALL {
            let s = self.series(metric);
            if s.len() != window_count {
                return Err(fail(
                    metric.prefix().to_string(),
                    format!("expected {window_count} windows, found {}", s.len()),
                ));
            }
            if let Some(i) = s.iter().position(|x| !x.is_finite()) {
                return Err(fail(window_column(metric, i), "non-finite value".into()));
            }
        }
        if let Some(i) = self.active_time.iter().position(|&x| x < 0.0) {
            return Err(fail(
                window_column(Metric::ActiveTime, i),
                "negative active time".into(),
            ));
        }
        for metric in [Metric::Visits, Metric::Likes, Metric::Mentions] {
            if let Some(i) = first_monotonicity_violation(self.series(metric)) {
                let column = window_column(metric, i);
                let message = "cumulative count is negative or decreasing".to_string();
                match mode {
                    ValidationMode::Strict => return Err(fail(column, message)),
                    ValidationMode::Lenient => {
                        log::warn!("page {}: column {column}: {message}", self.page_id)
                    }
                }
            }
        }
        if let Some(t) = &self.targets {
            for r in Response::ALL {
                let v = t.get(r);
                if !v.is_finite() || v < 0.0 {
                    return Err(fail(
                        format!("{}_48h", r.name()),
                        format!("target {v} must be a non-negative number"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// CSV column name for a metric window, 0-based index.
pub fn window_column(metric: Metric, index: usize) -> String {
    format!("{}{:02}", metric.prefix(), index + 1)
}

/// An immutable, validated collection of pages.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pages: Vec<PageRecord>,
    hosts: Vec<String>,
    window_count: usize,
    window_minutes: u32,
}

impl Dataset {
    pub fn new(pages: Vec<PageRecord>, mode: ValidationMode) -> Result<Self> {
        Self::with_geometry(pages, WINDOW_COUNT, WINDOW_MINUTES, mode)
    }

    pub fn with_geometry(
        pages: Vec<PageRecord>,
        window_count: usize,
        window_minutes: u32,
        mode: ValidationMode,
    ) -> Result<Self> {
        if window_count == 0 {
            return Err(Error::invalid("window count must be positive"));
        }
        let mut ids = HashSet::with_capacity(pages.len());
        let mut seen_hosts = HashSet::new();
        let mut hosts = Vec::new();
        for p in &pages {
            p.validate(window_count, mode)?;
            if !ids.insert(p.page_id.as_str()) {
                return Err(Error::DuplicatePageId(p.page_id.clone()));
            }
            if seen_hosts.insert(p.host.as_str()) {
                hosts.push(p.host.clone());
            }
        }
        Ok(Dataset {
            pages,
            hosts,
            window_count,
            window_minutes,
        })
    }

    pub fn pages(&self) -> &[PageRecord] {
        &self.pages
    }

    /// Distinct hosts in order of first appearance.
    pub fn hosts(&self) -> &[String] {
        &self.hosts
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn window_minutes(&self) -> u32 {
        self.window_minutes
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn has_targets(&self) -> bool {
        !self.pages.is_empty() && self.pages.iter().all(|p| p.targets.is_some())
    }

    /// Raw target values for one response, or an error naming the first
    /// page without targets.
    pub fn targets(&self, response: Response) -> Result<Vec<f64>> {
        self.pages
            .iter()
            .map(|p| {
                p.targets.map(|t| t.get(response)).ok_or_else(|| Error::Validation {
                    page_id: p.page_id.clone(),
                    column: format!("{}_48h", response.name()),
                    message: "targets are required".into(),
                })
            })
            .collect()
    }

    /// New dataset with the pages at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pages: Vec<PageRecord> = indices.iter().map(|&i| self.pages[i].clone()).collect();
        let mut seen = HashSet::new();
        let hosts = pages
            .iter()
            .filter(|p| seen.insert(p.host.clone()))
            .map(|p| p.host.clone())
            .collect();
        Dataset {
            pages,
            hosts,
            window_count: self.window_count,
            window_minutes: self.window_minutes,
        }
    }
}
