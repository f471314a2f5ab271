//! Feature matrices for the six model families.
//!
//! Count- and time-derived columns are built from raw values (products for
//! squares, cubes and cross terms) and only then passed through
//! `ln(1 + x)`. Indicator, RBF and trend-distance columns are used as-is.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Metric, PageRecord, Response, WINDOW_COUNT};
use crate::error::{Error, Result};
use crate::trend_clustering::{ClusterAlgorithm, TrendModel};

/// Model families, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "sh")]
    Sh,
    #[serde(rename = "ml")]
    Ml,
    #[serde(rename = "rbf")]
    Rbf,
    #[serde(rename = "news")]
    News,
    #[serde(rename = "mixed")]
    Mixed,
    #[serde(rename = "mixed-trend-kmeans")]
    MixedTrendKMeans,
    #[serde(rename = "mixed-trend-ksc")]
    MixedTrendKsc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Sh,
        ModelKind::Ml,
        ModelKind::Rbf,
        ModelKind::News,
        ModelKind::Mixed,
        ModelKind::MixedTrendKMeans,
        ModelKind::MixedTrendKsc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sh => "sh",
            ModelKind::Ml => "ml",
            ModelKind::Rbf => "rbf",
            ModelKind::News => "news",
            ModelKind::Mixed => "mixed",
            ModelKind::MixedTrendKMeans => "mixed-trend-kmeans",
            ModelKind::MixedTrendKsc => "mixed-trend-ksc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s}")))
    }

    /// Clustering algorithm behind the trend-distance columns, if any.
    pub fn trend_algorithm(self) -> Option<ClusterAlgorithm> {
        match self {
            ModelKind::MixedTrendKMeans => Some(ClusterAlgorithm::KMeans),
            ModelKind::MixedTrendKsc => Some(ClusterAlgorithm::Ksc),
            _ => None,
        }
    }

    /// Whether the feature set depends on which response is modelled.
    pub fn per_response(self) -> bool {
        matches!(self, ModelKind::Sh | ModelKind::Ml | ModelKind::Rbf)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column count of a model family; `k` and `rbf_c` are ignored by
/// families that do not use them.
pub fn feature_count(kind: ModelKind, n_hosts: usize, k: usize, rbf_c: usize) -> usize {
    feature_count_for_windows(kind, n_hosts, k, rbf_c, WINDOW_COUNT)
}

fn feature_count_for_windows(kind: ModelKind, n_hosts: usize, k: usize, rbf_c: usize, w: usize) -> usize {
    let mixed = 18 * w + 7 + 24 + n_hosts;
    match kind {
        ModelKind::Sh => 1,
        ModelKind::Ml => w,
        ModelKind::Rbf => w + rbf_c,
        ModelKind::News => 6,
        ModelKind::Mixed => mixed,
        ModelKind::MixedTrendKMeans | ModelKind::MixedTrendKsc => mixed + k,
    }
}

/// Power or interaction applied to a raw series value before the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Linear,
    Square,
    Cube,
    Cross(Metric),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorBlock {
    Weekday,
    Hour,
    Host,
}

/// What one feature column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnDef {
    /// `ln(1 + term(metric[window]))`, 0-based window.
    Series {
        metric: Metric,
        window: usize,
        term: Term,
    },
    Indicator { block: IndicatorBlock, level: String },
    /// Gaussian kernel similarity to an anchor page.
    Rbf { anchor: usize },
    /// Distance to a trend centroid.
    Trend { index: usize },
}

impl ColumnDef {
    /// Name of the contiguous block this column belongs to.
    pub fn block(&self) -> String {
        match self {
            ColumnDef::Series { metric, term, .. } => {
                let m = metric.prefix();
                match term {
                    Term::Linear => format!("{m}"),
                    Term::Square => format!("{m}^2"),
                    Term::Cube => format!("{m}^3"),
                    Term::Cross(other) => format!("{m}*{}", other.prefix()),
                }
            }
            ColumnDef::Indicator { block, .. } => match block {
                IndicatorBlock::Weekday => "weekday".into(),
                IndicatorBlock::Hour => "hour".into(),
                IndicatorBlock::Host => "host".into(),
            },
            ColumnDef::Rbf { .. } => "rbf".into(),
            ColumnDef::Trend { .. } => "trend".into(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ColumnDef::Series { window, .. } => format!("{}_{:02}", self.block(), window + 1),
            ColumnDef::Indicator { level, .. } => format!("{}={level}", self.block()),
            ColumnDef::Rbf { anchor } => format!("rbf_{anchor}"),
            ColumnDef::Trend { index } => format!("trend_{index}"),
        }
    }
}

/// A named column of a [`FeatureMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub def: ColumnDef,
}

impl From<ColumnDef> for Column {
    fn from(def: ColumnDef) -> Self {
        Column {
            name: def.name(),
            def,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: ModelKind,
    pub response: Response,
    /// One row per page, in dataset order.
    pub values: DMatrix<f64>,
    pub columns: Vec<Column>,
    /// Host count the layout was built for.
    pub n_hosts: usize,
    pub window_count: usize,
}

impl FeatureMatrix {
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Debug export: `page_id` followed by one column per feature.
    pub fn write_csv<W: Write>(&self, page_ids: &[String], sink: W) -> Result<()> {
        if page_ids.len() != self.values.nrows() {
            return Err(Error::LengthMismatch {
                expected: self.values.nrows(),
                found: page_ids.len(),
            });
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        let mut header = vec!["page_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (i, id) in page_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kernel settings for the RBF family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    pub c: usize,
    pub gamma: f64,
    pub anchor_seed: u64,
}

/// `ln(1 + x)` cumulative series of one anchor page, per response metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPage {
    pub page_id: String,
    pub visits: Vec<f64>,
    pub likes: Vec<f64>,
    pub mentions: Vec<f64>,
}

impl AnchorPage {
    fn series(&self, r: Response) -> &[f64] {
        match r {
            Response::Visits => &self.visits,
            Response::Likes => &self.likes,
            Response::Mentions => &self.mentions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfAnchors {
    pub params: RbfParams,
    pub anchors: Vec<AnchorPage>,
}

/// Everything needed to rebuild a model's features for arbitrary pages:
/// host levels, RBF anchors and the trend model are frozen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePlan {
    pub kind: ModelKind,
    pub window_count: usize,
    pub hosts: Vec<String>,
    pub rbf: Option<RbfAnchors>,
    pub trend: Option<TrendModel>,
}

fn log1p_clamped(x: f64) -> f64 {
    // Negative raw values only occur in leniently loaded data.
    x.max(0.0).ln_1p()
}

fn log1p_vec(s: &[f64]) -> Vec<f64> {
    s.iter().map(|&x| log1p_clamped(x)).collect()
}

const MIXED_METRICS: [Metric; 4] = Metric::ALL;
const CROSS_PAIRS: [(Metric, Metric); 6] = [
    (Metric::Visits, Metric::Likes),
    (Metric::Visits, Metric::Mentions),
    (Metric::Visits, Metric::ActiveTime),
    (Metric::Likes, Metric::Mentions),
    (Metric::Likes, Metric::ActiveTime),
    (Metric::Mentions, Metric::ActiveTime),
];

impl FeaturePlan {
    /// Resolves a plan against training data. RBF needs `rbf`; the
    /// Mixed-Trend families need a trend model of their algorithm.
    pub fn new(
        ds: &Dataset,
        kind: ModelKind,
        rbf: Option<RbfParams>,
        trend: Option<TrendModel>,
    ) -> Result<Self> {
        let rbf = match kind {
            ModelKind::Rbf => {
                let params = rbf.ok_or_else(|| Error::invalid("RBF features need kernel parameters"))?;
                Some(sample_anchors(ds, params)?)
            }
            _ => None,
        };
        let trend = match kind.trend_algorithm() {
            Some(algorithm) => {
                let tm = trend.ok_or_else(|| {
                    Error::invalid(format!("{kind} features need a fitted trend model"))
                })?;
                if tm.algorithm != algorithm {
                    return Err(Error::invalid(format!(
                        "{kind} needs a {} trend model, got {}",
                        algorithm.name(),
                        tm.algorithm.name()
                    )));
                }
                if tm.window_count != ds.window_count() {
                    return Err(Error::LengthMismatch {
                        expected: ds.window_count(),
                        found: tm.window_count,
                    });
                }
                Some(tm)
            }
            None => None,
        };
        Ok(FeaturePlan {
            kind,
            window_count: ds.window_count(),
            hosts: ds.hosts().to_vec(),
            rbf,
            trend,
        })
    }

    pub fn columns(&self, response: Response) -> Vec<Column> {
        let w = self.window_count;
        let series = |metric, window, term| ColumnDef::Series { metric, window, term };
        let mut defs = Vec::new();
        let own = response.metric();
        match self.kind {
            ModelKind::Sh => defs.push(series(own, w - 1, Term::Linear)),
            ModelKind::Ml | ModelKind::Rbf => {
                defs.extend((0..w).map(|i| series(own, i, Term::Linear)));
                if let Some(rbf) = &self.rbf {
                    defs.extend((0..rbf.anchors.len()).map(|anchor| ColumnDef::Rbf { anchor }));
                }
            }
            ModelKind::News => {
                for m in [Metric::Visits, Metric::Likes, Metric::Mentions] {
                    defs.push(series(m, w - 1, Term::Square));
                }
                for (a, b) in [
                    (Metric::Visits, Metric::Likes),
                    (Metric::Visits, Metric::Mentions),
                    (Metric::Likes, Metric::Mentions),
                ] {
                    defs.push(series(a, w - 1, Term::Cross(b)));
                }
            }
            ModelKind::Mixed | ModelKind::MixedTrendKMeans | ModelKind::MixedTrendKsc => {
                for term in [Term::Linear, Term::Square] {
                    for m in MIXED_METRICS {
                        defs.extend((0..w).map(|i| series(m, i, term)));
                    }
                }
                for (a, b) in CROSS_PAIRS {
                    defs.extend((0..w).map(|i| series(a, i, Term::Cross(b))));
                }
                for m in MIXED_METRICS {
                    defs.extend((0..w).map(|i| series(m, i, Term::Cube)));
                }
                let indicator = |block, level: String| ColumnDef::Indicator { block, level };
                defs.extend((0..7).map(|d| indicator(IndicatorBlock::Weekday, d.to_string())));
                defs.extend((0..24).map(|h| indicator(IndicatorBlock::Hour, h.to_string())));
                defs.extend(self.hosts.iter().map(|h| indicator(IndicatorBlock::Host, h.clone())));
                if let Some(tm) = &self.trend {
                    defs.extend((0..tm.k).map(|index| ColumnDef::Trend { index }));
                }
            }
        }
        defs.into_iter().map(Column::from).collect()
    }

    pub fn build(&self, ds: &Dataset, response: Response) -> Result<FeatureMatrix> {
        if ds.window_count() != self.window_count {
            return Err(Error::LengthMismatch {
                expected: self.window_count,
                found: ds.window_count(),
            });
        }
        let columns = self.columns(response);
        let host_index: HashMap<&str, usize> = self
            .hosts
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), i))
            .collect();
        let rows: Vec<Vec<f64>> = ds
            .pages()
            .par_iter()
            .map(|p| self.row(p, response, &columns, &host_index))
            .collect::<Result<_>>()?;
        let p = columns.len();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Ok(FeatureMatrix {
            kind: self.kind,
            response,
            values,
            columns,
            n_hosts: self.hosts.len(),
            window_count: self.window_count,
        })
    }

    fn row(
        &self,
        page: &PageRecord,
        response: Response,
        columns: &[Column],
        host_index: &HashMap<&str, usize>,
    ) -> Result<Vec<f64>> {
        let host_slot = match self.kind {
            ModelKind::Mixed | ModelKind::MixedTrendKMeans | ModelKind::MixedTrendKsc => Some(
                *host_index
                    .get(page.host.as_str())
                    .ok_or_else(|| Error::UnknownHost(page.host.clone()))?,
            ),
            _ => None,
        };
        let trend = match &self.trend {
            Some(tm) => tm.distance_features(page)?,
            None => Vec::new(),
        };
        let own_log = log1p_vec(page.series(response.metric()));
        let mut row = Vec::with_capacity(columns.len());
        for col in columns {
            let v = match &col.def {
                ColumnDef::Series { metric, window, term } => {
                    let x = page.series(*metric)[*window];
                    let raw = match term {
                        Term::Linear => x,
                        Term::Square => x * x,
                        Term::Cube => x * x * x,
                        Term::Cross(other) => x * page.series(*other)[*window],
                    };
                    log1p_clamped(raw)
                }
                ColumnDef::Indicator { block, level } => {
                    let hit = match block {
                        IndicatorBlock::Weekday => page.weekday.to_string() == *level,
                        IndicatorBlock::Hour => page.hour.to_string() == *level,
                        IndicatorBlock::Host => {
                            host_slot.is_some_and(|s| self.hosts[s] == *level)
                        }
                    };
                    if hit { 1.0 } else { 0.0 }
                }
                ColumnDef::Rbf { anchor } => {
                    let rbf = self.rbf.as_ref().expect("rbf columns imply anchors");
                    let a = rbf.anchors[*anchor].series(response);
                    rbf_kernel(&own_log, a, rbf.params.gamma)
                }
                ColumnDef::Trend { index } => trend[*index],
            };
            row.push(v);
        }
        Ok(row)
    }
}

/// `exp(-||x - y||^2 / gamma)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 / gamma).exp()
}

fn sample_anchors(ds: &Dataset, params: RbfParams) -> Result<RbfAnchors> {
    if params.c < 1 {
        return Err(Error::invalid("RBF needs at least one anchor page"));
    }
    if params.c > ds.len() {
        return Err(Error::invalid(format!(
            "RBF anchor count {} exceeds the {} training pages",
            params.c,
            ds.len()
        )));
    }
    if !(params.gamma > 0.0 && params.gamma.is_finite()) {
        return Err(Error::invalid(format!("RBF gamma {} must be positive", params.gamma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.anchor_seed);
    let anchors = index::sample(&mut rng, ds.len(), params.c)
        .into_iter()
        .map(|i| {
            let p = &ds.pages()[i];
            AnchorPage {
                page_id: p.page_id.clone(),
                visits: log1p_vec(p.visits.values()),
                likes: log1p_vec(p.likes.values()),
                mentions: log1p_vec(p.mentions.values()),
            }
        })
        .collect();
    Ok(RbfAnchors { params, anchors })
}

/// Builds the feature matrix of `kind` for `ds`, resolving hosts and
/// anchors from `ds` itself.
pub fn build(
    ds: &Dataset,
    kind: ModelKind,
    response: Response,
    rbf: Option<RbfParams>,
    trend: Option<TrendModel>,
) -> Result<FeatureMatrix> {
    FeaturePlan::new(ds, kind, rbf, trend)?.build(ds, response)
}

/// Contiguous run of columns sharing a block name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSpan {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub expected_columns: usize,
    pub actual_columns: usize,
    pub blocks: Vec<BlockSpan>,
    pub failures: Vec<String>,
}

/// Checks layout/count consistency, name uniqueness, value ranges, and that
/// each indicator block is a partition (one 1 per row).
pub fn manifest_audit(fm: &FeatureMatrix) -> AuditReport {
    let mut failures = Vec::new();
    let k = fm
        .columns
        .iter()
        .filter(|c| matches!(c.def, ColumnDef::Trend { .. }))
        .count();
    let c = fm
        .columns
        .iter()
        .filter(|c| matches!(c.def, ColumnDef::Rbf { .. }))
        .count();
    let expected = feature_count_for_windows(fm.kind, fm.n_hosts, k, c, fm.window_count);
    if fm.columns.len() != expected {
        failures.push(format!(
            "layout has {} columns, {} expects {expected}",
            fm.columns.len(),
            fm.kind
        ));
    }
    if fm.values.ncols() != fm.columns.len() {
        failures.push(format!(
            "matrix has {} columns, layout lists {}",
            fm.values.ncols(),
            fm.columns.len()
        ));
    }
    let mut seen = HashSet::new();
    for col in &fm.columns {
        if !seen.insert(col.name.as_str()) {
            failures.push(format!("duplicate column name {}", col.name));
        }
    }

    let mut blocks: Vec<BlockSpan> = Vec::new();
    for (j, col) in fm.columns.iter().enumerate() {
        let name = col.def.block();
        match blocks.last_mut() {
            Some(b) if b.name == name => b.len += 1,
            _ => blocks.push(BlockSpan {
                name,
                offset: j,
                len: 1,
            }),
        }
    }

    if fm.values.ncols() == fm.columns.len() {
        for (j, col) in fm.columns.iter().enumerate() {
            let values = fm.values.column(j);
            let bad = match col.def {
                ColumnDef::Series { .. } => values.iter().any(|v| !(*v >= 0.0)),
                ColumnDef::Indicator { .. } => values.iter().any(|v| *v != 0.0 && *v != 1.0),
                ColumnDef::Rbf { .. } => values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)),
                ColumnDef::Trend { .. } => values.iter().any(|v| !(*v >= 0.0)),
            };
            if bad {
                failures.push(format!("column {} has out-of-range values", col.name));
            }
        }
        for block in ["weekday", "hour", "host"] {
            let idx: Vec<usize> = fm
                .columns
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c.def, ColumnDef::Indicator { .. }) && c.def.block() == block)
                .map(|(j, _)| j)
                .collect();
            if idx.is_empty() {
                continue;
            }
            if let Some(row) = (0..fm.values.nrows())
                .find(|&i| idx.iter().map(|&j| fm.values[(i, j)]).sum::<f64>() != 1.0)
            {
                failures.push(format!("indicator block {block} does not sum to 1 in row {row}"));
            }
        }
    }

    AuditReport {
        passed: failures.is_empty(),
        expected_columns: expected,
        actual_columns: fm.columns.len(),
        blocks,
        failures,
    }
}
