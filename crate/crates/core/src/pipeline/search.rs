use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, Response};
use crate::error::{Error, Result};
use crate::features::ModelKind;
use crate::pipeline::{diagnostics, prepare, response_report, score_responses, EvalReport, Hyperparameters};

/// Candidate values per hyperparameter. Axes a family does not use are
/// collapsed to the base value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchGrid {
    pub base: Hyperparameters,
    pub k: Vec<usize>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rbf_c: Vec<usize>,
    /// Response whose LOOCV RMSE decides the winner.
    pub selection: Response,
}

const LOG_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

impl SearchGrid {
    /// k in 1..=100 for Mixed-Trend; gamma and ridge lambda over seven
    /// decades and C in {10, 50, 100} for RBF; plain least squares otherwise.
    pub fn defaults(kind: ModelKind, base: Hyperparameters) -> Self {
        let rbf = kind == ModelKind::Rbf;
        SearchGrid {
            k: (1..=100).collect(),
            gamma: LOG_GRID.to_vec(),
            lambda: if rbf { LOG_GRID.to_vec() } else { vec![0.0] },
            rbf_c: vec![10, 50, 100],
            selection: Response::Visits,
            base,
        }
    }

    /// Grid points grouped by the settings that change the design matrix;
    /// each group is scored over the whole lambda axis.
    fn groups(&self, kind: ModelKind) -> Result<Vec<Hyperparameters>> {
        if self.lambda.is_empty() {
            return Err(Error::invalid("empty lambda grid"));
        }
        let ks = if kind.trend_algorithm().is_some() {
            self.k.clone()
        } else {
            vec![self.base.k]
        };
        let (gammas, cs) = if kind == ModelKind::Rbf {
            (self.gamma.clone(), self.rbf_c.clone())
        } else {
            (vec![self.base.gamma], vec![self.base.rbf_c])
        };
        if ks.is_empty() || gammas.is_empty() || cs.is_empty() {
            return Err(Error::invalid("empty hyperparameter grid"));
        }
        let mut out = Vec::new();
        for &k in &ks {
            for &gamma in &gammas {
                for &rbf_c in &cs {
                    out.push(Hyperparameters {
                        k,
                        gamma,
                        rbf_c,
                        ..self.base.clone()
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub best: Hyperparameters,
    pub best_index: usize,
    pub selection: Response,
    /// One report per grid point, in grid order.
    pub table: Vec<EvalReport>,
}

/// Strictly better under the selection rule: lower LOOCV RMSE, then smaller
/// k, then larger lambda.
fn better(a: (f64, &Hyperparameters), b: (f64, &Hyperparameters)) -> bool {
    let key = |x: f64| if x.is_nan() { f64::INFINITY } else { x };
    let (sa, sb) = (key(a.0), key(b.0));
    if sa != sb {
        return sa < sb;
    }
    if a.1.k != b.1.k {
        return a.1.k < b.1.k;
    }
    a.1.lambda > b.1.lambda
}

/// Evaluates every grid point with [`evaluate`](super::evaluate)'s
/// protocol and selects the lowest LOOCV RMSE on `grid.selection`.
pub fn grid_search(ds: &Dataset, kind: ModelKind, grid: &SearchGrid) -> Result<SearchResult> {
    let groups = grid.groups(kind)?;
    let per_group: Vec<Vec<EvalReport>> = groups
        .par_iter()
        .map(|hp| {
            let prepared = prepare(ds, kind, hp)?;
            let scores = score_responses(ds, &prepared, &grid.lambda)?;
            Ok(grid
                .lambda
                .iter()
                .enumerate()
                .map(|(l, &lambda)| EvalReport {
                    kind,
                    hyperparameters: Hyperparameters { lambda, ..hp.clone() },
                    responses: prepared
                        .matrices
                        .iter()
                        .zip(&scores)
                        .map(|(fm, s)| response_report(fm.response, fm.columns.len(), &s[l]))
                        .collect(),
                    clustering: diagnostics(&prepared.trend),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let table: Vec<EvalReport> = per_group.into_iter().flatten().collect();

    let mut best_index = 0;
    for (i, r) in table.iter().enumerate().skip(1) {
        let cand = (r.response(grid.selection).rmse_loocv, &r.hyperparameters);
        let cur = &table[best_index];
        if better(cand, (cur.response(grid.selection).rmse_loocv, &cur.hyperparameters)) {
            best_index = i;
        }
    }
    Ok(SearchResult {
        best: table[best_index].hyperparameters.clone(),
        best_index,
        selection: grid.selection,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn data() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_hosts: 2,
            pages_per_host: 60,
            noise: 0.2,
            target_noise: 0.1,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn single_point_grid() {
        let ds = data();
        let grid = SearchGrid {
            k: vec![2],
            lambda: vec![0.1],
            ..SearchGrid::defaults(ModelKind::Ml, Hyperparameters::default())
        };
        let res = grid_search(&ds, ModelKind::Ml, &grid).unwrap();
        assert_eq!(res.table.len(), 1);
        assert_eq!(res.best.lambda, 0.1);
    }

    #[test]
    fn rbf_grid_covers_all_axes() {
        let ds = data();
        let grid = SearchGrid {
            gamma: vec![1.0, 10.0],
            lambda: vec![0.01, 1.0],
            rbf_c: vec![5, 10],
            ..SearchGrid::defaults(ModelKind::Rbf, Hyperparameters::default())
        };
        let res = grid_search(&ds, ModelKind::Rbf, &grid).unwrap();
        assert_eq!(res.table.len(), 8);
        let best = res.table[res.best_index].response(Response::Visits).rmse_loocv;
        assert!(res
            .table
            .iter()
            .all(|r| r.response(Response::Visits).rmse_loocv >= best));
    }

    #[test]
    fn ties_prefer_simpler() {
        let a = Hyperparameters {
            k: 2,
            lambda: 1.0,
            ..Hyperparameters::default()
        };
        let b = Hyperparameters {
            k: 3,
            ..a.clone()
        };
        let c = Hyperparameters {
            lambda: 10.0,
            ..a.clone()
        };
        assert!(better((0.5, &a), (0.5, &b)));
        assert!(better((0.5, &c), (0.5, &a)));
        assert!(better((0.4, &b), (0.5, &a)));
        assert!(!better((f64::NAN, &a), (0.5, &b)));
    }

    #[test]
    fn empty_grid_rejected() {
        let ds = data();
        let grid = SearchGrid {
            k: vec![],
            ..SearchGrid::defaults(ModelKind::MixedTrendKMeans, Hyperparameters::default())
        };
        assert!(grid_search(&ds, ModelKind::MixedTrendKMeans, &grid).is_err());
    }
}
