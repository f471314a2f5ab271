use std::io::{Read, Write};

use crate::dataset::{
    window_column, Dataset, Metric, PageRecord, Response, Targets, ValidationMode,
};
use crate::error::{Error, Result};
use crate::transforms::CumulativeSeries;

/// The on-disk CSV format always carries twelve windows per metric.
pub const CSV_WINDOWS: usize = 12;

fn header(with_targets: bool) -> Vec<String> {
    let mut h = vec![
        "page_id".to_string(),
        "host".to_string(),
        "weekday".to_string(),
        "hour".to_string(),
    ];
    for metric in Metric::ALL {
        h.extend((0..CSV_WINDOWS).map(|i| window_column(metric, i)));
    }
    if with_targets {
        h.extend(Response::ALL.iter().map(|r| format!("{}_48h", r.name())));
    }
    h
}

/// Reads the canonical CSV format. The three target columns may be absent
/// as a group.
pub fn parse_csv<R: Read>(source: R, mode: ValidationMode) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let with_targets = if found == header(true) {
        true
    } else if found == header(false) {
        false
    } else {
        return Err(Error::Header(found.join(",")));
    };

    let mut pages = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let page_id = cell(0).to_string();
        let number = |i: usize| -> Result<f64> {
            cell(i).trim().parse::<f64>().map_err(|_| Error::Csv {
                line,
                message: format!(
                    "page {page_id}: column {}: cannot parse {:?} as a number",
                    header(with_targets)[i],
                    cell(i)
                ),
            })
        };
        let integer = |i: usize| -> Result<u8> {
            cell(i).trim().parse::<u8>().map_err(|_| Error::Csv {
                line,
                message: format!(
                    "page {page_id}: column {}: cannot parse {:?} as an integer",
                    header(with_targets)[i],
                    cell(i)
                ),
            })
        };
        let block = |k: usize| -> Result<Vec<f64>> {
            let start = 4 + k * CSV_WINDOWS;
            (start..start + CSV_WINDOWS).map(number).collect()
        };
        let targets = if with_targets {
            let base = 4 + 4 * CSV_WINDOWS;
            Some(Targets {
                visits: number(base)?,
                likes: number(base + 1)?,
                mentions: number(base + 2)?,
            })
        } else {
            None
        };
        pages.push(PageRecord {
            host: cell(1).to_string(),
            weekday: integer(2)?,
            hour: integer(3)?,
            visits: CumulativeSeries::from_raw(block(0)?),
            likes: CumulativeSeries::from_raw(block(1)?),
            mentions: CumulativeSeries::from_raw(block(2)?),
            active_time: block(3)?,
            targets,
            page_id,
        });
    }
    Dataset::new(pages, mode)
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink)
}

/// Writes the canonical CSV format. Target columns are emitted only when
/// every page carries targets (or the dataset is empty).
pub fn write_csv<W: Write>(ds: &Dataset, sink: W) -> Result<()> {
    if ds.window_count() != CSV_WINDOWS {
        return Err(Error::LengthMismatch {
            expected: CSV_WINDOWS,
            found: ds.window_count(),
        });
    }
    let with_targets = ds.is_empty() || ds.has_targets();
    let mut w = writer(sink);
    w.write_record(header(with_targets))?;
    for p in ds.pages() {
        let mut row = vec![
            p.page_id.clone(),
            p.host.clone(),
            p.weekday.to_string(),
            p.hour.to_string(),
        ];
        for metric in Metric::ALL {
            row.extend(p.series(metric).iter().map(|x| x.to_string()));
        }
        if with_targets {
            let t = p.targets.expect("checked by has_targets");
            row.extend(Response::ALL.iter().map(|&r| t.get(r).to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the auxiliary `page_id,true_trend` label table.
pub fn write_labels<W: Write>(ds: &Dataset, labels: &[usize], sink: W) -> Result<()> {
    if labels.len() != ds.len() {
        return Err(Error::LengthMismatch {
            expected: ds.len(),
            found: labels.len(),
        });
    }
    let mut w = writer(sink);
    w.write_record(["page_id", "true_trend"])?;
    for (p, l) in ds.pages().iter().zip(labels) {
        w.write_record([p.page_id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
