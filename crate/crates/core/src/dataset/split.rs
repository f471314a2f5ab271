use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Host-stratified random split into `(train, test)`.
///
/// Each host contributes `round(n_host * test_fraction)` pages to the test
/// side and must keep at least one training page. Page order within each
/// side follows the input.
pub fn holdout_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let mut by_host: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, p) in ds.pages().iter().enumerate() {
        by_host.entry(p.host.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; ds.len()];
    for host in ds.hosts() {
        let mut members = by_host.remove(host.as_str()).unwrap_or_default();
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        if n_test >= members.len() {
            return Err(Error::invalid(format!(
                "test fraction {test_fraction} leaves host {host} without training pages"
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_test[i]);
    if test.is_empty() {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} yields an empty test side"
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}
