//! Prints a made-up 421-subject psychiatric trial in record format (the source of
//! `data/clozapine_synthetic.csv`). Outcomes are symptom-score-like integers drawn from
//! heteroskedastic normal strata; within each cell, higher scores are more likely to be
//! missing.
//!
//! Run with `cargo run -p cace-cli --example synthetic_trial > data/clozapine_synthetic.csv`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use cace_core::data::write_records;
use cace_core::rng::{stream, Purpose};
use cace_core::ObservedRecord;

/// (z, d, [(stratum mean, sd, count)], missing)
const CELLS: [(bool, bool, &[(f64, f64, usize)], usize); 4] = [
    (true, true, &[(72.0, 12.0, 69), (95.0, 12.0, 53)], 0),
    (true, false, &[(62.0, 13.0, 81)], 40),
    (false, true, &[(95.0, 12.0, 57)], 12),
    (false, false, &[(78.0, 14.0, 74), (62.0, 13.0, 87)], 47),
];

fn main() {
    let mut rng = stream(20240601, Purpose::Records, 0, 0);
    let mut records = Vec::new();
    for (z, d, strata, missing) in CELLS {
        let mut ys: Vec<f64> = Vec::new();
        for &(mean, sd, count) in strata {
            let law = Normal::new(mean, sd).unwrap();
            ys.extend((0..count).map(|_| law.sample(&mut rng).round().max(30.0)));
        }
        let noise = Normal::new(0.0, 12.0).unwrap();
        let mut order: Vec<(f64, usize)> = ys.iter().enumerate().map(|(i, y)| (y + noise.sample(&mut rng), i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        let dropped: Vec<usize> = order[..missing].iter().map(|&(_, i)| i).collect();
        for (i, y) in ys.into_iter().enumerate() {
            records.push(if dropped.contains(&i) {
                ObservedRecord::missing(z, d)
            } else {
                ObservedRecord::observed(z, d, y)
            });
        }
    }
    records.shuffle(&mut rng);
    write_records(std::io::stdout().lock(), &records).unwrap();
}
