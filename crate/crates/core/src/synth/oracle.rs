//! Brute-force reference for the two metrics. Deliberately shares nothing
//! with the metrics engine: names are deduplicated and counted by linear
//! scans over plain vectors.

use num_rational::Ratio;

use crate::error::{Error, Result};

fn distinct(names: &[String]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for name in names {
        let mut seen = false;
        for o in &out {
            if *o == name.as_str() {
                seen = true;
                break;
            }
        }
        if !seen {
            out.push(name.as_str());
        }
    }
    out
}

/// `(inconsistency, completeness)` of `detected` against `rect`.
pub fn oracle_metrics(detected: &[String], rect: &[String]) -> Result<(Ratio<u64>, Ratio<u64>)> {
    let d = distinct(detected);
    let r = distinct(rect);
    if r.is_empty() {
        return Err(Error::Contract("oracle requires a non-empty rectifier set".into()));
    }
    let mut outside = 0u64;
    let mut inside = 0u64;
    for name in &d {
        let mut found = false;
        for other in &r {
            if other == name {
                found = true;
            }
        }
        if found {
            inside += 1;
        } else {
            outside += 1;
        }
    }
    let denom = r.len() as u64;
    Ok((Ratio::new(outside, denom), Ratio::new(inside, denom)))
}
