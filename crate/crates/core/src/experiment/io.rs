//! Observation files: CSV with header `t,y`, one row per time index starting at 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::Scalar;

#[derive(Debug, Serialize, Deserialize)]
struct ObsRow {
    t: usize,
    y: f64,
}

pub fn parse_observations<O: Scalar>(text: &str) -> Result<Vec<O>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Config(format!("observations: {e}")))?;
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "y" {
        return Err(Error::Config("observation file must have header `t,y`".into()));
    }
    let mut ys = Vec::new();
    for (i, row) in rdr.deserialize::<ObsRow>().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("observations: {e}")))?;
        if row.t != i {
            return Err(Error::Config(format!("observation rows must be t = 0, 1, …; row {i} has t = {}", row.t)));
        }
        let y = O::from_f64(row.y)
            .ok_or_else(|| Error::Config(format!("observation {} at t = {i} is not valid for this model", row.y)))?;
        ys.push(y);
    }
    if ys.is_empty() {
        return Err(Error::Config("observation file has no rows".into()));
    }
    Ok(ys)
}

pub fn read_observations<O: Scalar>(path: &Path) -> Result<Vec<O>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_observations(&text)
}

pub fn observations_csv<O: Scalar>(ys: &[O]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (t, y) in ys.iter().enumerate() {
        w.serialize(ObsRow { t, y: y.to_f64() }).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_real_and_integer() {
        let ys = vec![0.25, -1.5, 3.0];
        assert_eq!(parse_observations::<f64>(&observations_csv(&ys)).unwrap(), ys);
        let ks = vec![0usize, 2, 1];
        assert_eq!(parse_observations::<usize>(&observations_csv(&ks)).unwrap(), ks);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_observations::<f64>("x,y\n0,1\n").is_err());
        assert!(parse_observations::<f64>("t,y\n1,1\n").is_err());
        assert!(parse_observations::<f64>("t,y\n").is_err());
        assert!(parse_observations::<usize>("t,y\n0,0.5\n").is_err());
        assert!(parse_observations::<usize>("t,y\n0,-1\n").is_err());
    }
}
