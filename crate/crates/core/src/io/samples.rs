//! Falloff measurements as CSV: `distance,intensity` per row (mm and
//! linear intensity). A header row and `#` comments are allowed.

use std::path::Path;

use crate::calib::FalloffSamples;
use crate::error::{Error, Result};

pub fn load_falloff_samples(path: &Path) -> Result<FalloffSamples> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
    let (mut distances, mut intensities) = (Vec::new(), Vec::new());
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 columns, got {}", record.len())));
        }
        let parsed: Option<(f64, f64)> = record[0].parse().ok().zip(record[1].parse().ok());
        match parsed {
            Some((d, i)) => {
                distances.push(d);
                intensities.push(i);
            }
            None if k == 0 => continue,
            None => return Err(Error::parse(path, line, format!("not a number pair: '{}', '{}'", &record[0], &record[1]))),
        }
    }
    FalloffSamples::new(distances, intensities).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::fit_falloff_exponent;

    #[test]
    fn header_comments_and_fit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut body = String::from("# wall captures\ndistance,intensity\n");
        for d in [500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0] {
            body.push_str(&format!("{d}, {}\n", 4e5 / (d * d)));
        }
        std::fs::write(&p, body).unwrap();
        let fit = fit_falloff_exponent(&load_falloff_samples(&p).unwrap()).unwrap();
        assert!((fit.exponent + 2.0).abs() < 1e-9);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "500,1.0\n1000,0.25\n1500,x\n").unwrap();
        assert!(matches!(load_falloff_samples(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "500,1.0,3\n").unwrap();
        assert!(matches!(load_falloff_samples(&p), Err(Error::Parse { line: 1, .. })));
    }
}
