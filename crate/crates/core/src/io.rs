//! File formats: the long concentration CSV (`day,city,pm25`), the TOML
//! model document, and the report and curve CSVs. Every file is written to
//! a temporary sibling and renamed into place.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::calibration::ConcentrationSeries;
use crate::copula::CityPortfolio;
use crate::error::{Error, Result};
use crate::risk::{CurvePoint, RiskReport};

pub const CSV_HEADER: [&str; 3] = ["day", "city", "pm25"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Parse the concentration CSV. `source` names the input in error messages.
pub fn parse_concentration_csv<R: Read>(reader: R, source: &str) -> Result<Vec<ConcentrationSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let loc = |line: u64, col: Option<usize>| match col {
        Some(c) => format!("{source}:{line}:{c}"),
        None => format!("{source}:{line}"),
    };
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        Error::data(loc(line, None), e.to_string())
    };
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::data(source, "file is empty")),
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::data(loc(1, None), format!("header must be `{}`", CSV_HEADER.join(","))));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<ConcentrationSeries> = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::data(loc(line, None), format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let day: u32 = rec[0]
            .parse()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| Error::data(loc(line, Some(1)), format!("day `{}` is not a positive integer", &rec[0])))?;
        let city = rec[1].to_string();
        if city.is_empty() {
            return Err(Error::data(loc(line, Some(2)), "empty city name"));
        }
        let value = match &rec[2] {
            "NA" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| Error::data(loc(line, Some(3)), format!("pm25 `{s}` is neither a number nor NA")))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::data(loc(line, Some(3)), format!("concentration {v} is not positive")));
                }
                Some(v)
            }
        };
        let k = *index.entry(city.clone()).or_insert_with(|| {
            out.push(ConcentrationSeries {
                city: city.clone(),
                days: Vec::new(),
                values: Vec::new(),
            });
            out.len() - 1
        });
        let s = &mut out[k];
        if s.days.last().is_some_and(|&last| day <= last) {
            return Err(Error::data(loc(line, Some(1)), format!("day {day} for city {city} is not after day {}", s.days[s.days.len() - 1])));
        }
        s.days.push(day);
        s.values.push(value);
    }
    if out.is_empty() {
        return Err(Error::data(source, "no data rows"));
    }
    Ok(out)
}

pub fn read_concentration_csv(path: &Path) -> Result<Vec<ConcentrationSeries>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_concentration_csv(std::io::BufReader::new(f), &path.display().to_string())
}

/// Serialize series in the long format, day-major.
pub fn concentration_csv(series: &[ConcentrationSeries]) -> String {
    let mut rows: Vec<(u32, usize, Option<f64>)> = series
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.days.iter().zip(&s.values).map(move |(&d, &v)| (d, k, v)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for (d, k, v) in rows {
        match v {
            Some(v) => writeln!(out, "{d},{},{v}", series[k].city),
            None => writeln!(out, "{d},{},NA", series[k].city),
        }
        .expect("writing to a String");
    }
    out
}

/// Canonical TOML text of a portfolio.
pub fn model_to_toml(portfolio: &CityPortfolio) -> Result<String> {
    toml::to_string(portfolio).map_err(|e| Error::Io(format!("cannot serialize model: {e}")))
}

pub fn model_from_toml(text: &str, source: &str) -> Result<CityPortfolio> {
    let p: CityPortfolio = toml::from_str(text).map_err(|e| Error::data(source, e.to_string()))?;
    p.validate().map_err(|e| match e {
        Error::Argument(msg) => Error::data(source, msg),
        other => other,
    })?;
    Ok(p)
}

pub fn read_model(path: &Path) -> Result<CityPortfolio> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    model_from_toml(&text, &path.display().to_string())
}

/// SHA-256 of the canonical TOML text, so a preset and a model file with
/// the same content hash alike.
pub fn model_hash(portfolio: &CityPortfolio) -> Result<String> {
    Ok(sha256_hex(model_to_toml(portfolio)?.as_bytes()))
}

/// `# key: value` lines heading a CSV artifact.
fn metadata_block(meta: &[(String, String)]) -> String {
    meta.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else if x.is_nan() {
        "NA".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const REPORT_COLUMNS: &str = "alpha,car,ccar,ccar_lower,ccar_upper,ccar_ci_pct,ep_at_car,vr,iterations,empty_tail";

/// The risk report as CSV: metadata comments, then one row per level.
pub fn report_csv(report: &RiskReport, meta: &[(String, String)]) -> String {
    let mut out = metadata_block(meta);
    out.push_str(REPORT_COLUMNS);
    out.push('\n');
    for r in &report.rows {
        let c = &r.ccar;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.alpha,
            num(r.car),
            num(c.estimate),
            num(c.estimate - c.halfwidth95),
            num(c.estimate + c.halfwidth95),
            num(c.relative_halfwidth_pct()),
            num(r.ep.estimate),
            num(r.vr),
            r.iterations,
            c.empty_tail
        )
        .expect("writing to a String");
    }
    out
}

pub const CURVE_COLUMNS: &str = "tau,ep,halfwidth95,lower,upper,exceedances,degenerate";

pub fn curve_csv(points: &[CurvePoint], meta: &[(String, String)]) -> String {
    let mut out = metadata_block(meta);
    out.push_str(CURVE_COLUMNS);
    out.push('\n');
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.tau,
            num(p.ep),
            num(p.halfwidth95),
            num((p.ep - p.halfwidth95).max(0.0)),
            num(p.ep + p.halfwidth95),
            p.exceedances,
            p.degenerate()
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset::reference_portfolio;

    #[test]
    fn parses_long_format_with_gaps() {
        let text = "day,city,pm25\n1,a,10\n1,b,20.5\n2,a,NA\n2,b,21\n3,a,12\n";
        let s = parse_concentration_csv(text.as_bytes(), "t.csv").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].days, vec![1, 2, 3]);
        assert_eq!(s[0].values, vec![Some(10.0), None, Some(12.0)]);
        assert_eq!(s[1].values, vec![Some(20.5), Some(21.0)]);
        assert_eq!(concentration_csv(&s), "day,city,pm25\n1,a,10\n1,b,20.5\n2,a,NA\n2,b,21\n3,a,12\n");
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_concentration_csv("day,city,pm25\n1,a,10\n2,a,3,4\n".as_bytes(), "t.csv").unwrap_err();
        assert!(e.to_string().contains("t.csv:3") && e.to_string().contains("found 4"), "{e}");
        let e = parse_concentration_csv("day,city,pm25\n1,a,-1\n".as_bytes(), "t.csv").unwrap_err();
        assert!(e.to_string().contains("t.csv:2:3"), "{e}");
        let e = parse_concentration_csv("day,city,pm25\nx,a,1\n".as_bytes(), "t.csv").unwrap_err();
        assert!(e.to_string().contains("t.csv:2:1"), "{e}");
        assert!(parse_concentration_csv("day,city,pm25\n2,a,1\n1,a,1\n".as_bytes(), "t").is_err());
        assert!(parse_concentration_csv("".as_bytes(), "t").is_err());
        assert!(parse_concentration_csv("day,city,pm25\n".as_bytes(), "t").is_err());
        assert!(parse_concentration_csv("day,city,value\n1,a,1\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn model_round_trip() {
        let p = reference_portfolio();
        let text = model_to_toml(&p).unwrap();
        let q = model_from_toml(&text, "m.toml").unwrap();
        assert_eq!(p, q);
        assert_eq!(model_hash(&p).unwrap(), model_hash(&q).unwrap());
        assert!(model_from_toml("not = [valid", "m.toml").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
