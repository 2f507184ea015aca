//! CSV input and output. All ages written are in years BP.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::chronology::ProxySeries;
use crate::error::{Error, Result};
use crate::mcmc::Chain;
use crate::scale_space::{ContributionCurve, CredibilityMap, Flag, TimeGrid};
use crate::stats;

pub const INPUT_HEADER: [&str; 4] = ["record_id", "age_bp", "age_sd", "value"];

struct Rows {
    id: String,
    rows: Vec<(u64, f64, Option<f64>, f64)>,
}

fn parse_number(field: &str, line: u64, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse { line, message: format!("column '{column}': '{field}' is not a finite number") })
}

/// Parse the `record_id,age_bp,age_sd,value` format. Records keep their
/// order of first appearance; rows within a record are sorted by age.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<ProxySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let column = |name: &str| {
        find(name).ok_or_else(|| Error::Parse { line: 1, message: format!("missing required column '{name}'") })
    };
    let (id_col, age_col, value_col) = (column("record_id")?, column("age_bp")?, column("value")?);
    let sd_col = find("age_sd");

    let mut records: Vec<Rows> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(e, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[id_col].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty record_id".into() });
        }
        let age = parse_number(&row[age_col], line, "age_bp")?;
        let value = parse_number(&row[value_col], line, "value")?;
        let sd = match sd_col.map(|c| &row[c]) {
            None | Some("") => None,
            Some(f) => {
                let v = parse_number(f, line, "age_sd")?;
                if v < 0.0 {
                    return Err(Error::Parse { line, message: format!("negative age_sd {v}") });
                }
                Some(v)
            }
        };
        match records.iter_mut().find(|r| r.id == id) {
            Some(r) => r.rows.push((line, age, sd, value)),
            None => records.push(Rows { id, rows: vec![(line, age, sd, value)] }),
        }
    }
    if records.is_empty() {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }

    records
        .into_iter()
        .map(|mut r| {
            r.rows.sort_by(|a, b| a.1.total_cmp(&b.1));
            if let Some(w) = r.rows.windows(2).find(|w| w[0].1 == w[1].1) {
                return Err(Error::Parse {
                    line: w[1].0,
                    message: format!("record '{}' repeats age {}", r.id, w[1].1),
                });
            }
            let with_sd = r.rows.iter().filter(|x| x.2.is_some()).count();
            let sd = if with_sd == r.rows.len() {
                Some(r.rows.iter().map(|x| x.2.unwrap_or_default()).collect())
            } else if with_sd == 0 {
                None
            } else {
                let line = r.rows.iter().find(|x| x.2.is_none()).map_or(0, |x| x.0);
                return Err(Error::Parse {
                    line,
                    message: format!("record '{}' has a partially empty age_sd column", r.id),
                });
            };
            ProxySeries::from_ages_bp(
                r.id,
                r.rows.iter().map(|x| x.1).collect(),
                r.rows.iter().map(|x| x.3).collect(),
                sd,
            )
        })
        .collect()
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ProxySeries>> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open input '{}': {e}", path.display())))?;
    parse_records(file)
}

/// Write records in the input format.
pub fn write_records<W: Write>(out: W, records: &[ProxySeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INPUT_HEADER).map_err(|e| csv_error(e, 0))?;
    for r in records {
        let ages = r.ages_bp();
        for i in (0..r.len()).rev() {
            let sd = r.date_sd().map_or(String::new(), |s| s[i].to_string());
            w.write_record([r.id().to_string(), ages[i].to_string(), sd, r.values()[i].to_string()])
                .map_err(|e| csv_error(e, 0))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn age(date: f64) -> f64 {
    // avoid writing -0
    if date == 0.0 {
        0.0
    } else {
        -date
    }
}

/// `age_bp,mean,q05,q95` of `μ` at the joint dates, youngest first.
pub fn write_consensus<W: Write>(mut out: W, chain: &Chain) -> Result<()> {
    writeln!(out, "age_bp,mean,q05,q95")?;
    let t = chain.joint().dates();
    for i in (0..t.len()).rev() {
        let mut xs: Vec<f64> = chain.samples().iter().map(|s| s.mu[i]).collect();
        let mean = stats::mean(&xs);
        xs.sort_by(f64::total_cmp);
        writeln!(out, "{},{},{},{}", age(t[i]), mean, stats::quantile(&xs, 0.05), stats::quantile(&xs, 0.95))?;
    }
    out.flush()?;
    Ok(())
}

/// `age_bp,lambda,flag` for every cell, by level then by age.
pub fn write_map<W: Write>(mut out: W, map: &CredibilityMap) -> Result<()> {
    writeln!(out, "age_bp,lambda,flag")?;
    let s = map.times.points();
    for (level, &lambda) in map.scales.lambdas().iter().enumerate() {
        for j in (0..s.len()).rev() {
            writeln!(out, "{},{},{}", age(s[j]), lambda, map.flags[level][j].code())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse `map.csv` back into `(age_bp, lambda, flag)` rows.
pub fn read_map<R: Read>(reader: R) -> Result<Vec<(f64, f64, Flag)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(e, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        let code =
            row[2].parse::<i8>().map_err(|_| Error::Parse { line, message: format!("bad flag '{}'", &row[2]) })?;
        out.push((
            parse_number(&row[0], line, "age_bp")?,
            parse_number(&row[1], line, "lambda")?,
            Flag::from_code(code)?,
        ));
    }
    Ok(out)
}

/// `record,age_bp,lambda,mean_contribution`.
pub fn write_contributions<W: Write>(
    mut out: W,
    record_ids: &[String],
    curves: &[ContributionCurve],
    grid: &TimeGrid,
) -> Result<()> {
    writeln!(out, "record,age_bp,lambda,mean_contribution")?;
    let s = grid.points();
    for c in curves {
        for j in (0..s.len()).rev() {
            writeln!(out, "{},{},{},{}", record_ids[c.record], age(s[j]), c.lambda, c.slope[j])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `age_bp,lambda,mean_smooth,mean_slope` at the chosen levels.
pub fn write_smooths<W: Write>(mut out: W, map: &CredibilityMap, levels: &[usize]) -> Result<()> {
    writeln!(out, "age_bp,lambda,mean_smooth,mean_slope")?;
    let s = map.times.points();
    for &l in levels {
        let lambda = map.scales.lambdas()[l];
        for j in (0..s.len()).rev() {
            writeln!(out, "{},{},{},{}", age(s[j]), lambda, map.mean_smooth[l][j], map.mean_derivative[l][j])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per stored sample: iteration, `λ0`, `μ`, `τ` (as BP ages) and the
/// covariance diagonals.
pub fn write_chain<W: Write>(mut out: W, chain: &Chain) -> Result<()> {
    let n = chain.joint().len();
    let mut header = vec!["iteration".to_string(), "lambda0".to_string()];
    header.extend((0..n).map(|i| format!("mu_{i}")));
    header.extend((0..n).map(|i| format!("tau_bp_{i}")));
    for (k, inc) in chain.joint().incidences().iter().enumerate() {
        header.extend((0..inc.len()).map(|p| format!("sigma2_{k}_{p}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for s in chain.samples() {
        let mut row = vec![s.iteration.to_string(), s.lambda0.to_string()];
        row.extend(s.mu.iter().map(f64::to_string));
        row.extend(s.tau.iter().map(|&t| age(t).to_string()));
        row.extend(s.sigma_diag.iter().flatten().map(f64::to_string));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_to_path<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_groups() {
        let text = "record_id,age_bp,age_sd,value\nA,100,20,1.5\nB,50,,0.1\nA,300,30,2.5\nA,200,25,2.0\nB,150,,0.2\n";
        let r = parse_records(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].id(), "A");
        assert_eq!(r[0].ages_bp(), vec![300.0, 200.0, 100.0]);
        assert_eq!(r[0].values(), &[2.5, 2.0, 1.5]);
        assert_eq!(r[0].date_sd().unwrap(), &[30.0, 25.0, 20.0]);
        assert!(r[1].date_sd().is_none());
    }

    #[test]
    fn age_sd_column_optional() {
        let text = "record_id,age_bp,value\nA,100,1\nA,200,2\n";
        let r = parse_records(text.as_bytes()).unwrap();
        assert!(r[0].date_sd().is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "record_id,age_bp,age_sd,value\nA,100,1,1\nA,abc,1,2\n";
        match parse_records(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("age_bp"));
            }
            other => panic!("{other:?}"),
        }
        let text = "record_id,age,value\nA,1,2\n";
        assert!(matches!(parse_records(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let text = "record_id,age_bp,age_sd,value\nA,100,1,1\nA,200,,2\n";
        assert!(matches!(parse_records(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "record_id,age_bp,age_sd,value\nA,100,1,1\nA,100,1,2\n";
        assert!(matches!(parse_records(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn records_round_trip() {
        let a =
            ProxySeries::from_ages_bp("x", vec![10.0, 20.5, 30.0], vec![1.0, -2.0, 0.25], Some(vec![1.0, 2.0, 3.0]))
                .unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, std::slice::from_ref(&a)).unwrap();
        let back = parse_records(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a]);
    }
}
