//! CSV ingestion/emission and result-table formatting.
//!
//! Cohort CSV schema: header `id,time,event,z1..zK,zs1..zsM,stratum`,
//! `event` in {0,1}, UTF-8, comma-separated, `.` decimal point.
//! Selection CSV schema: header `id,selected,pi,weight`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::cohort::{Cohort, CohortRecord};
use crate::cube::SampleSelection;
use crate::sim::{RawEstimate, ReplicationSummary};
use crate::{Error, Result};

/// Output delimiter for tables and dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Tsv,
    Csv,
}

impl OutputFormat {
    fn delimiter(&self) -> char {
        match self {
            OutputFormat::Tsv => '\t',
            OutputFormat::Csv => ',',
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(OutputFormat::Tsv),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Argument(format!("unknown format '{}'", other))),
        }
    }
}

/// Parses the header into (covariate count, auxiliary count), enforcing the
/// column order and contiguous numbering.
fn parse_header(headers: &csv::StringRecord) -> Result<(usize, usize)> {
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4 {
        return Err(Error::Schema(format!(
            "expected at least 4 columns (id,time,event,...,stratum), got {}",
            cols.len()
        )));
    }
    if cols[0] != "id" || cols[1] != "time" || cols[2] != "event" {
        return Err(Error::Schema(format!(
            "header must start with id,time,event; got {},{},{}",
            cols[0], cols[1], cols[2]
        )));
    }
    if *cols.last().unwrap() != "stratum" {
        return Err(Error::Schema("last column must be stratum".into()));
    }
    let mut k = 0usize;
    let mut m = 0usize;
    let mut idx = 3;
    while idx < cols.len() - 1 && cols[idx] == format!("z{}", k + 1) {
        k += 1;
        idx += 1;
    }
    while idx < cols.len() - 1 && cols[idx] == format!("zs{}", m + 1) {
        m += 1;
        idx += 1;
    }
    if idx != cols.len() - 1 {
        return Err(Error::Schema(format!(
            "unexpected column '{}' (want z1..zK then zs1..zsM)",
            cols[idx]
        )));
    }
    Ok((k, m))
}

/// Reads a cohort from CSV.
pub fn parse_cohort_csv(path: &Path) -> Result<Cohort> {
    let file = std::fs::File::open(path)?;
    parse_cohort_reader(file)
}

pub fn parse_cohort_reader<R: Read>(reader: R) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let (k, m) = parse_header(rdr.headers()?)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<&str> {
            row.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {}", idx),
            })
        };
        let parse_f64 = |idx: usize, name: &str| -> Result<f64> {
            field(idx)?.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid {} '{}'", name, row.get(idx).unwrap_or("")),
            })
        };
        let id: usize = field(0)?.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid id '{}'", row.get(0).unwrap_or("")),
        })?;
        let time = parse_f64(1, "time")?;
        let event = match field(2)?.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("event must be 0 or 1, got '{}'", other),
                })
            }
        };
        let mut z = Vec::with_capacity(k);
        for j in 0..k {
            z.push(parse_f64(3 + j, &format!("z{}", j + 1))?);
        }
        let mut z_star = Vec::with_capacity(m);
        for j in 0..m {
            z_star.push(parse_f64(3 + k + j, &format!("zs{}", j + 1))?);
        }
        let stratum: i64 = field(3 + k + m)?.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid stratum '{}'", row.get(3 + k + m).unwrap_or("")),
        })?;
        records.push(CohortRecord {
            id,
            time,
            event,
            z,
            z_star,
            stratum,
        });
    }
    Cohort::new(records, k, m)
}

/// Writes a cohort in the CSV schema; floats round-trip exactly.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, mut out: W) -> Result<()> {
    let k = cohort.covariate_dim();
    let m = cohort.aux_dim();
    let mut header = String::from("id,time,event");
    for j in 0..k {
        header.push_str(&format!(",z{}", j + 1));
    }
    for j in 0..m {
        header.push_str(&format!(",zs{}", j + 1));
    }
    header.push_str(",stratum");
    writeln!(out, "{}", header)?;
    for rec in cohort.records() {
        let mut line = format!("{},{},{}", rec.id, rec.time, u8::from(rec.event));
        for v in &rec.z {
            line.push_str(&format!(",{}", v));
        }
        for v in &rec.z_star {
            line.push_str(&format!(",{}", v));
        }
        line.push_str(&format!(",{}", rec.stratum));
        writeln!(out, "{}", line)?;
    }
    Ok(())
}

/// Writes a phase-2 selection (`id,selected,pi,weight`), one row per cohort
/// unit; `weight` may be design or calibrated.
pub fn write_selection_csv<W: Write>(
    sel: &SampleSelection,
    weights: &[f64],
    mut out: W,
) -> Result<()> {
    writeln!(out, "id,selected,pi,weight")?;
    for (i, &selected) in sel.indicators.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            u8::from(selected),
            sel.pi[i],
            weights[i]
        )?;
    }
    Ok(())
}

/// Reads a selection file back; ids must be contiguous from 1.
pub fn parse_selection_csv(path: &Path) -> Result<(SampleSelection, Vec<f64>)> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?;
    let expect = ["id", "selected", "pi", "weight"];
    let got: Vec<&str> = headers.iter().collect();
    if got != expect {
        return Err(Error::Schema(format!(
            "selection header must be id,selected,pi,weight; got {}",
            got.join(",")
        )));
    }
    let mut indicators = Vec::new();
    let mut pi = Vec::new();
    let mut weights = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let id: usize = row[0].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid id '{}'", &row[0]),
        })?;
        if id != i + 1 {
            return Err(Error::Parse {
                line,
                message: format!("ids must be contiguous from 1, got {}", id),
            });
        }
        let selected = match row[1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("selected must be 0 or 1, got '{}'", other),
                })
            }
        };
        let p: f64 = row[2].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid pi '{}'", &row[2]),
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parse {
                line,
                message: format!("pi {} outside [0, 1]", p),
            });
        }
        let w: f64 = row[3].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid weight '{}'", &row[3]),
        })?;
        indicators.push(selected);
        pi.push(p);
        weights.push(w);
    }
    let design_weights = indicators
        .iter()
        .zip(&pi)
        .map(|(&s, &p)| if s && p > 0.0 { 1.0 / p } else { 0.0 })
        .collect();
    Ok((
        SampleSelection {
            indicators,
            pi,
            weights: design_weights,
        },
        weights,
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.4}", x),
        None => String::new(),
    }
}

/// Formats replication summaries as a delimited table with the columns
/// Design, Coef, Mean, SD, SE, SE1, SE2, RE, Excluded (4-decimal fixed;
/// blanks for inapplicable cells).
pub fn emit_summary_table(summaries: &[ReplicationSummary], format: OutputFormat) -> String {
    let d = format.delimiter();
    let mut out = String::new();
    out.push_str(&format!(
        "Design{d}Coef{d}Mean{d}SD{d}SE{d}SE1{d}SE2{d}RE{d}Excluded\n"
    ));
    for s in summaries {
        let k = s.mean.len();
        for j in 0..k {
            let pick = |v: &Option<Vec<f64>>| fmt_opt(v.as_ref().map(|x| x[j]));
            out.push_str(&format!(
                "{}{d}z{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
                s.design,
                j + 1,
                fmt_opt(Some(s.mean[j])),
                pick(&s.sd),
                pick(&s.se),
                pick(&s.se1),
                pick(&s.se2),
                pick(&s.re),
                s.n_excluded,
            ));
        }
    }
    out
}

/// Dumps per-replication estimates for external plotting.
pub fn write_raw_estimates<W: Write>(raw: &[RawEstimate], k: usize, mut out: W) -> Result<()> {
    let mut header = String::from("design,replication,excluded");
    for j in 0..k {
        header.push_str(&format!(",b{}", j + 1));
    }
    writeln!(out, "{}", header)?;
    for r in raw {
        let mut line = format!("{},{},{}", r.design, r.replication, u8::from(r.excluded));
        for v in &r.beta {
            line.push_str(&format!(",{}", v));
        }
        writeln!(out, "{}", line)?;
    }
    Ok(())
}

/// Flat key-value configuration file: `key = value` lines, `#` comments.
/// Keys mirror the long CLI flags.
pub fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: lineno as u64 + 1,
                message: format!("expected key = value, got '{}'", line),
            });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CohortRecord, Cohort};

    fn tiny_cohort() -> Cohort {
        Cohort::new(
            vec![
                CohortRecord {
                    id: 1,
                    time: 1.25,
                    event: true,
                    z: vec![0.5, -1.0],
                    z_star: vec![0.5],
                    stratum: 0,
                },
                CohortRecord {
                    id: 2,
                    time: 2.5,
                    event: false,
                    z: vec![-0.25, 0.125],
                    z_star: vec![-0.25],
                    stratum: 1,
                },
            ],
            2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn cohort_csv_roundtrip() {
        let cohort = tiny_cohort();
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        let parsed = parse_cohort_reader(buf.as_slice()).unwrap();
        assert_eq!(parsed, cohort);
    }

    #[test]
    fn header_only_gives_empty_cohort() {
        let text = "id,time,event,z1,zs1,stratum\n";
        let cohort = parse_cohort_reader(text.as_bytes()).unwrap();
        assert!(cohort.is_empty());
        assert_eq!(cohort.covariate_dim(), 1);
        assert_eq!(cohort.aux_dim(), 1);
    }

    #[test]
    fn bad_event_names_line() {
        let text = "id,time,event,z1,zs1,stratum\n1,1.0,2,0.5,0.5,0\n";
        match parse_cohort_reader(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("event"));
            }
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn header_violations_rejected() {
        for bad in [
            "time,id,event,z1,zs1,stratum\n",
            "id,time,event,z2,zs1,stratum\n",
            "id,time,event,z1,zs1\n",
            "id,time,event,weird,stratum\n",
        ] {
            assert!(parse_cohort_reader(bad.as_bytes()).is_err(), "{}", bad);
        }
    }

    #[test]
    fn summary_table_formats() {
        let s = ReplicationSummary {
            design: "SC:SRS".into(),
            mean: vec![0.6941],
            sd: Some(vec![0.1246]),
            se: None,
            se1: None,
            se2: None,
            re: Some(vec![3.039024]),
            n_excluded: 0,
            n_kept: 2000,
        };
        let tsv = emit_summary_table(std::slice::from_ref(&s), OutputFormat::Tsv);
        assert!(tsv.contains("0.6941\t0.1246\t\t\t\t3.0390\t0"));
        let csv_text = emit_summary_table(&[s], OutputFormat::Csv);
        assert_eq!(tsv.replace('\t', ","), csv_text);
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# experiment\ncohort-size = 1000\nrho=0.8\n\nseed = 7\n",
        )
        .unwrap();
        let map = parse_config_file(&path).unwrap();
        assert_eq!(map["cohort-size"], "1000");
        assert_eq!(map["rho"], "0.8");
        assert_eq!(map["seed"], "7");
        std::fs::write(&path, "not a pair\n").unwrap();
        assert!(parse_config_file(&path).is_err());
    }

    #[test]
    fn selection_roundtrip() {
        let sel = SampleSelection {
            indicators: vec![true, false, true],
            pi: vec![0.5, 0.5, 1.0],
            weights: vec![2.0, 0.0, 1.0],
        };
        let calibrated = vec![2.2, 0.0, 1.0];
        let mut buf = Vec::new();
        write_selection_csv(&sel, &calibrated, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.csv");
        std::fs::write(&path, &buf).unwrap();
        let (parsed, weights) = parse_selection_csv(&path).unwrap();
        assert_eq!(parsed.indicators, sel.indicators);
        assert_eq!(parsed.pi, sel.pi);
        assert_eq!(weights, calibrated);
    }
}
