//! Phase-one input table.
//!
//! Comma-separated, UTF-8, header row required, `.` decimal separator, empty
//! cell = missing. Columns: `id`, `time`, `status`, `stratum`, `sampled`,
//! optional `pi`, any number of `aux.*` and at least one `z.*`. Column order
//! is free; `aux.*` and `z.*` keep their header order.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use wlcox_core::design::PhaseOneRecord;
use wlcox_core::CohortData;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub ids: Vec<String>,
    /// NaN where missing (unsampled rows only).
    pub times: Vec<f64>,
    pub status: Vec<bool>,
    pub strata: Vec<u32>,
    pub sampled: Vec<bool>,
    pub pi: Vec<Option<f64>>,
    pub aux_names: Vec<String>,
    pub aux: Vec<Vec<f64>>,
    pub z_names: Vec<String>,
    /// Row-wise covariates, NaN where missing (unsampled rows only).
    pub z: Vec<Vec<f64>>,
}

struct Columns {
    id: usize,
    time: usize,
    status: usize,
    stratum: usize,
    sampled: usize,
    pi: Option<usize>,
    aux: Vec<usize>,
    z: Vec<usize>,
}

fn schema(
    file: &Path,
    line: Option<u64>,
    column: Option<&str>,
    message: impl Into<String>,
) -> CliError {
    CliError::Schema {
        file: file.to_path_buf(),
        line,
        column: column.map(str::to_string),
        message: message.into(),
    }
}

fn locate(file: &Path, headers: &csv::StringRecord) -> Result<Columns> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(*n) {
            return Err(schema(file, Some(1), Some(n), "duplicate column"));
        }
    }
    let find = |name: &str| names.iter().position(|n| *n == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| schema(file, Some(1), Some(name), "required column is missing"))
    };
    let cols = Columns {
        id: need("id")?,
        time: need("time")?,
        status: need("status")?,
        stratum: need("stratum")?,
        sampled: need("sampled")?,
        pi: find("pi"),
        aux: (0..names.len())
            .filter(|&i| names[i].starts_with("aux."))
            .collect(),
        z: (0..names.len())
            .filter(|&i| names[i].starts_with("z."))
            .collect(),
    };
    if cols.z.is_empty() {
        return Err(schema(
            file,
            Some(1),
            None,
            "no covariate columns (expected at least one `z.*`)",
        ));
    }
    let known = ["id", "time", "status", "stratum", "sampled", "pi"];
    if let Some(n) = names
        .iter()
        .find(|n| !known.contains(n) && !n.starts_with("aux.") && !n.starts_with("z."))
    {
        return Err(schema(file, Some(1), Some(n), "unknown column"));
    }
    Ok(cols)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

impl InputTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file, path)
    }

    /// `origin` is only used in error messages.
    pub fn from_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| schema(origin, Some(1), None, format!("unreadable header: {e}")))?
            .clone();
        let cols = locate(origin, &headers)?;
        let name = |i: usize| headers[i].trim().to_string();
        let mut t = InputTable {
            ids: vec![],
            times: vec![],
            status: vec![],
            strata: vec![],
            sampled: vec![],
            pi: vec![],
            aux_names: cols.aux.iter().map(|&i| name(i)).collect(),
            aux: vec![],
            z_names: cols.z.iter().map(|&i| name(i)).collect(),
            z: vec![],
        };
        let mut ids = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line());
                schema(origin, line, None, format!("malformed row: {e}"))
            })?;
            let line = rec.position().map(|p| p.line());
            let cell = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let err = |i: usize, msg: String| schema(origin, line, Some(&headers[i]), msg);
            let number = |i: usize| -> Result<Option<f64>> {
                let s = cell(i);
                if s.is_empty() {
                    return Ok(None);
                }
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(err(i, format!("`{s}` is not a finite number"))),
                }
            };

            let id = cell(cols.id);
            if id.is_empty() {
                return Err(err(cols.id, "id must not be empty".into()));
            }
            if !ids.insert(id.to_string()) {
                return Err(err(cols.id, format!("duplicate id `{id}`")));
            }
            let sampled = match cell(cols.sampled) {
                "" => return Err(err(cols.sampled, "sampled must not be empty".into())),
                s => parse_flag(s)
                    .ok_or_else(|| err(cols.sampled, format!("`{s}` is not 0 or 1")))?,
            };
            let stratum = match cell(cols.stratum) {
                "" => return Err(err(cols.stratum, "stratum must not be empty".into())),
                s => s.parse::<u32>().map_err(|_| {
                    err(
                        cols.stratum,
                        format!("`{s}` is not a nonnegative integer label"),
                    )
                })?,
            };
            let time = number(cols.time)?;
            if let Some(v) = time {
                if v < 0.0 {
                    return Err(err(cols.time, "time must be nonnegative".into()));
                }
            }
            let status = match cell(cols.status) {
                "" => None,
                s => Some(
                    parse_flag(s)
                        .ok_or_else(|| err(cols.status, format!("`{s}` is not 0 or 1")))?,
                ),
            };
            let z: Vec<Option<f64>> = cols.z.iter().map(|&i| number(i)).collect::<Result<_>>()?;
            if sampled {
                if time.is_none() {
                    return Err(err(cols.time, "missing for a sampled subject".into()));
                }
                if status.is_none() {
                    return Err(err(cols.status, "missing for a sampled subject".into()));
                }
                if let Some(k) = z.iter().position(Option::is_none) {
                    return Err(err(cols.z[k], "missing for a sampled subject".into()));
                }
            }
            let pi = match cols.pi {
                None => None,
                Some(i) => {
                    let v = number(i)?;
                    if let Some(p) = v {
                        if !(p > 0.0 && p <= 1.0) {
                            return Err(err(i, format!("{p} is outside (0, 1]")));
                        }
                    }
                    v
                }
            };
            let mut aux = Vec::with_capacity(cols.aux.len());
            for &i in &cols.aux {
                aux.push(
                    number(i)?
                        .ok_or_else(|| err(i, "phase-one variable must not be empty".into()))?,
                );
            }

            t.ids.push(id.to_string());
            t.times.push(time.unwrap_or(f64::NAN));
            t.status.push(status.unwrap_or(false));
            t.strata.push(stratum);
            t.sampled.push(sampled);
            t.pi.push(pi);
            t.aux.push(aux);
            t.z.push(z.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        }
        if t.ids.is_empty() {
            return Err(schema(origin, None, None, "no data rows"));
        }
        Ok(t)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn records(&self) -> Vec<PhaseOneRecord> {
        (0..self.n_rows())
            .map(|i| PhaseOneRecord {
                subject_id: self.ids[i].clone(),
                stratum: self.strata[i],
                aux: self.aux[i].clone(),
                sampled: self.sampled[i],
                known_pi: self.pi[i],
            })
            .collect()
    }

    /// Cohort data with the given IPW weights (zero for unsampled rows).
    pub fn cohort(&self, weights: Vec<f64>) -> wlcox_core::Result<CohortData> {
        let p = self.z_names.len();
        let z = DMatrix::from_fn(self.n_rows(), p, |i, k| self.z[i][k]);
        CohortData::new(self.times.clone(), self.status.clone(), z, weights)
    }

    /// Writes the table back out; missing values become empty cells and
    /// numbers use shortest round-trip formatting.
    pub fn write<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "id".to_string(),
            "time".into(),
            "status".into(),
            "stratum".into(),
            "sampled".into(),
        ];
        let has_pi = self.pi.iter().any(Option::is_some);
        if has_pi {
            header.push("pi".into());
        }
        header.extend(self.aux_names.iter().cloned());
        header.extend(self.z_names.iter().cloned());
        w.write_record(&header)?;
        let num = |v: f64| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v}")
            }
        };
        for i in 0..self.n_rows() {
            let mut row = vec![
                self.ids[i].clone(),
                num(self.times[i]),
                u8::from(self.status[i]).to_string(),
                self.strata[i].to_string(),
                u8::from(self.sampled[i]).to_string(),
            ];
            if has_pi {
                row.push(self.pi[i].map(num).unwrap_or_default());
            }
            row.extend(self.aux[i].iter().map(|&v| num(v)));
            row.extend(self.z[i].iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
        w.flush()
    }

    /// Builds a table from simulated records, blanking covariates of
    /// unsampled subjects.
    pub fn from_simulation(records: &[PhaseOneRecord], full: &CohortData) -> Self {
        let p = full.n_covariates();
        let n = records.len();
        let q = records.first().map_or(0, |r| r.aux.len());
        InputTable {
            ids: records.iter().map(|r| r.subject_id.clone()).collect(),
            times: full.times().to_vec(),
            status: full.status().to_vec(),
            strata: records.iter().map(|r| r.stratum).collect(),
            sampled: records.iter().map(|r| r.sampled).collect(),
            pi: records.iter().map(|r| r.known_pi).collect(),
            aux_names: (0..q).map(|k| format!("aux.{k}")).collect(),
            aux: records.iter().map(|r| r.aux.clone()).collect(),
            z_names: (0..p).map(|k| format!("z.{k}")).collect(),
            z: (0..n)
                .map(|i| {
                    (0..p)
                        .map(|k| {
                            if records[i].sampled {
                                full.covariates()[(i, k)]
                            } else {
                                f64::NAN
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let io = |source| CliError::Io {
            path: PathBuf::from(path),
            source,
        };
        let f = std::fs::File::create(path).map_err(io)?;
        self.write(std::io::BufWriter::new(f)).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<InputTable> {
        InputTable::from_reader(text.as_bytes(), Path::new("t.csv"))
    }

    #[test]
    fn unsampled_rows_may_omit_phase_two_values() {
        let t = parse("id,time,status,stratum,sampled,z.0\na,1.5,1,0,1,0.3\nb,,,2,0,\n").unwrap();
        assert_eq!(t.n_rows(), 2);
        assert!(t.z[1][0].is_nan());
        assert!(t.times[1].is_nan());
    }

    #[test]
    fn errors_carry_line_and_column() {
        let e =
            parse("id,time,status,stratum,sampled,z.0\na,1,1,0,1,0.3\nb,,1,0,1,0.1\n").unwrap_err();
        match e {
            CliError::Schema { line, column, .. } => {
                assert_eq!(line, Some(3));
                assert_eq!(column.as_deref(), Some("time"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("id,time,status,stratum,sampled\na,1,1,0,1\n"),
            Err(CliError::Schema { line: Some(1), .. })
        ));
        assert!(parse("id,time,status,stratum,sampled,pi,z.0\na,1,1,0,1,0,0.3\n").is_err());
        assert!(parse("id,time,status,stratum,sampled,z.0\na,1,1,,1,0.3\n").is_err());
        assert!(parse("id,time,status,stratum,sampled,z.0,w\na,1,1,0,1,0.3,2\n").is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = "id,time,status,stratum,sampled,pi,aux.0,z.0,z.1\na,0.1,1,1,1,0.3,2,0.30000000000000004,-1e-7\nb,,0,1,0,,1,,\n";
        let t = parse(text).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.ids, t.ids);
        assert_eq!(back.z[0], t.z[0]);
        assert!(back.z[1][0].is_nan());
        assert_eq!(back.pi, t.pi);
        assert_eq!(back.aux, t.aux);
    }
}
