//! Long-format panel CSV: header `g,t[,y][,x1,...]`, one row per observation.
//!
//! `g` and `t` are integers; every other column is numeric. Malformed rows
//! are errors carrying the file line number.

use std::io::{Read, Write};
use std::path::Path;

use hetvar::panel::PanelIndex;
use hetvar::regression::Design;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PanelCsv {
    pub g: Vec<i64>,
    pub t: Vec<i64>,
    pub y: Option<Vec<f64>>,
    pub x_names: Vec<String>,
    /// Row-major regressors, one row per observation.
    pub x: Vec<Vec<f64>>,
}

impl PanelCsv {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn records(&self) -> Vec<(i64, i64)> {
        self.g.iter().copied().zip(self.t.iter().copied()).collect()
    }

    pub fn panel(&self) -> Result<PanelIndex, CliError> {
        PanelIndex::new(&self.records()).map_err(CliError::data)
    }

    /// Regression design, optionally within-transformed and with an
    /// intercept prepended after the transformation.
    pub fn design(&self, within: bool, intercept: bool) -> Result<Design, CliError> {
        let y = self
            .y
            .clone()
            .ok_or_else(|| CliError::Data("column 'y' is required for estimation".into()))?;
        let mut d = Design::new(self.panel()?, y, self.x.clone(), self.x_names.clone()).map_err(CliError::data)?;
        if within {
            d = hetvar::regression::within_transform(&d).map_err(CliError::data)?;
        }
        if intercept {
            d = d.with_intercept().map_err(CliError::data)?;
        }
        Ok(d)
    }

    /// Builds the CSV view of a design (regressors named as in the design).
    pub fn from_design(d: &Design) -> Self {
        let (g, t) = d.panel().records().into_iter().unzip();
        Self {
            g,
            t,
            y: Some(d.y().to_vec()),
            x_names: d.names().to_vec(),
            x: d.x().to_vec(),
        }
    }
}

pub fn read_panel_csv(path: &Path) -> Result<PanelCsv, CliError> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_panel_csv(file, path)
}

pub fn parse_panel_csv<R: Read>(input: R, path: &Path) -> Result<PanelCsv, CliError> {
    let err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let gi = position("g").ok_or_else(|| err(1, "missing column 'g'".into()))?;
    let ti = position("t").ok_or_else(|| err(1, "missing column 't'".into()))?;
    let yi = position("y");
    let xi: Vec<usize> = (0..headers.len()).filter(|&c| c != gi && c != ti && Some(c) != yi).collect();
    let x_names: Vec<String> = xi.iter().map(|&c| headers[c].to_string()).collect();
    if let Some(dup) = headers.iter().enumerate().find(|(c, h)| headers.iter().position(|o| o == *h) != Some(*c)) {
        return Err(err(1, format!("duplicate column '{}'", dup.1)));
    }

    let mut out = PanelCsv {
        g: Vec::new(),
        t: Vec::new(),
        y: yi.map(|_| Vec::new()),
        x_names,
        x: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let int = |c: usize| -> Result<i64, CliError> {
            record[c]
                .parse::<i64>()
                .map_err(|_| err(line, format!("column '{}': expected an integer, got '{}'", &headers[c], &record[c])))
        };
        let real = |c: usize| -> Result<f64, CliError> {
            let v: f64 = record[c]
                .parse()
                .map_err(|_| err(line, format!("column '{}': expected a number, got '{}'", &headers[c], &record[c])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("column '{}': non-finite value", &headers[c])))
            }
        };
        out.g.push(int(gi)?);
        out.t.push(int(ti)?);
        if let (Some(c), Some(y)) = (yi, out.y.as_mut()) {
            y.push(real(c)?);
        }
        out.x.push(xi.iter().map(|&c| real(c)).collect::<Result<_, _>>()?);
    }
    if out.is_empty() {
        return Err(err(1, "no observations".into()));
    }
    Ok(out)
}

/// Writes the panel in the same dialect; floats use the shortest
/// representation that parses back to the same value.
pub fn write_panel_csv<W: Write>(csv: &PanelCsv, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["g".to_string(), "t".to_string()];
    if csv.y.is_some() {
        header.push("y".into());
    }
    header.extend(csv.x_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..csv.len() {
        let mut row = vec![csv.g[i].to_string(), csv.t[i].to_string()];
        if let Some(y) = &csv.y {
            row.push(y[i].to_string());
        }
        row.extend(csv.x[i].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PanelCsv, CliError> {
        parse_panel_csv(s.as_bytes(), Path::new("in.csv"))
    }

    #[test]
    fn parses_and_round_trips() {
        let csv = parse("g,t,y,x1,x2\n1,1,0.5,1,2\n1,2,-1e-3,3,4\n2,1,7,5,6\n2,1,8,0.1,0.2\n").unwrap();
        assert_eq!(csv.len(), 4);
        assert_eq!(csv.x_names, vec!["x1", "x2"]);
        assert_eq!(csv.y.as_ref().unwrap()[1], -1e-3);
        let mut buf = Vec::new();
        write_panel_csv(&csv, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), csv);
    }

    #[test]
    fn y_is_optional() {
        let csv = parse("t,g\n3,1\n5,2\n").unwrap();
        assert!(csv.y.is_none());
        assert!(csv.x_names.is_empty());
        assert_eq!(csv.panel().unwrap().num_periods(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("g,t,y\n1,1,2\n1,x,3\n") {
            Err(CliError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("'t'"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("g,t,y\n1,1,2\n1,2\n"), Err(CliError::Parse { line: 3, .. })));
        assert!(matches!(parse("g,y\n1,1\n"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(parse("g,t,y\n1,1,NaN\n"), Err(CliError::Parse { line: 2, .. })));
        assert!(matches!(parse("g,t,y\n"), Err(CliError::Parse { .. })));
    }
}
