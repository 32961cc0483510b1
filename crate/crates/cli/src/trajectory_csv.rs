//! Trajectory CSV: header `t,x0..,u0..,zeta0..`, one row per sample, every
//! number written with 17 significant digits so values survive a round trip.

use std::fs;
use std::path::Path;

use l3_core::lifting::Trajectory;

use crate::error::{CliError, Result};

/// Column counts `(l, n, z)` declared by a header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub state_dim: usize,
    pub input_dim: usize,
    pub observable_dim: usize,
}

impl Layout {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..self.state_dim).map(|i| format!("x{i}")));
        cols.extend((0..self.input_dim).map(|i| format!("u{i}")));
        cols.extend((0..self.observable_dim).map(|i| format!("zeta{i}")));
        cols
    }

    fn width(&self) -> usize {
        1 + self.state_dim + self.input_dim + self.observable_dim
    }

    /// Parses `t,x0..x{l-1},u0..u{n-1},zeta0..zeta{z-1}`.
    pub fn parse(fields: &[&str]) -> std::result::Result<Layout, String> {
        if fields.first() != Some(&"t") {
            return Err("header must start with 't'".into());
        }
        let mut rest = &fields[1..];
        let mut count = |prefix: &str| -> std::result::Result<usize, String> {
            let mut k = 0;
            while let Some(name) = rest.first() {
                match name.strip_prefix(prefix) {
                    Some(idx) if idx.chars().all(|c| c.is_ascii_digit()) && !idx.is_empty() => {
                        if idx != k.to_string() {
                            return Err(format!("expected column {prefix}{k}, found '{name}'"));
                        }
                        k += 1;
                        rest = &rest[1..];
                    }
                    _ => break,
                }
            }
            Ok(k)
        };
        let state_dim = count("x")?;
        let input_dim = count("u")?;
        let observable_dim = count("zeta")?;
        if let Some(extra) = rest.first() {
            return Err(format!("unexpected column '{extra}'"));
        }
        if state_dim == 0 || input_dim == 0 {
            return Err("header needs at least one state column and one input column".into());
        }
        Ok(Layout {
            state_dim,
            input_dim,
            observable_dim,
        })
    }
}

pub fn layout_of(t: &Trajectory) -> Layout {
    Layout {
        state_dim: t.state_dim(),
        input_dim: t.input_dim(),
        observable_dim: t.observable_dim(),
    }
}

fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical text of a trajectory, with `t_k = k·dt`.
pub fn to_csv_string(t: &Trajectory) -> String {
    let mut out = layout_of(t).header().join(",");
    out.push('\n');
    for k in 0..t.len() {
        let mut row = vec![number(k as f64 * t.dt())];
        row.extend(t.states()[k].iter().map(|&v| number(v)));
        row.extend(t.inputs()[k].iter().map(|&v| number(v)));
        row.extend(t.observables()[k].iter().map(|&v| number(v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    fs::write(path, to_csv_string(t)).map_err(|e| CliError::io(path, e))
}

/// Reads and validates one trajectory file. Errors name the offending line.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_trajectory(path, &text)
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Trajectory> {
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    let layout = Layout::parse(&fields).map_err(|m| parse_err(1, m))?;
    let (l, n) = (layout.state_dim, layout.input_dim);

    let mut times = Vec::new();
    let (mut states, mut inputs, mut observables) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != layout.width() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", layout.width(), record.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column {} ('{f}') is not a finite number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        times.push((values[0], line));
        states.push(values[1..1 + l].to_vec());
        inputs.push(values[1 + l..1 + l + n].to_vec());
        observables.push(values[1 + l + n..].to_vec());
    }
    if times.len() < 2 {
        return Err(CliError::format(path, "a trajectory needs at least two samples"));
    }
    let t0 = times[0].0;
    let dt = times[1].0 - t0;
    if !(dt > 0.0) {
        return Err(parse_err(times[1].1, "time must increase".into()));
    }
    for (k, &(t, line)) in times.iter().enumerate() {
        let expected = t0 + k as f64 * dt;
        if (t - expected).abs() > 1e-6 * dt.max(1e-300) + 1e-12 * expected.abs() {
            return Err(parse_err(line, format!("non-uniform sample time {t} (expected {expected})")));
        }
    }
    Ok(Trajectory::new(dt, states, inputs, observables)?)
}
