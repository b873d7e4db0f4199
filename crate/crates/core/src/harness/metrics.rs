use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run_id,seed,episode,return_total,collisions,steps,epsilon";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub episode: usize,
    pub return_total: f64,
    pub collisions: usize,
    pub steps: usize,
    pub epsilon: f64,
}

fn check_run_id(run_id: &str) -> Result<()> {
    if run_id.is_empty() || run_id.contains([',', '\n', '\r', '"']) {
        return Err(Error::config(format!("run id {run_id:?} must be non-empty without commas, quotes or newlines")));
    }
    Ok(())
}

// Episodes must increase within each (run_id, seed) series.
struct OrderCheck(BTreeMap<(String, u64), usize>);

impl OrderCheck {
    fn accept(&mut self, row: &MetricsRow) -> bool {
        match self.0.get_mut(&(row.run_id.clone(), row.seed)) {
            Some(last) if *last >= row.episode => false,
            Some(last) => {
                *last = row.episode;
                true
            }
            None => {
                self.0.insert((row.run_id.clone(), row.seed), row.episode);
                true
            }
        }
    }
}

pub fn write_metrics(mut out: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let mut order = OrderCheck(BTreeMap::new());
    writeln!(out, "{METRICS_HEADER}")?;
    for row in rows {
        check_run_id(&row.run_id)?;
        if !order.accept(row) {
            return Err(Error::contract(format!(
                "episode {} of run {} seed {} is out of order",
                row.episode, row.run_id, row.seed
            )));
        }
        writeln!(
            out,
            "{},{},{},{:?},{},{},{:?}",
            row.run_id, row.seed, row.episode, row.return_total, row.collisions, row.steps, row.epsilon
        )?;
    }
    Ok(())
}

pub fn save_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, rows)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_metrics(input: impl BufRead, source_name: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end_matches('\r') == METRICS_HEADER => {}
        Some(_) => return Err(Error::parse(source_name, 1, format!("expected header `{METRICS_HEADER}`"))),
        None => return Err(Error::parse(source_name, 1, "empty metrics file")),
    }
    let mut rows = Vec::new();
    let mut order = OrderCheck(BTreeMap::new());
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::parse(source_name, n, msg);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", fields.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.trim().parse().map_err(|_| format!("invalid {name} `{s}`"))
        }
        let row = (|| -> std::result::Result<MetricsRow, String> {
            if fields[0].is_empty() {
                return Err("empty run_id".into());
            }
            let return_total: f64 = num(fields[3], "return_total")?;
            let epsilon: f64 = num(fields[6], "epsilon")?;
            if !return_total.is_finite() || !epsilon.is_finite() {
                return Err("non-finite value".into());
            }
            Ok(MetricsRow {
                run_id: fields[0].to_string(),
                seed: num(fields[1], "seed")?,
                episode: num(fields[2], "episode")?,
                return_total,
                collisions: num(fields[4], "collisions")?,
                steps: num(fields[5], "steps")?,
                epsilon,
            })
        })()
        .map_err(bad)?;
        if !order.accept(&row) {
            return Err(Error::parse(source_name, n, format!("episode {} is not increasing", row.episode)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = std::fs::File::open(path)?;
    read_metrics(std::io::BufReader::new(file), &path.display().to_string())
}
