//! Dataset table: a `#` header line of `key=value` fields, then one
//! comma-separated row per observation, `factor_1..factor_n,obs_1..obs_d`.
//! Factor values are 0-based codes; reals use the shortest representation
//! that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use softtpr_core::dataset::{Dataset, FactorRecord, FactorSpec};
use softtpr_core::DenseVector;

use crate::error::{CliError, Result};

const KIND: &str = "softtpr-dataset";

pub fn format_dataset(data: &Dataset) -> String {
    let spec = &data.spec;
    let values: Vec<String> = spec.values_per_factor.iter().map(|v| v.to_string()).collect();
    let mut out = format!(
        "# {KIND} n_r={} values_per_factor={} obs_dim={} render_seed={} rows={}\n",
        spec.n_r(),
        values.join(";"),
        spec.obs_dim,
        spec.render_seed,
        data.len()
    );
    for (a, x) in data.records.iter().zip(&data.observations) {
        let mut first = true;
        for v in &a.0 {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").expect("writing to a String");
        }
        for v in x.as_slice() {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> std::result::Result<Dataset, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let fields = header
        .strip_prefix("# ")
        .and_then(|h| h.strip_prefix(KIND))
        .ok_or("missing dataset header")?;
    let mut n_r = None;
    let mut values = None;
    let mut obs_dim = None;
    let mut render_seed = None;
    let mut rows = None;
    for kv in fields.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field `{kv}`"))?;
        let num = |v: &str| v.parse::<u64>().map_err(|e| format!("header {k}: {e}"));
        match k {
            "n_r" => n_r = Some(num(v)? as usize),
            "values_per_factor" => {
                values = Some(
                    v.split(';')
                        .map(|x| x.parse::<usize>().map_err(|e| format!("header {k}: {e}")))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
            "obs_dim" => obs_dim = Some(num(v)? as usize),
            "render_seed" => render_seed = Some(num(v)?),
            "rows" => rows = Some(num(v)? as usize),
            _ => return Err(format!("unknown header field `{k}`")),
        }
    }
    let spec = FactorSpec {
        values_per_factor: values.ok_or("header lacks values_per_factor")?,
        obs_dim: obs_dim.ok_or("header lacks obs_dim")?,
        render_seed: render_seed.ok_or("header lacks render_seed")?,
    };
    if n_r != Some(spec.n_r()) {
        return Err("header n_r disagrees with values_per_factor".into());
    }
    spec.validate().map_err(|e| e.to_string())?;
    let rows = rows.ok_or("header lacks rows")?;
    let mut data = Dataset::empty(spec.clone());
    for (line_no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != spec.n_r() + spec.obs_dim {
            return Err(format!("row {}: expected {} columns", line_no + 1, spec.n_r() + spec.obs_dim));
        }
        let a = FactorRecord(
            cells[..spec.n_r()]
                .iter()
                .map(|c| c.parse::<usize>().map_err(|e| format!("row {}: {e}", line_no + 1)))
                .collect::<std::result::Result<_, _>>()?,
        );
        a.validate(&spec).map_err(|e| format!("row {}: {e}", line_no + 1))?;
        let x = cells[spec.n_r()..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| format!("row {}: {e}", line_no + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let x = DenseVector::new(x).map_err(|e| format!("row {}: {e}", line_no + 1))?;
        data.records.push(a);
        data.observations.push(x);
    }
    if data.len() != rows {
        return Err(format!("header promises {rows} rows, found {}", data.len()));
    }
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, format_dataset(data)).map_err(CliError::io(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_dataset(&text).map_err(|msg| CliError::format(path, msg))
}
