//! CSV ingestion with user-mapped column roles.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use faer::Mat;
use ksel::{Dataset, ShiftedSample};

use crate::args::Role;

#[derive(Debug, Clone, Default)]
pub struct Roles {
    pub s: String,
    pub y: String,
    pub d: String,
    pub x: Vec<String>,
    pub m: Vec<String>,
    pub v: Vec<String>,
}

impl Roles {
    pub fn from_pairs(pairs: &[(Role, String)]) -> Result<Self> {
        let mut r = Roles::default();
        let single = |slot: &mut String, name: &str, role: &str| -> Result<()> {
            if !slot.is_empty() {
                bail!("role {role} mapped twice");
            }
            *slot = name.to_string();
            Ok(())
        };
        for (role, name) in pairs {
            match role {
                Role::S => single(&mut r.s, name, "s")?,
                Role::Y => single(&mut r.y, name, "y")?,
                Role::D => single(&mut r.d, name, "d")?,
                Role::X => r.x.push(name.clone()),
                Role::M => r.m.push(name.clone()),
                Role::V => r.v.push(name.clone()),
            }
        }
        for (slot, role) in [(&r.s, "s"), (&r.y, "y"), (&r.d, "d")] {
            if slot.is_empty() {
                bail!("missing required column role {role} (use --col {role}=NAME)");
            }
        }
        if r.x.is_empty() {
            bail!("missing required column role x (use --col x=NAME)");
        }
        Ok(r)
    }
}

struct Table {
    header: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let header = rdr
            .headers()
            .with_context(|| format!("{}: cannot read header", path.display()))?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: malformed CSV", path.display()))?;
        if rows.is_empty() {
            bail!("{}: no data rows", path.display());
        }
        Ok(Self { header, rows })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header.get(name).copied().ok_or_else(|| anyhow!("column {name:?} not found in header"))
    }

    fn has(&self, name: &str) -> bool {
        self.header.contains_key(name)
    }

    /// Cell as a number; `None` when empty. Rows are reported 1-based after the header.
    fn cell(&self, row: usize, col: usize, name: &str) -> Result<Option<f64>> {
        let raw = self.rows[row].get(col).ok_or_else(|| anyhow!("row {}: missing column {name:?}", row + 1))?;
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        let v: f64 = raw.parse().map_err(|_| anyhow!("row {}, column {name:?}: cannot parse {raw:?} as a number", row + 1))?;
        if !v.is_finite() {
            bail!("row {}, column {name:?}: value must be finite", row + 1);
        }
        Ok(Some(v))
    }

    fn required(&self, row: usize, col: usize, name: &str) -> Result<f64> {
        self.cell(row, col, name)?.ok_or_else(|| anyhow!("row {}, column {name:?}: missing value", row + 1))
    }

    fn matrix(&self, names: &[String]) -> Result<Mat<f64>> {
        let idx = names.iter().map(|n| self.index(n)).collect::<Result<Vec<_>>>()?;
        let mut m = Mat::zeros(self.rows.len(), names.len());
        for i in 0..self.rows.len() {
            for (j, (&c, n)) in idx.iter().zip(names).enumerate() {
                m[(i, j)] = self.required(i, c, n)?;
            }
        }
        Ok(m)
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.index(name)?;
        (0..self.rows.len()).map(|i| self.required(i, c, name)).collect()
    }
}

/// Loaded table plus warnings to surface on stderr.
pub struct Loaded {
    pub data: Dataset,
    pub warnings: Vec<String>,
}

pub fn read_dataset(path: &Path, roles: &Roles) -> Result<Loaded> {
    let t = Table::read(path)?;
    let sc = t.index(&roles.s)?;
    let yc = t.index(&roles.y)?;
    let n = t.rows.len();
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut ignored = 0usize;
    for i in 0..n {
        let si = t.required(i, sc, &roles.s)?;
        if si != 0.0 && si != 1.0 {
            bail!("row {}, column {:?}: selection indicator must be 0 or 1, got {si}", i + 1, roles.s);
        }
        let yi = t.cell(i, yc, &roles.y)?;
        match (si == 1.0, yi) {
            (true, None) => bail!("row {}, column {:?}: outcome missing for a selected row", i + 1, roles.y),
            (false, Some(_)) => ignored += 1,
            _ => {}
        }
        s.push(si);
        y.push(yi.unwrap_or(0.0));
    }
    let d = t.vector(&roles.d)?;
    let x = t.matrix(&roles.x)?;
    let mut data = Dataset::new(s, &y, d, x)?;
    if !roles.m.is_empty() {
        data = data.with_m(t.matrix(&roles.m)?)?;
    }
    if !roles.v.is_empty() {
        data = data.with_v(t.matrix(&roles.v)?)?;
    }
    let mut warnings = Vec::new();
    if ignored > 0 {
        warnings.push(format!("{ignored} outcome value(s) on unselected rows ignored"));
    }
    Ok(Loaded { data, warnings })
}

/// Shifted-population covariates; treatment and follow-up columns are read
/// when the header carries them.
pub fn read_shifted(path: &Path, roles: &Roles) -> Result<ShiftedSample> {
    let t = Table::read(path)?;
    let x = t.matrix(&roles.x)?;
    let d = if t.has(&roles.d) { Some(t.vector(&roles.d)?) } else { None };
    let m = if !roles.m.is_empty() && roles.m.iter().all(|c| t.has(c)) { Some(t.matrix(&roles.m)?) } else { None };
    Ok(ShiftedSample { d, x, m })
}
