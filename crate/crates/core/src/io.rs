//! Plain-text formats: header-less comma-separated matrices (one row per
//! matrix row, `NA` for a missing label) and flat `key = value` config files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{Cutpoints, Dataset, Hyperparameters, KernelFamily, KernelSpec};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Splits CSV text into rows of trimmed fields, skipping blank lines.
/// Returns `(line_number, fields)` pairs.
fn rows(text: &str) -> Vec<(usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
        .collect()
}

fn parse_grid<T: nalgebra::Scalar + Copy>(
    text: &str,
    path: &Path,
    mut parse: impl FnMut(&str) -> Option<T>,
    zero: T,
) -> Result<DMatrix<T>> {
    let rows = rows(text);
    let Some((_, first)) = rows.first() else {
        return Ok(DMatrix::from_element(0, 0, zero));
    };
    let ncols = first.len();
    let mut m = DMatrix::from_element(rows.len(), ncols, zero);
    for (r, (line, fields)) in rows.iter().enumerate() {
        if fields.len() != ncols {
            return Err(parse_err(
                path,
                *line,
                format!("expected {ncols} fields, found {}", fields.len()),
            ));
        }
        for (c, f) in fields.iter().enumerate() {
            m[(r, c)] = parse(f)
                .ok_or_else(|| parse_err(path, *line, format!("cannot parse field {} ({f:?})", c + 1)))?;
        }
    }
    Ok(m)
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    parse_grid(text, path, |s| s.parse::<f64>().ok(), 0.0)
}

pub fn parse_int_matrix(text: &str, path: &Path) -> Result<DMatrix<i64>> {
    parse_grid(text, path, |s| s.parse::<i64>().ok(), 0)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&read_text(path)?, path)
}

pub fn read_int_matrix(path: &Path) -> Result<DMatrix<i64>> {
    parse_int_matrix(&read_text(path)?, path)
}

/// Labels as one value per line (or a single comma-separated row); `NA`
/// marks a missing label.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Option<i64>>> {
    let mut out = Vec::new();
    for (line, fields) in rows(text) {
        for f in fields {
            if f == "NA" {
                out.push(None);
            } else {
                let v = f
                    .parse::<i64>()
                    .map_err(|_| parse_err(path, line, format!("cannot parse label {f:?}")))?;
                out.push(Some(v));
            }
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<Option<i64>>> {
    parse_labels(&read_text(path)?, path)
}

pub fn format_matrix<T: nalgebra::Scalar + std::fmt::Display>(m: &DMatrix<T>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                s.push(',');
            }
            write!(s, "{}", m[(r, c)]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix<T: nalgebra::Scalar + std::fmt::Display>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn format_labels(y: &[Option<i64>]) -> String {
    let mut s = String::new();
    for v in y {
        match v {
            Some(v) => writeln!(s, "{v}").unwrap(),
            None => s.push_str("NA\n"),
        }
    }
    s
}

pub fn write_labels(path: &Path, y: &[Option<i64>]) -> Result<()> {
    write_text(path, &format_labels(y))
}

/// Two-column `key,value` tables such as metric summaries.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    rows(&text)
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 2 {
                Err(parse_err(path, line, format!("expected 2 fields, found {}", f.len())))
            } else {
                Ok((f[0].to_string(), f[1].to_string()))
            }
        })
        .collect()
}

pub fn write_key_values(path: &Path, kv: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in kv {
        writeln!(s, "{k},{v}").unwrap();
    }
    write_text(path, &s)
}

/// Writes `x.csv`, `z.csv` and, when present, `y.csv` into `dir`.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    write_matrix(&dir.join("x.csv"), &d.x)?;
    write_matrix(&dir.join("z.csv"), &d.z)?;
    if let Some(y) = &d.y {
        write_labels(&dir.join("y.csv"), y)?;
    }
    Ok(())
}

pub fn read_dataset(x: &Path, z: &Path, y: Option<&Path>) -> Result<Dataset> {
    let y = y.map(read_labels).transpose()?;
    Ok(Dataset::new(read_matrix(x)?, read_int_matrix(z)?, y))
}

/// Parsed `key = value` entries, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    pub path: PathBuf,
    pub entries: Vec<ConfigEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl ConfigMap {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(path, i + 1, "expected `key = value`"))?;
            entries.push(ConfigEntry {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&ConfigEntry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| {
                parse_err(&self.path, e.line, format!("invalid value {:?} for {key}", e.value))
            }),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !known.contains(&e.key.as_str()) {
                return Err(parse_err(&self.path, e.line, format!("unknown key {:?}", e.key)));
            }
        }
        Ok(())
    }
}

pub const HYPERPARAMETER_KEYS: &[&str] = &[
    "sigma1_sq",
    "sigma2_sq",
    "l1",
    "l2",
    "d1",
    "d2",
    "r1",
    "r2",
    "cutpoints_z",
    "cutpoints_y",
    "kernel",
    "lengthscale",
    "degree",
    "offset",
    "noise",
    "k",
    "jitter",
];

fn parse_float(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "Inf" => Some(f64::INFINITY),
        "-inf" | "-Inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

pub fn parse_cutpoints(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(parse_float).collect()
}

fn format_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn format_cutpoints(c: &Cutpoints) -> String {
    c.values().iter().map(|&v| format_float(v)).collect::<Vec<_>>().join(",")
}

impl Hyperparameters {
    /// Applies the hyperparameter keys of `cfg` on top of `self`.
    pub fn apply_config(mut self, cfg: &ConfigMap) -> Result<Self> {
        let err = |key: &str, msg: String| {
            let line = cfg.get(key).map_or(0, |e| e.line);
            parse_err(&cfg.path, line, msg)
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = cfg.parse_value::<f64>(stringify!($field))? {
                    self.$field = v;
                }
            };
        }
        set!(sigma1_sq);
        set!(sigma2_sq);
        set!(l1);
        set!(l2);
        set!(d1);
        set!(d2);
        set!(r1);
        set!(r2);
        set!(jitter);
        if let Some(k) = cfg.parse_value::<usize>("k")? {
            self.k = k;
        }
        for (key, slot) in [("cutpoints_z", &mut self.cutpoints_z), ("cutpoints_y", &mut self.cutpoints_y)] {
            if let Some(e) = cfg.get(key) {
                let values =
                    parse_cutpoints(&e.value).ok_or_else(|| err(key, format!("cannot parse {key}")))?;
                *slot = Cutpoints::new(values).map_err(|e| err(key, e.to_string()))?;
            }
        }
        let lengthscale = cfg.parse_value::<f64>("lengthscale")?;
        let degree = cfg.parse_value::<u32>("degree")?;
        let offset = cfg.parse_value::<f64>("offset")?;
        if let Some(e) = cfg.get("kernel") {
            self.kernel.family = match e.value.as_str() {
                "linear" => KernelFamily::Linear,
                "rbf" => KernelFamily::Rbf {
                    lengthscale: lengthscale.unwrap_or(1.0),
                },
                "polynomial" => KernelFamily::Polynomial {
                    degree: degree.unwrap_or(2),
                    offset: offset.unwrap_or(1.0),
                },
                other => return Err(err("kernel", format!("unknown kernel {other:?}"))),
            };
        } else {
            match &mut self.kernel.family {
                KernelFamily::Rbf { lengthscale: l } => *l = lengthscale.unwrap_or(*l),
                KernelFamily::Polynomial { degree: d, offset: o } => {
                    *d = degree.unwrap_or(*d);
                    *o = offset.unwrap_or(*o);
                }
                KernelFamily::Linear => {}
            }
        }
        if let Some(noise) = cfg.parse_value::<f64>("noise")? {
            self.kernel.noise = noise;
        }
        self.validate().map_err(|e| parse_err(&cfg.path, 0, e.to_string()))?;
        Ok(self)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let f = format_float;
        writeln!(s, "sigma1_sq = {}", f(self.sigma1_sq)).unwrap();
        writeln!(s, "sigma2_sq = {}", f(self.sigma2_sq)).unwrap();
        writeln!(s, "l1 = {}", f(self.l1)).unwrap();
        writeln!(s, "l2 = {}", f(self.l2)).unwrap();
        writeln!(s, "d1 = {}", f(self.d1)).unwrap();
        writeln!(s, "d2 = {}", f(self.d2)).unwrap();
        writeln!(s, "r1 = {}", f(self.r1)).unwrap();
        writeln!(s, "r2 = {}", f(self.r2)).unwrap();
        writeln!(s, "cutpoints_z = {}", format_cutpoints(&self.cutpoints_z)).unwrap();
        writeln!(s, "cutpoints_y = {}", format_cutpoints(&self.cutpoints_y)).unwrap();
        writeln!(s, "kernel = {}", self.kernel.name()).unwrap();
        match self.kernel.family {
            KernelFamily::Linear => {}
            KernelFamily::Rbf { lengthscale } => writeln!(s, "lengthscale = {}", f(lengthscale)).unwrap(),
            KernelFamily::Polynomial { degree, offset } => {
                writeln!(s, "degree = {degree}").unwrap();
                writeln!(s, "offset = {}", f(offset)).unwrap();
            }
        }
        writeln!(s, "noise = {}", f(self.kernel.noise)).unwrap();
        writeln!(s, "k = {}", self.k).unwrap();
        writeln!(s, "jitter = {}", f(self.jitter)).unwrap();
        s
    }
}

/// Builds hyperparameters from config text over the defaults.
pub fn hyperparameters_from_config(text: &str) -> Result<Hyperparameters> {
    let cfg = ConfigMap::parse(text, Path::new("<config>"))?;
    cfg.check_keys(HYPERPARAMETER_KEYS)?;
    Hyperparameters::default().apply_config(&cfg)
}

impl KernelSpec {
    pub fn describe(&self) -> String {
        match self.family {
            KernelFamily::Linear => format!("linear(noise={})", self.noise),
            KernelFamily::Rbf { lengthscale } => format!("rbf(lengthscale={lengthscale}, noise={})", self.noise),
            KernelFamily::Polynomial { degree, offset } => {
                format!("polynomial(degree={degree}, offset={offset}, noise={})", self.noise)
            }
        }
    }
}
