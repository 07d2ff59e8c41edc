//! Longitudinal panel data and treatment regimes.
//!
//! A [`Panel`] holds one cohort observed on a regular time grid: baseline
//! features `V`, time-varying features `L`, a binary absorbing treatment
//! indicator `A`, an outcome `Y` measured at the end of follow-up, and
//! optional absorbing censoring (`C`) and death/discharge (`D`) indicators.
//! Treatment is "single-jump": once a subject initiates treatment it stays
//! on (`A` is non-decreasing along the row).
//!
//! Per-time ordering within a step is `L_t`, then `C_t`, then `A_t`: the
//! features at `t` are measured first, censoring can occur next (in which
//! case `A_t` and everything later is unobserved), and the treatment
//! decision comes last.
//!
//! A [`TreatmentRegime`] is a deterministic single-jump treatment plan. It
//! may be fully specified over the horizon (`never`, `immediate`,
//! `jump_at`) or specify only a leading prefix (`no_treat_before`), leaving
//! later decisions free.
//!
//! Time indices are zero-based everywhere in the API; serialized CSV uses
//! one-based time stamps, which is the convention the file formats
//! document.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors for panel construction, validation, and (de)serialization.
#[derive(Debug, Error)]
pub enum PanelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error in {path}: {msg}")]
    Csv { path: String, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PanelError {
    PanelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One cohort on a regular time grid. See the module docs for semantics.
///
/// Stored flat and row-major; accessors hide the indexing. `delta` records
/// how many native (finest-grid) steps one step of this panel spans, so a
/// freshly simulated panel has `delta = 1` and coarsening multiplies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<S> {
    n_subjects: usize,
    horizon: usize,
    delta: usize,
    v_dim: usize,
    l_dim: usize,
    v: Vec<S>,
    l: Vec<S>,
    a: Vec<u8>,
    y: Vec<S>,
    c: Option<Vec<u8>>,
    d: Option<Vec<u8>>,
    /// Frequency weight per subject; `None` means all ones. Exact
    /// population panels (every distinct trajectory once, weighted by its
    /// probability) use this so estimators can be checked against closed
    /// forms without sampling error.
    w: Option<Vec<S>>,
}

impl<S: Scalar> Panel<S> {
    /// Build and validate a panel from flat row-major storage.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_subjects: usize,
        horizon: usize,
        v_dim: usize,
        l_dim: usize,
        v: Vec<S>,
        l: Vec<S>,
        a: Vec<u8>,
        y: Vec<S>,
        c: Option<Vec<u8>>,
        d: Option<Vec<u8>>,
        w: Option<Vec<S>>,
    ) -> Result<Self, PanelError> {
        let panel = Self {
            n_subjects,
            horizon,
            delta: 1,
            v_dim,
            l_dim,
            v,
            l,
            a,
            y,
            c,
            d,
            w,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Like [`Panel::new`] but with an explicit grid width for coarsened data.
    pub(crate) fn with_delta(mut self, delta: usize) -> Self {
        self.delta = delta;
        self
    }

    fn validate(&self) -> Result<(), PanelError> {
        let (n, t) = (self.n_subjects, self.horizon);
        if t == 0 {
            return Err(PanelError::Invalid("horizon must be at least 1".into()));
        }
        let want = |name: &str, got: usize, expect: usize| {
            if got == expect {
                Ok(())
            } else {
                Err(PanelError::Dimension(format!(
                    "{name}: expected {expect} entries, got {got}"
                )))
            }
        };
        want("v", self.v.len(), n * self.v_dim)?;
        want("l", self.l.len(), n * t * self.l_dim)?;
        want("a", self.a.len(), n * t)?;
        want("y", self.y.len(), n)?;
        if let Some(c) = &self.c {
            want("c", c.len(), n * t)?;
        }
        if let Some(d) = &self.d {
            want("d", d.len(), n * t)?;
        }
        if let Some(w) = &self.w {
            want("w", w.len(), n)?;
            if w.iter().any(|x| !x.is_finite() || *x < S::zero()) {
                return Err(PanelError::Invalid(
                    "frequency weights must be finite and non-negative".into(),
                ));
            }
        }
        for i in 0..n {
            for series in [Some(&self.a), self.c.as_ref(), self.d.as_ref()]
                .into_iter()
                .flatten()
            {
                let row = &series[i * t..(i + 1) * t];
                if row.iter().any(|&x| x > 1) {
                    return Err(PanelError::Invalid(format!(
                        "indicator out of range for subject {i}"
                    )));
                }
                if row.windows(2).any(|p| p[0] > p[1]) {
                    return Err(PanelError::Invalid(format!(
                        "indicator not absorbing for subject {i}"
                    )));
                }
            }
            if !self.censored(i) && !self.y[i].is_finite() {
                return Err(PanelError::Invalid(format!(
                    "outcome missing for uncensored subject {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Number of time points on this panel's grid.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Native steps per grid step (1 for freshly simulated data).
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn l_dim(&self) -> usize {
        self.l_dim
    }

    pub fn has_censoring(&self) -> bool {
        self.c.is_some()
    }

    pub fn has_death(&self) -> bool {
        self.d.is_some()
    }

    /// Baseline features of subject `i`.
    #[inline]
    pub fn v_row(&self, i: usize) -> &[S] {
        &self.v[i * self.v_dim..(i + 1) * self.v_dim]
    }

    /// Time-varying features of subject `i` at time `t`.
    #[inline]
    pub fn l_row(&self, i: usize, t: usize) -> &[S] {
        let base = (i * self.horizon + t) * self.l_dim;
        &self.l[base..base + self.l_dim]
    }

    #[inline]
    pub fn a_at(&self, i: usize, t: usize) -> u8 {
        self.a[i * self.horizon + t]
    }

    #[inline]
    pub fn y_of(&self, i: usize) -> S {
        self.y[i]
    }

    #[inline]
    pub fn c_at(&self, i: usize, t: usize) -> u8 {
        self.c.as_ref().map_or(0, |c| c[i * self.horizon + t])
    }

    #[inline]
    pub fn d_at(&self, i: usize, t: usize) -> u8 {
        self.d.as_ref().map_or(0, |d| d[i * self.horizon + t])
    }

    /// Frequency weight of subject `i` (1 unless population weights set).
    #[inline]
    pub fn weight(&self, i: usize) -> S {
        self.w.as_ref().map_or_else(S::one, |w| w[i])
    }

    /// Whether the subject is censored at or before the last time point,
    /// i.e. the outcome is unobserved.
    pub fn censored(&self, i: usize) -> bool {
        self.c_at(i, self.horizon - 1) == 1
    }

    /// First time index with `A = 1`, if the subject ever initiates.
    pub fn jump_time(&self, i: usize) -> Option<usize> {
        (0..self.horizon).find(|&t| self.a_at(i, t) == 1)
    }

    /// Whether subject `i` is consistent with `regime` through time `t`
    /// inclusive: treatment matches at every specified decision time and
    /// the subject is uncensored through `t`.
    pub fn follows_through(&self, regime: &TreatmentRegime, i: usize, t: usize) -> bool {
        debug_assert!(t < self.horizon);
        if self.c_at(i, t) == 1 {
            return false;
        }
        let lim = (t + 1).min(regime.specified_len());
        (0..lim).all(|j| self.a_at(i, j) == regime.specified[j])
    }

    /// Whether subject `i` follows `regime` at every specified time and is
    /// uncensored over the whole horizon (so the outcome is observed).
    pub fn follows_fully(&self, regime: &TreatmentRegime, i: usize) -> bool {
        self.follows_through(regime, i, self.horizon - 1)
    }

    /// New panel containing the given subjects, in order, duplicates
    /// allowed (bootstrap resampling).
    pub fn select(&self, subjects: &[usize]) -> Panel<S> {
        let m = subjects.len();
        let t = self.horizon;
        let mut v = Vec::with_capacity(m * self.v_dim);
        let mut l = Vec::with_capacity(m * t * self.l_dim);
        let mut a = Vec::with_capacity(m * t);
        let mut y = Vec::with_capacity(m);
        let mut c = self.c.as_ref().map(|_| Vec::with_capacity(m * t));
        let mut d = self.d.as_ref().map(|_| Vec::with_capacity(m * t));
        let mut w = self.w.as_ref().map(|_| Vec::with_capacity(m));
        for &i in subjects {
            v.extend_from_slice(self.v_row(i));
            l.extend_from_slice(&self.l[i * t * self.l_dim..(i + 1) * t * self.l_dim]);
            a.extend_from_slice(&self.a[i * t..(i + 1) * t]);
            y.push(self.y[i]);
            if let (Some(dst), Some(src)) = (c.as_mut(), self.c.as_ref()) {
                dst.extend_from_slice(&src[i * t..(i + 1) * t]);
            }
            if let (Some(dst), Some(src)) = (d.as_mut(), self.d.as_ref()) {
                dst.extend_from_slice(&src[i * t..(i + 1) * t]);
            }
            if let (Some(dst), Some(src)) = (w.as_mut(), self.w.as_ref()) {
                dst.push(src[i]);
            }
        }
        Panel {
            n_subjects: m,
            horizon: t,
            delta: self.delta,
            v_dim: self.v_dim,
            l_dim: self.l_dim,
            v,
            l,
            a,
            y,
            c,
            d,
            w,
        }
    }

    /// Restrict the panel to the given time indices (ascending). Used by
    /// the coarsening module; indicators stay absorbing because they are
    /// absorbing on the finer grid.
    pub(crate) fn subset_times(&self, times: &[usize], new_delta: usize) -> Panel<S> {
        let n = self.n_subjects;
        let t_new = times.len();
        let mut l = Vec::with_capacity(n * t_new * self.l_dim);
        let mut a = Vec::with_capacity(n * t_new);
        let mut c = self.c.as_ref().map(|_| Vec::with_capacity(n * t_new));
        let mut d = self.d.as_ref().map(|_| Vec::with_capacity(n * t_new));
        for i in 0..n {
            for &t in times {
                l.extend_from_slice(self.l_row(i, t));
                a.push(self.a_at(i, t));
                if let Some(dst) = c.as_mut() {
                    dst.push(self.c_at(i, t));
                }
                if let Some(dst) = d.as_mut() {
                    dst.push(self.d_at(i, t));
                }
            }
        }
        Panel {
            n_subjects: n,
            horizon: t_new,
            delta: new_delta,
            v_dim: self.v_dim,
            l_dim: self.l_dim,
            v: self.v.clone(),
            l,
            a,
            y: self.y.clone(),
            c,
            d,
            w: self.w.clone(),
        }
    }

    /// Write the panel to `"<prefix>_panel.csv"` and outcomes to
    /// `"<prefix>_outcomes.csv"`.
    ///
    /// Panel columns: `subject_id,t,v1..vp,l1..lq,a[,c][,d]`, one row per
    /// (subject, time) with one-based `t`. Outcome columns: `subject_id,y`
    /// with an empty `y` field when the outcome is unobserved. Baseline
    /// features repeat on every row of a subject. Output is byte-stable:
    /// floats use the shortest round-trip decimal form.
    pub fn write_csv(&self, prefix: &Path) -> Result<(), PanelError> {
        let panel_path = with_suffix(prefix, "_panel.csv");
        let out_path = with_suffix(prefix, "_outcomes.csv");

        let mut header = String::from("subject_id,t");
        for k in 0..self.v_dim {
            let _ = write!(header, ",v{}", k + 1);
        }
        for k in 0..self.l_dim {
            let _ = write!(header, ",l{}", k + 1);
        }
        header.push_str(",a");
        if self.c.is_some() {
            header.push_str(",c");
        }
        if self.d.is_some() {
            header.push_str(",d");
        }

        let file = File::create(&panel_path).map_err(|e| io_err(&panel_path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{header}").map_err(|e| io_err(&panel_path, e))?;
        let mut line = String::new();
        for i in 0..self.n_subjects {
            for t in 0..self.horizon {
                line.clear();
                let _ = write!(line, "{},{}", i, t + 1);
                for x in self.v_row(i) {
                    let _ = write!(line, ",{x}");
                }
                for x in self.l_row(i, t) {
                    let _ = write!(line, ",{x}");
                }
                let _ = write!(line, ",{}", self.a_at(i, t));
                if self.c.is_some() {
                    let _ = write!(line, ",{}", self.c_at(i, t));
                }
                if self.d.is_some() {
                    let _ = write!(line, ",{}", self.d_at(i, t));
                }
                writeln!(out, "{line}").map_err(|e| io_err(&panel_path, e))?;
            }
        }
        out.flush().map_err(|e| io_err(&panel_path, e))?;

        let file = File::create(&out_path).map_err(|e| io_err(&out_path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "subject_id,y").map_err(|e| io_err(&out_path, e))?;
        for i in 0..self.n_subjects {
            if self.y[i].is_finite() {
                writeln!(out, "{},{}", i, self.y[i]).map_err(|e| io_err(&out_path, e))?;
            } else {
                writeln!(out, "{i},").map_err(|e| io_err(&out_path, e))?;
            }
        }
        out.flush().map_err(|e| io_err(&out_path, e))?;
        Ok(())
    }

    /// Read a panel written in the layout documented on [`Panel::write_csv`].
    ///
    /// Feature dimensionality is inferred from the header (`v1..vp`,
    /// `l1..lq`); `c` and `d` columns are optional. Subjects are ordered by
    /// first appearance; every subject must have the same, contiguous,
    /// one-based time sequence.
    pub fn read_csv(panel_path: &Path, outcomes_path: &Path) -> Result<Self, PanelError> {
        let csv_err = |msg: String| PanelError::Csv {
            path: panel_path.display().to_string(),
            msg,
        };

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(panel_path)
            .map_err(|e| csv_err(e.to_string()))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(e.to_string()))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.first() != Some(&"subject_id") || cols.get(1) != Some(&"t") {
            return Err(csv_err(
                "header must start with subject_id,t".to_string(),
            ));
        }
        let v_dim = cols.iter().filter(|c| c.starts_with('v')).count();
        let l_dim = cols.iter().filter(|c| c.starts_with('l')).count();
        let expect: Vec<String> = {
            let mut e = vec!["subject_id".into(), "t".into()];
            e.extend((1..=v_dim).map(|k| format!("v{k}")));
            e.extend((1..=l_dim).map(|k| format!("l{k}")));
            e.push("a".into());
            e
        };
        if cols.len() < expect.len() || cols[..expect.len()] != expect[..] {
            return Err(csv_err(format!(
                "unexpected header {:?}; want subject_id,t,v1..v{v_dim},l1..l{l_dim},a[,c][,d]",
                cols
            )));
        }
        let has_c = cols.get(expect.len()) == Some(&"c");
        let d_pos = expect.len() + usize::from(has_c);
        let has_d = cols.get(d_pos) == Some(&"d");
        if cols.len() > d_pos + usize::from(has_d) {
            return Err(csv_err("trailing unrecognized columns".to_string()));
        }

        struct SubjectBuf<S> {
            v: Vec<S>,
            l: Vec<S>,
            a: Vec<u8>,
            c: Vec<u8>,
            d: Vec<u8>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        let mut subjects: Vec<SubjectBuf<S>> = Vec::new();

        for (line_no, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(e.to_string()))?;
            let fail = |msg: &str| csv_err(format!("record {}: {msg}", line_no + 2));
            let id = rec.get(0).ok_or_else(|| fail("missing subject_id"))?;
            let t: usize = rec
                .get(1)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| fail("bad t"))?;
            let si = *index.entry(id.to_string()).or_insert_with(|| {
                order.push(id.to_string());
                subjects.push(SubjectBuf {
                    v: Vec::new(),
                    l: Vec::new(),
                    a: Vec::new(),
                    c: Vec::new(),
                    d: Vec::new(),
                });
                subjects.len() - 1
            });
            let buf = &mut subjects[si];
            if t != buf.a.len() + 1 {
                return Err(fail(&format!(
                    "subject {id}: expected t = {}, found {t}",
                    buf.a.len() + 1
                )));
            }
            let num = |k: usize| -> Result<S, PanelError> {
                rec.get(k)
                    .and_then(|x| x.parse::<f64>().ok())
                    .map(S::of)
                    .ok_or_else(|| fail(&format!("bad numeric field {}", k + 1)))
            };
            let bit = |k: usize| -> Result<u8, PanelError> {
                match rec.get(k) {
                    Some("0") => Ok(0),
                    Some("1") => Ok(1),
                    _ => Err(fail(&format!("bad indicator field {}", k + 1))),
                }
            };
            if t == 1 {
                for k in 0..v_dim {
                    buf.v.push(num(2 + k)?);
                }
            }
            for k in 0..l_dim {
                buf.l.push(num(2 + v_dim + k)?);
            }
            buf.a.push(bit(2 + v_dim + l_dim)?);
            if has_c {
                buf.c.push(bit(expect.len())?);
            }
            if has_d {
                buf.d.push(bit(d_pos)?);
            }
        }
        if subjects.is_empty() {
            return Err(csv_err("no data rows".to_string()));
        }
        let horizon = subjects[0].a.len();
        if subjects.iter().any(|s| s.a.len() != horizon) {
            return Err(csv_err("subjects have unequal horizons".to_string()));
        }

        // Outcomes from the sibling file, keyed by subject id.
        let mut y_map: std::collections::HashMap<String, Option<f64>> =
            std::collections::HashMap::new();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(outcomes_path)
            .map_err(|e| PanelError::Csv {
                path: outcomes_path.display().to_string(),
                msg: e.to_string(),
            })?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| PanelError::Csv {
                path: outcomes_path.display().to_string(),
                msg: e.to_string(),
            })?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let y = match rec.get(1) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<f64>().map_err(|_| PanelError::Csv {
                    path: outcomes_path.display().to_string(),
                    msg: format!("bad outcome for subject {id}"),
                })?),
            };
            y_map.insert(id, y);
        }

        let n = subjects.len();
        let mut v = Vec::with_capacity(n * v_dim);
        let mut l = Vec::with_capacity(n * horizon * l_dim);
        let mut a = Vec::with_capacity(n * horizon);
        let mut c = has_c.then(|| Vec::with_capacity(n * horizon));
        let mut d = has_d.then(|| Vec::with_capacity(n * horizon));
        let mut y = Vec::with_capacity(n);
        for (id, buf) in order.iter().zip(subjects) {
            v.extend(buf.v);
            l.extend(buf.l);
            a.extend(buf.a);
            if let Some(dst) = c.as_mut() {
                dst.extend(buf.c);
            }
            if let Some(dst) = d.as_mut() {
                dst.extend(buf.d);
            }
            let yi = y_map.get(id).copied().flatten();
            y.push(yi.map_or_else(S::nan, S::of));
        }
        Panel::new(n, horizon, v_dim, l_dim, v, l, a, y, c, d, None)
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    std::path::PathBuf::from(s)
}

/// Deterministic single-jump treatment plan over a time grid.
///
/// `specified` holds the planned treatment for the leading `specified_len`
/// time points; decisions after that are left free ("unspecified tail").
/// Values are non-decreasing with at most one 0→1 jump, matching the
/// absorbing treatment process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentRegime {
    specified: Vec<u8>,
    horizon: usize,
}

impl TreatmentRegime {
    /// Never initiate treatment over a horizon of `horizon` points.
    pub fn never(horizon: usize) -> Self {
        Self {
            specified: vec![0; horizon],
            horizon,
        }
    }

    /// Initiate treatment at the first time point.
    pub fn immediate(horizon: usize) -> Self {
        Self {
            specified: vec![1; horizon],
            horizon,
        }
    }

    /// Withhold treatment before time index `jump` (zero-based), initiate
    /// at `jump`, and stay on.
    pub fn jump_at(jump: usize, horizon: usize) -> Result<Self, PanelError> {
        if jump >= horizon {
            return Err(PanelError::InvalidRegime(format!(
                "jump index {jump} outside horizon {horizon}"
            )));
        }
        let mut specified = vec![0; horizon];
        specified[jump..].fill(1);
        Ok(Self { specified, horizon })
    }

    /// Withhold treatment through the first `k` time points and leave the
    /// remaining decisions unspecified.
    pub fn no_treat_before(k: usize, horizon: usize) -> Result<Self, PanelError> {
        if k == 0 || k > horizon {
            return Err(PanelError::InvalidRegime(format!(
                "prefix length {k} outside 1..={horizon}"
            )));
        }
        Self::from_specified(vec![0; k], horizon)
    }

    /// Build from an explicit specified prefix (values 0/1, non-decreasing).
    pub fn from_specified(specified: Vec<u8>, horizon: usize) -> Result<Self, PanelError> {
        if specified.is_empty() || specified.len() > horizon {
            return Err(PanelError::InvalidRegime(format!(
                "specified prefix length {} outside 1..={horizon}",
                specified.len()
            )));
        }
        if specified.iter().any(|&x| x > 1) {
            return Err(PanelError::InvalidRegime("values must be 0/1".into()));
        }
        if specified.windows(2).any(|p| p[0] > p[1]) {
            return Err(PanelError::InvalidRegime(
                "treatment plan must be non-decreasing (single jump)".into(),
            ));
        }
        Ok(Self { specified, horizon })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of leading time points with a planned decision.
    pub fn specified_len(&self) -> usize {
        self.specified.len()
    }

    pub fn fully_specified(&self) -> bool {
        self.specified.len() == self.horizon
    }

    /// Planned value at time `t`, or `None` in the unspecified tail.
    pub fn value_at(&self, t: usize) -> Option<u8> {
        self.specified.get(t).copied()
    }

    /// First time index with planned treatment 1, if any.
    pub fn jump_index(&self) -> Option<usize> {
        self.specified.iter().position(|&x| x == 1)
    }

    pub fn specified(&self) -> &[u8] {
        &self.specified
    }
}
