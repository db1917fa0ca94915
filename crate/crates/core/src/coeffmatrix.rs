//! Coefficient matrices: the input of every model call written as a weighted
//! sum of earlier model outputs and Gaussian draws.
//!
//! Layout for `n` model evaluations:
//!
//! * `col_times[j]` is the time of evaluation `j` (interior solver nodes included).
//! * `signal` has `n + 1` rows. Row `k < n` is the input of evaluation `k`,
//!   row `n` is the returned sample. Row `k` may only use outputs `j < k`.
//! * `row_times[k] = col_times[k]` for `k < n`; `row_times[n]` is the terminal time.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affine::{AffineState, NoiseId, TraceContext};
use crate::error::{Error, Result};
use crate::samplers::{run_native, SamplerSpec};
use crate::schedule::{make_grid, GridRule, Schedule, ScheduleSpec, TimeGrid};

pub const FORMAT: &str = "nimatrix/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Noise weights recorded column by column from a sampler trace.
    Traced,
    /// Row `k` carries `c1(t_k)` on the initial draw only.
    SingleTerminal,
    Custom,
}

/// Noise weights: one column per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    pub ids: Vec<NoiseId>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub schedule: ScheduleSpec,
    pub row_times: Vec<f64>,
    pub col_times: Vec<f64>,
    pub signal: Vec<Vec<f64>>,
    pub noise: Option<NoiseBlock>,
    pub noise_mode: NoiseMode,
    /// Explicit per-row signal targets used by [`normalize_rows`].
    pub row_targets: Option<Vec<f64>>,
    pub note: Option<String>,
}

impl CoefficientMatrix {
    /// Number of model evaluations.
    pub fn n_eval(&self) -> usize {
        self.col_times.len()
    }

    pub fn terminal_time(&self) -> f64 {
        *self.row_times.last().expect("validated matrix has rows")
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::from_spec(&self.schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_eval();
        let bad = |m: String| Err(Error::Validation(m));
        if n == 0 {
            return bad("matrix has no evaluations".into());
        }
        if self.row_times.len() != n + 1 {
            return bad(format!("{} row times for {n} evaluations", self.row_times.len()));
        }
        if self.row_times[..n] != self.col_times[..] {
            return bad("row times must repeat the column times".into());
        }
        if self.row_times.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("row times must be strictly decreasing".into());
        }
        let s = self.schedule()?;
        let (lo, hi) = s.domain();
        if let Some(&t) = self.row_times.iter().find(|&&t| !(t >= lo && t <= hi)) {
            return Err(Error::Domain { t, lo, hi });
        }
        if self.signal.len() != n + 1 {
            return bad(format!("{} signal rows, expected {}", self.signal.len(), n + 1));
        }
        for (k, row) in self.signal.iter().enumerate() {
            if row.len() != n {
                return bad(format!("signal row {k} has {} entries, expected {n}", row.len()));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("signal row {k} entry {v}")));
            }
            if let Some(j) = (k..n).find(|&j| row[j] != 0.0) {
                return bad(format!(
                    "row {k} uses output {j}, which is not produced before it (not lower-triangular)"
                ));
            }
        }
        if let Some(nb) = &self.noise {
            if nb.rows.len() != n + 1 {
                return bad(format!("{} noise rows, expected {}", nb.rows.len(), n + 1));
            }
            let mut ids = nb.ids.clone();
            ids.sort();
            ids.dedup();
            if ids.len() != nb.ids.len() {
                return bad("duplicate noise ids".into());
            }
            for (k, row) in nb.rows.iter().enumerate() {
                if row.len() != nb.ids.len() {
                    return bad(format!("noise row {k} has {} entries", row.len()));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("noise row {k}")));
                }
            }
        } else if self.noise_mode == NoiseMode::Traced {
            return bad("traced noise mode needs a noise block".into());
        }
        if let Some(t) = &self.row_targets {
            if t.len() != n + 1 || t.iter().any(|v| !v.is_finite()) {
                return bad("row targets must have one finite value per row".into());
            }
        }
        Ok(())
    }

    /// The noise block, materializing the single-terminal default when absent.
    pub fn effective_noise(&self) -> Result<NoiseBlock> {
        if let Some(nb) = &self.noise {
            return Ok(nb.clone());
        }
        let s = self.schedule()?;
        let rows = self
            .row_times
            .iter()
            .map(|&t| match self.noise_mode {
                NoiseMode::SingleTerminal => s.mixing_coeffs(t).map(|c| vec![c.1]),
                _ => Ok(vec![0.0]),
            })
            .collect::<Result<_>>()?;
        Ok(NoiseBlock {
            ids: vec![NoiseId::new(0, 0)],
            rows,
        })
    }

    /// Signal weights as a lower-triangular affine state per row.
    pub fn row_state(&self, k: usize) -> Result<AffineState> {
        let nb = self.effective_noise()?;
        let mut st = AffineState::default();
        for (j, &c) in self.signal[k].iter().enumerate() {
            if c != 0.0 {
                st.signal.insert(j, c);
            }
        }
        for (id, &b) in nb.ids.iter().zip(&nb.rows[k]) {
            if b != 0.0 {
                st.noise.insert(*id, b);
            }
        }
        Ok(st)
    }
}

/// Runs `spec` in trace mode over `grid`.
pub fn trace_sampler(spec: &SamplerSpec, s: &Schedule, grid: &TimeGrid) -> Result<CoefficientMatrix> {
    let mut ctx = TraceContext::new();
    let traj = run_native(spec, s, grid, &mut ctx)?;
    let out = traj
        .output
        .as_affine()
        .ok_or(Error::MixedElements)?
        .clone();
    let mut rows: Vec<AffineState> = ctx.inputs().to_vec();
    rows.push(out);
    let n = ctx.times().len();
    let mut ids: Vec<NoiseId> = rows.iter().flat_map(|r| r.noise.keys().copied()).collect();
    ids.sort();
    ids.dedup();
    let signal = rows
        .iter()
        .map(|r| {
            let mut v = vec![0.0; n];
            for (&j, &c) in &r.signal {
                v[j] = c;
            }
            v
        })
        .collect();
    let noise_rows = rows
        .iter()
        .map(|r| ids.iter().map(|id| r.noise.get(id).copied().unwrap_or(0.0)).collect())
        .collect();
    let mut row_times = ctx.times().to_vec();
    row_times.push(grid.terminal);
    let m = CoefficientMatrix {
        schedule: s.spec().clone(),
        col_times: ctx.times().to_vec(),
        row_times,
        signal,
        noise: Some(NoiseBlock {
            ids,
            rows: noise_rows,
        }),
        noise_mode: NoiseMode::Traced,
        row_targets: None,
        note: Some(format!("traced {} over {} grid intervals", spec.kind, grid.len())),
    };
    m.validate()?;
    Ok(m)
}

/// Traces `spec` with exactly `nfe` model evaluations on its default grid rule.
pub fn trace_nfe(spec: &SamplerSpec, s: &Schedule, nfe: usize, rule: GridRule) -> Result<CoefficientMatrix> {
    let mut spec = spec.clone();
    let n = spec.plan_nfe(nfe)?;
    let grid = make_grid(s, n, rule)?;
    trace_sampler(&spec, s, &grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub time: f64,
    pub equivalent_signal: f64,
    pub equivalent_noise: f64,
    pub ideal_signal: f64,
    pub ideal_noise: f64,
    pub signal_deviation: f64,
    pub noise_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalReport {
    pub rows: Vec<MarginalRow>,
}

impl MarginalReport {
    /// Largest signal or noise deviation over rows `from..`.
    pub fn max_deviation_from(&self, from: usize) -> f64 {
        self.rows[from..]
            .iter()
            .map(|r| r.signal_deviation.max(r.noise_deviation))
            .fold(0.0, f64::max)
    }

    /// Largest deviation, skipping row 0. That row is the initial draw, which
    /// is the same for every sampler and step count.
    pub fn max_deviation(&self) -> f64 {
        self.max_deviation_from(1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "time,equivalent_signal,equivalent_noise,ideal_signal,ideal_noise,signal_deviation,noise_deviation\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.time,
                r.equivalent_signal,
                r.equivalent_noise,
                r.ideal_signal,
                r.ideal_noise,
                r.signal_deviation,
                r.noise_deviation
            );
        }
        s
    }
}

/// Row sums and noise norms against the schedule's marginal coefficients.
pub fn equivalent_marginals(m: &CoefficientMatrix) -> Result<MarginalReport> {
    let s = m.schedule()?;
    let nb = m.effective_noise()?;
    let rows = m
        .row_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (c0, c1) = s.mixing_coeffs(t)?;
            let es: f64 = m.signal[k].iter().sum();
            let en = nb.rows[k].iter().map(|b| b * b).sum::<f64>().sqrt();
            Ok(MarginalRow {
                time: t,
                equivalent_signal: es,
                equivalent_noise: en,
                ideal_signal: c0,
                ideal_noise: c1,
                signal_deviation: (es - c0).abs(),
                noise_deviation: (en - c1).abs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MarginalReport { rows })
}

/// Max deviation for each step count. Counts are evaluation budgets.
pub fn deviation_trend(
    spec: &SamplerSpec,
    s: &Schedule,
    step_counts: &[usize],
    rule: GridRule,
) -> Result<Vec<f64>> {
    if step_counts.len() < 2 {
        return Err(Error::Parameter("need at least two step counts".into()));
    }
    step_counts
        .iter()
        .map(|&n| Ok(equivalent_marginals(&trace_nfe(spec, s, n, rule)?)?.max_deviation()))
        .collect()
}

/// Rescales each signal row to its target sum. Targets default to the
/// matrix's stored targets, then to `c0` of the schedule. Returns the scales.
/// Rows that cannot use any output (row 0) are left alone.
pub fn normalize_rows(m: &CoefficientMatrix, targets: Option<&[f64]>) -> Result<(CoefficientMatrix, Vec<f64>)> {
    m.validate()?;
    let s = m.schedule()?;
    let targets: Vec<f64> = match (targets, &m.row_targets) {
        (Some(t), _) => t.to_vec(),
        (None, Some(t)) => t.clone(),
        (None, None) => m
            .row_times
            .iter()
            .map(|&t| s.mixing_coeffs(t).map(|c| c.0))
            .collect::<Result<_>>()?,
    };
    if targets.len() != m.signal.len() {
        return Err(Error::Dimension(format!(
            "{} targets for {} rows",
            targets.len(),
            m.signal.len()
        )));
    }
    let mut out = m.clone();
    let mut scales = vec![1.0; m.signal.len()];
    for (k, row) in out.signal.iter_mut().enumerate() {
        if k == 0 {
            continue;
        }
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            return Err(Error::Normalization(format!(
                "row {k} (t = {}) sums to zero",
                m.row_times[k]
            )));
        }
        let f = targets[k] / sum;
        if !f.is_finite() {
            return Err(Error::Normalization(format!("row {k} scale {f}")));
        }
        if f != 1.0 {
            row.iter_mut().for_each(|v| *v *= f);
        }
        scales[k] = f;
    }
    out.row_targets = Some(targets);
    Ok((out, scales))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    schedule: ScheduleSpec,
    row_times: Vec<f64>,
    col_times: Vec<f64>,
    noise_mode: NoiseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_ids: Option<Vec<(u32, u32)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn write_rows(out: &mut String, rows: &[Vec<f64>]) {
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Text serialization: a one-line JSON header, then `signal` and optional
/// `noise` sections of whitespace-separated decimals.
pub fn to_text(m: &CoefficientMatrix) -> String {
    let h = Header {
        format: FORMAT.into(),
        schedule: m.schedule.clone(),
        row_times: m.row_times.clone(),
        col_times: m.col_times.clone(),
        noise_mode: m.noise_mode,
        noise_ids: m
            .noise
            .as_ref()
            .map(|n| n.ids.iter().map(|id| (id.step, id.draw)).collect()),
        row_targets: m.row_targets.clone(),
        note: m.note.clone(),
    };
    let mut s = serde_json::to_string(&h).expect("header serializes");
    s.push_str("\nsignal\n");
    write_rows(&mut s, &m.signal);
    if let Some(nb) = &m.noise {
        s.push_str("noise\n");
        write_rows(&mut s, &nb.rows);
    }
    s
}

pub fn from_text(text: &str) -> Result<CoefficientMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let h: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("header column {}: {e}", e.column()),
    })?;
    if h.format != FORMAT {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported format '{}'", h.format),
        });
    }
    let mut signal = vec![];
    let mut noise = vec![];
    let mut section = 0;
    for (i, line) in lines {
        let l = line.trim();
        match l {
            "signal" if section == 0 => section = 1,
            "noise" if section == 1 => section = 2,
            _ if section == 0 => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected 'signal'".into(),
                })
            }
            _ => {
                let row = l
                    .split_whitespace()
                    .enumerate()
                    .map(|(c, f)| {
                        f.parse::<f64>().map_err(|_| Error::Parse {
                            line: i + 1,
                            msg: format!("column {}: bad number '{f}'", c + 1),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if section == 1 {
                    signal.push(row);
                } else {
                    noise.push(row);
                }
            }
        }
    }
    let noise = match (section, h.noise_ids) {
        (2, Some(ids)) => Some(NoiseBlock {
            ids: ids.into_iter().map(|(s, d)| NoiseId::new(s, d)).collect(),
            rows: noise,
        }),
        (2, None) => {
            return Err(Error::Parse {
                line: 1,
                msg: "noise section without noise_ids in header".into(),
            })
        }
        _ => None,
    };
    let m = CoefficientMatrix {
        schedule: h.schedule,
        row_times: h.row_times,
        col_times: h.col_times,
        signal,
        noise,
        noise_mode: h.noise_mode,
        row_targets: h.row_targets,
        note: h.note,
    };
    m.validate()?;
    Ok(m)
}

pub fn save(m: &CoefficientMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(m))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<CoefficientMatrix> {
    from_text(&fs::read_to_string(path)?)
}

/// Flat CSV of the signal block: first row holds column times, first column row times.
pub fn to_csv(m: &CoefficientMatrix) -> String {
    let mut s = String::from("time");
    for t in &m.col_times {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    for (t, row) in m.row_times.iter().zip(&m.signal) {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::SamplerKind;

    fn tiny() -> CoefficientMatrix {
        let s = Schedule::flow();
        trace_sampler(
            &SamplerKind::FlowEuler.into(),
            &s,
            &make_grid(&s, 3, GridRule::Trailing).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn text_roundtrip_is_bitwise() {
        let s = Schedule::ddpm_default();
        let m = trace_nfe(&SamplerKind::Ddpm.into(), &s, 7, GridRule::Trailing).unwrap();
        let back = from_text(&to_text(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn upper_entry_is_rejected() {
        let mut m = tiny();
        m.signal[1][2] = 0.1;
        assert!(matches!(m.validate(), Err(Error::Validation(_))));
        assert!(from_text(&to_text(&m)).is_err());
    }

    #[test]
    fn parse_error_location() {
        let m = tiny();
        let mut lines: Vec<String> = to_text(&m).lines().map(String::from).collect();
        lines[2] = lines[2].replacen("0.0", "zero", 1);
        let text = lines.join("\n");
        match from_text(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_matrix_marginals() {
        let mut m = tiny();
        m.signal.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        m.noise.as_mut().unwrap().rows.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        let rep = equivalent_marginals(&m).unwrap();
        for r in rep.rows {
            assert_eq!(r.equivalent_signal, 0.0);
            assert_eq!(r.equivalent_noise, 0.0);
            assert_eq!(r.noise_deviation, r.ideal_noise);
        }
    }

    #[test]
    fn normalization_idempotent_and_zero_row_error() {
        let m = tiny();
        let (n1, _) = normalize_rows(&m, None).unwrap();
        let (n2, sc) = normalize_rows(&n1, None).unwrap();
        assert_eq!(n1.signal, n2.signal);
        assert!(sc.iter().all(|&f| (f - 1.0).abs() < 1e-12));
        let mut z = m.clone();
        z.signal[2] = vec![0.0; 3];
        assert!(matches!(normalize_rows(&z, None), Err(Error::Normalization(_))));
    }

    #[test]
    fn csv_export_shape() {
        let c = to_csv(&tiny());
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("time,1,"));
    }
}
