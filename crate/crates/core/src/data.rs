//! Right-censored cohort data, risk-set indexing and step functions.
//!
//! Times are stored as given (no rescaling). The treatment effect estimated
//! downstream is a hazard difference, so its unit is 1/time.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An immutable cohort of `(X_i, δ_i, D_i, Z_i)` rows with study horizon `tau`.
///
/// Follow-up beyond `tau` is truncated on construction: `X_i > tau` becomes
/// `X_i = tau` with `δ_i = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    treatments: Vec<bool>,
    covariates: DMatrix<f64>,
    tau: f64,
}

impl SurvivalDataset {
    /// Validates and builds a dataset. When `tau` is `None` the largest time is used.
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        treatments: Vec<bool>,
        covariates: DMatrix<f64>,
        tau: Option<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 subjects, got {n}")));
        }
        if events.len() != n || treatments.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: times {n}, events {}, treatments {}, covariate rows {}",
                events.len(),
                treatments.len(),
                covariates.nrows()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::InvalidData("need at least one covariate".into()));
        }
        for (row, t) in times.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFiniteValue { column: "time".into(), row });
            }
            if *t < 0.0 {
                return Err(Error::InvalidData(format!("row {row}: negative time {t}")));
            }
        }
        if let Some((idx, _)) = covariates.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                column: format!("z{}", idx / n + 1),
                row: idx % n,
            });
        }
        let tau = match tau {
            Some(t) => t,
            None => times.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidData(format!("tau must be positive, got {tau}")));
        }
        let mut times = times;
        let mut events = events;
        for (t, e) in times.iter_mut().zip(events.iter_mut()) {
            if *t > tau {
                *t = tau;
                *e = false;
            }
        }
        Ok(Self {
            times,
            events,
            treatments,
            covariates,
            tau,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn treatments(&self) -> &[bool] {
        &self.treatments
    }

    /// Covariates, one row per subject (column-major storage).
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    #[inline]
    pub fn event(&self, i: usize) -> f64 {
        if self.events[i] {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn treatment(&self, i: usize) -> f64 {
        if self.treatments[i] {
            1.0
        } else {
            0.0
        }
    }

    /// `Z_i' b` for every subject. Zero coefficients are skipped.
    pub fn linear_predictor(&self, coef: &[f64]) -> Vec<f64> {
        assert_eq!(coef.len(), self.p());
        let mut out = vec![0.0; self.n()];
        for (j, &b) in coef.iter().enumerate() {
            if b != 0.0 {
                for (o, z) in out.iter_mut().zip(self.covariates.column(j).iter()) {
                    *o += b * z;
                }
            }
        }
        out
    }

    /// Counting process `N_i(t) = δ_i I(X_i ≤ t)`.
    pub fn counting(&self, i: usize, t: f64) -> f64 {
        if self.events[i] && self.times[i] <= t {
            1.0
        } else {
            0.0
        }
    }

    /// At-risk process `Y_i(t) = I(X_i ≥ t)`.
    pub fn at_risk(&self, i: usize, t: f64) -> f64 {
        if self.times[i] >= t {
            1.0
        } else {
            0.0
        }
    }

    /// Rows `idx` as a new dataset with the same horizon.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let p = self.p();
        let covariates = DMatrix::from_fn(idx.len(), p, |r, c| self.covariates[(idx[r], c)]);
        Self {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            events: idx.iter().map(|&i| self.events[i]).collect(),
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            covariates,
            tau: self.tau,
        }
    }

    /// Same subjects with every time and the horizon multiplied by `c > 0`.
    pub fn rescale_time(&self, c: f64) -> Self {
        assert!(c > 0.0);
        Self {
            times: self.times.iter().map(|t| t * c).collect(),
            tau: self.tau * c,
            ..self.clone()
        }
    }

    /// Administrative truncation at `s`: `X_i > s` becomes `X_i = s, δ_i = 0`
    /// and the horizon becomes `min(τ, s)`.
    pub fn truncate(&self, s: f64) -> Self {
        assert!(s > 0.0);
        if s >= self.tau {
            return self.clone();
        }
        let mut out = self.clone();
        out.tau = s;
        for (t, e) in out.times.iter_mut().zip(out.events.iter_mut()) {
            if *t > s {
                *t = s;
                *e = false;
            }
        }
        out
    }

    /// Replaces the covariate matrix, keeping outcomes and treatment.
    pub fn with_covariates(&self, covariates: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.events.clone(),
            self.treatments.clone(),
            covariates,
            Some(self.tau),
        )
    }

    /// Replaces the treatment flags.
    pub fn with_treatments(&self, treatments: Vec<bool>) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.events.clone(),
            treatments,
            self.covariates.clone(),
            Some(self.tau),
        )
    }

    /// Writes the dataset in the `time,status,treatment,z1,...,zp` layout.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string(), "status".into(), "treatment".into()];
        header.extend((1..=self.p()).map(|j| format!("z{j}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = vec![
                format!("{}", self.times[i]),
                format!("{}", u8::from(self.events[i])),
                format!("{}", u8::from(self.treatments[i])),
            ];
            rec.extend((0..self.p()).map(|j| format!("{}", self.covariates[(i, j)])));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Reads a cohort from a CSV with header `time,status,treatment,z1,...,zp`.
pub fn load_csv(path: impl AsRef<Path>, tau: Option<f64>) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, tau)
}

/// Same as [`load_csv`] for any reader.
pub fn read_csv<R: std::io::Read>(reader: R, tau: Option<f64>) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .iter()
        .map(|s| s.trim_start_matches('\u{feff}').to_string())
        .collect();
    for (pos, name) in ["time", "status", "treatment"].iter().enumerate() {
        match header.get(pos) {
            Some(h) if h == name => {}
            Some(h) => {
                return Err(Error::MalformedHeader(format!(
                    "expected column `{name}` at position {}, found `{h}`",
                    pos + 1
                )))
            }
            None => return Err(Error::MalformedHeader(format!("missing column `{name}`"))),
        }
    }
    if header.len() < 4 {
        return Err(Error::MalformedHeader("missing column `z1`".into()));
    }
    for (j, h) in header[3..].iter().enumerate() {
        let want = format!("z{}", j + 1);
        if *h != want {
            return Err(Error::MalformedHeader(format!(
                "expected column `{want}` at position {}, found `{h}`",
                j + 4
            )));
        }
    }
    let p = header.len() - 3;
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut treatments = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidData(format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::InvalidData(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let parse = |col: usize| -> Result<f64> {
            rec[col]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonFiniteValue {
                    column: header[col].clone(),
                    row,
                })
        };
        let binary = |col: usize| -> Result<bool> {
            let v = parse(col)?;
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(Error::NonBinaryColumn {
                    column: header[col].clone(),
                    row,
                    value: v,
                })
            }
        };
        times.push(parse(0)?);
        events.push(binary(1)?);
        treatments.push(binary(2)?);
        for col in 3..header.len() {
            z.push(parse(col)?);
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let covariates = DMatrix::from_row_slice(times.len(), p, &z);
    SurvivalDataset::new(times, events, treatments, covariates, tau)
}

/// Subjects grouped by distinct observed time, with at-risk counts.
///
/// Distinct time `u_k` opens the segment `(u_{k-1}, u_k]` (with `u_{-1} = 0`)
/// on which the risk set is constant and equal to `{i : X_i >= u_k}`, i.e. the
/// subjects in groups `k..`. At a tied time all events see the full risk set
/// and censored subjects leave afterwards.
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    order: Vec<usize>,
    distinct: Vec<f64>,
    group_start: Vec<usize>,
    at_risk: Vec<usize>,
    n_events: Vec<usize>,
    group_of: Vec<usize>,
}

impl RiskSetIndex {
    pub fn new(data: &SurvivalDataset) -> Self {
        Self::from_times(data.times(), data.events())
    }

    pub fn from_times(times: &[f64], events: &[bool]) -> Self {
        let n = times.len();
        let mut order: Vec<usize> = (0..n).collect();
        // events before censorings inside a tie
        order.sort_by(|&a, &b| {
            times[a]
                .total_cmp(&times[b])
                .then(events[b].cmp(&events[a]))
                .then(a.cmp(&b))
        });
        let mut distinct = Vec::new();
        let mut group_start = Vec::new();
        let mut n_events = Vec::new();
        let mut group_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            if distinct.last() != Some(&times[i]) {
                distinct.push(times[i]);
                group_start.push(pos);
                n_events.push(0);
            }
            let g = distinct.len() - 1;
            group_of[i] = g;
            if events[i] {
                n_events[g] += 1;
            }
        }
        group_start.push(n);
        let at_risk = group_start[..distinct.len()].iter().map(|s| n - s).collect();
        Self {
            order,
            distinct,
            group_start,
            at_risk,
            n_events,
            group_of,
        }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Permutation sorting subjects by time.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Distinct observed times, ascending.
    pub fn distinct_times(&self) -> &[f64] {
        &self.distinct
    }

    pub fn n_groups(&self) -> usize {
        self.distinct.len()
    }

    /// Subjects whose time equals `distinct_times()[g]`.
    pub fn group(&self, g: usize) -> &[usize] {
        &self.order[self.group_start[g]..self.group_start[g + 1]]
    }

    /// Subjects at risk at `distinct_times()[g]`.
    pub fn risk_set(&self, g: usize) -> &[usize] {
        &self.order[self.group_start[g]..]
    }

    /// Group index of subject `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    /// `#{X_i >= u_g}` for every distinct time.
    pub fn at_risk_counts(&self) -> &[usize] {
        &self.at_risk
    }

    pub fn event_counts(&self) -> &[usize] {
        &self.n_events
    }

    /// Length of the segment ending at distinct time `g`.
    #[inline]
    pub fn segment_length(&self, g: usize) -> f64 {
        if g == 0 {
            self.distinct[0]
        } else {
            self.distinct[g] - self.distinct[g - 1]
        }
    }

    /// Distinct times with at least one event.
    pub fn event_times(&self) -> Vec<f64> {
        self.distinct
            .iter()
            .zip(&self.n_events)
            .filter(|(_, &e)| e > 0)
            .map(|(t, _)| *t)
            .collect()
    }

    /// At-risk counts at the event times.
    pub fn event_at_risk_counts(&self) -> Vec<usize> {
        self.at_risk
            .iter()
            .zip(&self.n_events)
            .filter(|(_, &e)| e > 0)
            .map(|(r, _)| *r)
            .collect()
    }

    /// `Σ_i Y_i(t)` for an arbitrary `t`.
    pub fn at_risk_at(&self, t: f64) -> usize {
        let g = self.distinct.partition_point(|&u| u < t);
        if g == self.distinct.len() {
            0
        } else {
            self.at_risk[g]
        }
    }

    /// Per group, `Σ_{i at risk} value(i)`, accumulated from the largest time down.
    pub fn risk_sums(&self, value: impl Fn(usize) -> f64) -> Vec<f64> {
        let m = self.n_groups();
        let mut out = vec![0.0; m];
        let mut acc = 0.0;
        for g in (0..m).rev() {
            for &i in self.group(g) {
                acc += value(i);
            }
            out[g] = acc;
        }
        out
    }

    /// Per group, `Σ_{i in group, δ_i = 1} value(i)`.
    pub fn event_sums(&self, events: &[bool], value: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.n_groups())
            .map(|g| {
                self.group(g)
                    .iter()
                    .filter(|&&i| events[i])
                    .map(|&i| value(i))
                    .sum()
            })
            .collect()
    }
}

/// Right-continuous piecewise-constant function, zero before its first knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidData("knots/values length mismatch".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData("knots must be strictly increasing".into()));
        }
        Ok(Self { knots, values })
    }

    /// Builds the cumulative sum of `increments` placed at `knots`.
    /// Knots must be non-decreasing; equal knots are merged.
    pub fn from_increments(knots: &[f64], increments: &[f64]) -> Result<Self> {
        if knots.len() != increments.len() {
            return Err(Error::InvalidData("knots/increments length mismatch".into()));
        }
        let mut k = Vec::with_capacity(knots.len());
        let mut v: Vec<f64> = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        for (&t, &d) in knots.iter().zip(increments) {
            acc += d;
            match k.last() {
                Some(&last) if last == t => *v.last_mut().unwrap() = acc,
                Some(&last) if last > t => {
                    return Err(Error::InvalidData("knots must be non-decreasing".into()))
                }
                _ => {
                    k.push(t);
                    v.push(acc);
                }
            }
        }
        Ok(Self { knots: k, values: v })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let pos = self.knots.partition_point(|&u| u <= t);
        if pos == 0 {
            0.0
        } else {
            self.values[pos - 1]
        }
    }

    /// Jump sizes at each knot.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }

    pub fn total_variation(&self) -> f64 {
        self.increments().iter().map(|d| d.abs()).sum()
    }

    /// `∫ f(t) dF(t)` summed over the jumps, with `f` evaluated at each knot.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.knots
            .iter()
            .zip(self.increments())
            .map(|(&t, d)| f(t) * d)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "value"]).map_err(csv_err)?;
        for (t, v) in self.knots.iter().zip(&self.values) {
            wtr.write_record([format!("{t}"), format!("{v}")])
                .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(times: &[f64], events: &[u8]) -> SurvivalDataset {
        let n = times.len();
        SurvivalDataset::new(
            times.to_vec(),
            events.iter().map(|&e| e == 1).collect(),
            (0..n).map(|i| i % 2 == 0).collect(),
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            None,
        )
        .unwrap()
    }

    #[test]
    fn csv_three_rows() {
        let text = "time,status,treatment,z1\n1.0,1,1,0.1\n2.0,0,0,-0.2\n0.5,1,1,0.3\n";
        let d = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 1);
        assert_eq!(d.tau(), 2.0);
        assert_eq!(d.covariates()[(1, 0)], -0.2);
    }

    #[test]
    fn csv_non_binary_status() {
        let text = "time,status,treatment,z1\n1.0,2,1,0.1\n2.0,0,0,-0.2\n";
        assert!(matches!(
            read_csv(text.as_bytes(), None),
            Err(Error::NonBinaryColumn { .. })
        ));
    }

    #[test]
    fn csv_truncates_at_tau() {
        let text = "time,status,treatment,z1\n5.0,1,1,0.1\n1.0,1,0,-0.2\n";
        let d = read_csv(text.as_bytes(), Some(2.0)).unwrap();
        assert_eq!(d.time(0), 2.0);
        assert_eq!(d.event(0), 0.0);
        assert_eq!(d.event(1), 1.0);
    }

    #[test]
    fn csv_errors() {
        let missing = "time,status,z1\n1,1,0\n";
        match read_csv(missing.as_bytes(), None) {
            Err(Error::MalformedHeader(m)) => assert!(m.contains("treatment")),
            other => panic!("{other:?}"),
        }
        let nan = "time,status,treatment,z1\n1,1,0,nan\n2,1,0,1\n";
        assert!(matches!(
            read_csv(nan.as_bytes(), None),
            Err(Error::NonFiniteValue { .. })
        ));
        let empty = "time,status,treatment,z1\n";
        assert_eq!(read_csv(empty.as_bytes(), None), Err(Error::EmptyDataset));
    }

    #[test]
    fn risk_index_all_events() {
        let d = toy(&[1.0, 2.0, 3.0], &[1, 1, 1]);
        let idx = RiskSetIndex::new(&d);
        assert_eq!(idx.event_times(), vec![1.0, 2.0, 3.0]);
        assert_eq!(idx.event_at_risk_counts(), vec![3, 2, 1]);
    }

    #[test]
    fn risk_index_ties() {
        let d = toy(&[1.0, 1.0, 2.0], &[1, 0, 1]);
        let idx = RiskSetIndex::new(&d);
        assert_eq!(idx.event_times(), vec![1.0, 2.0]);
        assert_eq!(idx.event_at_risk_counts(), vec![3, 1]);
        // direct counting over a probe grid
        for k in 0..=25 {
            let t = k as f64 * 0.1;
            let direct = d.times().iter().filter(|&&x| x >= t).count();
            assert_eq!(idx.at_risk_at(t), direct, "t = {t}");
        }
    }

    #[test]
    fn risk_index_no_events() {
        let d = toy(&[1.0, 2.0, 3.0], &[0, 0, 0]);
        let idx = RiskSetIndex::new(&d);
        assert!(idx.event_times().is_empty());
    }

    #[test]
    fn step_function_eval_and_variation() {
        let s = StepFunction::from_increments(&[1.0, 2.0, 2.0, 3.0], &[0.5, -0.25, 0.5, 1.0]).unwrap();
        assert_eq!(s.knots(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.eval(0.99), 0.0);
        assert_eq!(s.eval(1.0), 0.5);
        assert_eq!(s.eval(2.5), 0.75);
        assert_eq!(s.eval(10.0), 1.75);
        assert_eq!(s.total_variation(), 0.5 + 0.25 + 1.0);
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.0, 1.0]).is_err());
    }
}
