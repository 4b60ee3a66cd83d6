use serde::{Deserialize, Serialize};

use crate::error::{invalid, FbError, Result};
use crate::gather::{Frame, PickSeries};

fn comparable(t_a: &PickSeries, t_m: &PickSeries) -> Result<()> {
    if t_a.len() != t_m.len() {
        return invalid("pick series", format!("lengths {} and {} differ", t_a.len(), t_m.len()));
    }
    if t_a.frame != Frame::AbsoluteTime || t_m.frame != Frame::AbsoluteTime {
        return invalid("pick series", "metrics compare absolute-time picks");
    }
    Ok(())
}

/// Pairs picked in both series (both `>= 0`).
fn overlap<'a>(t_a: &'a PickSeries, t_m: &'a PickSeries) -> impl Iterator<Item = (i32, i32)> + 'a {
    t_a.picks
        .iter()
        .zip(&t_m.picks)
        .filter(|(a, m)| **a >= 0 && **m >= 0)
        .map(|(&a, &m)| (a, m))
}

/// Counts from which every metric is derived; adding tallies pools gathers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub traces: usize,
    pub picked: usize,
    pub compared: usize,
    pub exact: usize,
    pub within_one: usize,
    pub abs_error_sum: u64,
}

impl Tally {
    /// `t_a` automatic picks, `t_m` manual labels.
    pub fn of(t_a: &PickSeries, t_m: &PickSeries) -> Result<Self> {
        comparable(t_a, t_m)?;
        let mut t = Tally { traces: t_a.len(), picked: t_a.picked_count(), ..Default::default() };
        for (a, m) in overlap(t_a, t_m) {
            let d = a.abs_diff(m);
            t.compared += 1;
            t.exact += usize::from(d == 0);
            t.within_one += usize::from(d <= 1);
            t.abs_error_sum += u64::from(d);
        }
        Ok(t)
    }

    pub fn add(&mut self, o: &Tally) {
        self.traces += o.traces;
        self.picked += o.picked;
        self.compared += o.compared;
        self.exact += o.exact;
        self.within_one += o.within_one;
        self.abs_error_sum += o.abs_error_sum;
    }

    pub fn acc(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.exact as f64 / self.compared as f64)
    }

    pub fn acc_within_one(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.within_one as f64 / self.compared as f64)
    }

    pub fn mae(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.abs_error_sum as f64 / self.compared as f64)
    }

    pub fn apr(&self) -> f64 {
        if self.traces == 0 {
            0.0
        } else {
            self.picked as f64 / self.traces as f64
        }
    }
}

/// Mean absolute sample error over traces picked in both series.
pub fn mae(t_a: &PickSeries, t_m: &PickSeries) -> Result<f64> {
    Tally::of(t_a, t_m)?.mae().ok_or(FbError::NoComparableTraces)
}

/// Exact-match fraction over traces picked in both series.
pub fn acc(t_a: &PickSeries, t_m: &PickSeries) -> Result<f64> {
    Tally::of(t_a, t_m)?.acc().ok_or(FbError::NoComparableTraces)
}

/// Fraction of jointly picked traces within `tol` samples.
pub fn acc_within(t_a: &PickSeries, t_m: &PickSeries, tol: u32) -> Result<f64> {
    comparable(t_a, t_m)?;
    let (mut n, mut hit) = (0usize, 0usize);
    for (a, m) in overlap(t_a, t_m) {
        n += 1;
        hit += usize::from(a.abs_diff(m) <= tol);
    }
    if n == 0 {
        return Err(FbError::NoComparableTraces);
    }
    Ok(hit as f64 / n as f64)
}

/// Fraction of traces with a pick.
pub fn apr(t_a: &PickSeries) -> f64 {
    if t_a.is_empty() {
        0.0
    } else {
        t_a.picked_count() as f64 / t_a.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatherEval {
    pub gather: String,
    pub tally: Tally,
}

/// Pooled metrics over a set of gathers plus the per-gather breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: Option<f64>,
    pub acc: Option<f64>,
    pub acc_within_one: Option<f64>,
    pub apr: f64,
    pub n_compared: usize,
    pub per_gather: Vec<GatherEval>,
}

impl EvalReport {
    pub fn from_gathers(per_gather: Vec<GatherEval>) -> Self {
        let mut total = Tally::default();
        for g in &per_gather {
            total.add(&g.tally);
        }
        Self {
            mae: total.mae(),
            acc: total.acc(),
            acc_within_one: total.acc_within_one(),
            apr: total.apr(),
            n_compared: total.compared,
            per_gather,
        }
    }

    pub fn total(&self) -> Tally {
        let mut total = Tally::default();
        for g in &self.per_gather {
            total.add(&g.tally);
        }
        total
    }

    /// Header plus one row per gather and a final `all` row; undefined metrics are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gather,traces,picked,compared,mae,acc,acc_within_1,apr\n");
        let row = |s: &mut String, name: &str, t: &Tally| {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{name},{},{},{},{},{},{},{:.6}\n",
                t.traces,
                t.picked,
                t.compared,
                f(t.mae()),
                f(t.acc()),
                f(t.acc_within_one()),
                t.apr()
            ));
        };
        for g in &self.per_gather {
            row(&mut s, &g.gather, &g.tally);
        }
        row(&mut s, "all", &self.total());
        s
    }
}
