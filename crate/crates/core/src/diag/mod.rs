//! Numerical checks of the quantitative statements that accompany the
//! construction. Every check produces a [`Report`] made of keyed rows.

mod analytic;
mod checks;
mod stripes;

pub use analytic::{
    corpus, decay_lambda, harmonic_decay_check, harmonic_decay_sides, interpolation_check, interpolation_constant,
    quadratic_interpolation_constant, random_harmonic, CorpusFn, Poly,
};
pub use checks::{s2_violations, separation_check, splitting_check, tilting_check};
pub use stripes::{stripes, stripes_with_sigma, Stripe, StripeDecomposition};

use serde::Serialize;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Measured and reported, never asserted.
    Info,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub key: String,
    pub status: Status,
    pub value: f64,
    pub bound: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub check: String,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(check: &str) -> Self {
        Report { check: check.to_string(), rows: Vec::new() }
    }

    /// An asserted row.
    pub fn assert(&mut self, key: &str, ok: bool, value: f64, bound: Option<f64>, detail: impl Into<String>) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.rows.push(Row { key: key.to_string(), status, value, bound, detail: detail.into() });
    }

    pub fn info(&mut self, key: &str, value: f64, detail: impl Into<String>) {
        self.rows.push(Row { key: key.to_string(), status: Status::Info, value, bound: None, detail: detail.into() });
    }

    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.status != Status::Fail)
    }

    pub fn row(&self, key: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.key.len()).max().unwrap_or(0).max(3);
        let mut s = format!("== {} ==\n", self.check);
        for r in &self.rows {
            let st = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Info => "info",
            };
            let bound = r.bound.map(|b| format!(" (bound {b:.6e})")).unwrap_or_default();
            let _ = writeln!(s, "{st}  {:<w$}  {:>14.6e}{bound}  {}", r.key, r.value, r.detail, w = w);
        }
        s
    }
}

/// `num / den`, with `0/0 = 0` and `x/0 = ∞`.
pub(crate) fn fitted(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num.abs() <= 1e-300 {
        0.0
    } else {
        f64::INFINITY
    }
}
