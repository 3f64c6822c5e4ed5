//! Monte Carlo verification of the identities behind the uniqueness results:
//! second-moment duality, martingale normalization, pathwise agreement under shared
//! noise and equality of joint laws.

mod duality;
mod jointlaw;
mod martingale;
mod pathwise;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use duality::{
    check_duality, dual_moment_mc, dual_moment_table, filter_moment_mc, filter_moment_table,
    DualityBudget, DualityModel, TestPair,
};
pub use jointlaw::{check_joint_law, joint_law_samples, JointLawBudget, JointLawSamples};
pub use martingale::{check_martingale, MartingaleBudget};
pub use pathwise::{check_pathwise_uniqueness, pathwise_distances, PathwiseBudget};

use crate::stats::McEstimate;

/// Default statistical tolerance in standard errors.
pub const DEFAULT_SE_MULTIPLIER: f64 = 4.0;

/// Grid time for row labels, without accumulated rounding noise.
pub(crate) fn time_label(t: f64) -> String {
    format!("t={}", (t * 1e9).round() / 1e9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The budget did not give enough resolution to decide.
    Inconclusive,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }

    /// Fail dominates inconclusive, which dominates pass.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        verdicts
            .into_iter()
            .fold(Verdict::Pass, |acc, v| match (acc, v) {
                (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
                (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
                _ => Verdict::Pass,
            })
    }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub estimates: Vec<NamedEstimate>,
    /// Reference value when one side is exact.
    pub target: Option<f64>,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl NamedEstimate {
    pub fn new(name: &str, e: &McEstimate) -> Self {
        NamedEstimate {
            name: name.into(),
            mean: e.mean,
            std_error: e.std_error,
            samples: e.samples,
        }
    }

    pub fn exact(name: &str, value: f64) -> Self {
        NamedEstimate {
            name: name.into(),
            mean: value,
            std_error: 0.0,
            samples: 0,
        }
    }
}

impl ReportRow {
    /// Row with verdict `pass <=> discrepancy <= tolerance`; non-finite inputs are
    /// inconclusive.
    pub fn new(
        label: impl Into<String>,
        estimates: Vec<NamedEstimate>,
        target: Option<f64>,
        discrepancy: f64,
        tolerance: f64,
    ) -> Self {
        let verdict = if !(discrepancy.is_finite() && tolerance.is_finite()) {
            Verdict::Inconclusive
        } else if discrepancy <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ReportRow {
            label: label.into(),
            estimates,
            target,
            discrepancy,
            tolerance,
            verdict,
        }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`, inconclusive when the band is wider than
    /// `max_rel` times the larger magnitude.
    pub fn compare(
        label: impl Into<String>,
        a: NamedEstimate,
        b: NamedEstimate,
        k: f64,
        max_rel: f64,
    ) -> Self {
        let disc = (a.mean - b.mean).abs();
        let scale = a.mean.abs().max(b.mean.abs());
        // floor for exactly computed quantities that differ only by rounding
        let tol = (k * a.std_error.hypot(b.std_error)).max(1e-10 * scale);
        let target = if b.samples == 0 { Some(b.mean) } else { None };
        let mut row = ReportRow::new(label, vec![a, b], target, disc, tol);
        if row.verdict == Verdict::Pass && tol > max_rel * scale && scale > 0.0 {
            row.verdict = Verdict::Inconclusive;
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub identity: String,
    pub scenario: String,
    pub verdict: Verdict,
    pub rows: Vec<ReportRow>,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds; the only field that varies between identical runs.
    pub runtime_secs: f64,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub(crate) fn finish(
        identity: &str,
        scenario: &str,
        rows: Vec<ReportRow>,
        seeds: Vec<u64>,
        started: Instant,
    ) -> Self {
        let verdict = if rows.is_empty() {
            Verdict::Inconclusive
        } else {
            Verdict::combine(rows.iter().map(|r| r.verdict))
        };
        VerificationReport {
            identity: identity.into(),
            scenario: scenario.into(),
            verdict,
            rows,
            seeds,
            runtime_secs: started.elapsed().as_secs_f64(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text table, one row per line.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} [{}]: {:?}\n",
            self.identity, self.scenario, self.verdict
        );
        for r in &self.rows {
            let est: Vec<String> = r
                .estimates
                .iter()
                .map(|e| format!("{}={:.6}±{:.2e}", e.name, e.mean, e.std_error))
                .collect();
            s.push_str(&format!(
                "  {:<40} {:<14} |d|={:.3e} tol={:.3e}  {}\n",
                r.label,
                format!("{:?}", r.verdict),
                r.discrepancy,
                r.tolerance,
                est.join(" ")
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_combination() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Pass, Pass]), Pass);
        assert_eq!(Verdict::combine([Pass, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::combine([Inconclusive, Fail, Pass]), Fail);
        assert_eq!(Fail.exit_code(), 1);
    }

    #[test]
    fn row_rules() {
        let a = NamedEstimate {
            name: "a".into(),
            mean: 1.0,
            std_error: 0.01,
            samples: 100,
        };
        let b = NamedEstimate::exact("b", 1.03);
        assert_eq!(
            ReportRow::compare("x", a.clone(), b.clone(), 4.0, 0.5).verdict,
            Verdict::Pass
        );
        let b = NamedEstimate::exact("b", 1.05);
        assert_eq!(
            ReportRow::compare("x", a.clone(), b, 4.0, 0.5).verdict,
            Verdict::Fail
        );
        let wide = NamedEstimate {
            std_error: 1.0,
            ..a.clone()
        };
        assert_eq!(
            ReportRow::compare("x", wide, NamedEstimate::exact("b", 1.0), 4.0, 0.5).verdict,
            Verdict::Inconclusive
        );
        let nan = NamedEstimate {
            mean: f64::NAN,
            ..a
        };
        assert_eq!(
            ReportRow::compare("x", nan, NamedEstimate::exact("b", 1.0), 4.0, 0.5).verdict,
            Verdict::Inconclusive
        );
    }
}
