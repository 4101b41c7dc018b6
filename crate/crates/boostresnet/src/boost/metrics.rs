//! Per-round metric records and their CSV form.

use crate::error::{Error, Result};

pub const ROUNDS_SCHEMA_BINARY: &str = "boostresnet.rounds.v1";
pub const ROUNDS_SCHEMA_MULTICLASS: &str = "boostresnet.rounds.multiclass.v1";

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Edge of the new hypothesis module under the current distribution/costs.
    pub edge: f64,
    /// Normalized improvement gamma_t (negative when the edge regressed).
    pub gamma: f64,
    pub alpha: f64,
    /// Binary: per-round normalizer Z_t. Multiclass: the unnormalized state
    /// sum after the round.
    pub z: f64,
    /// Binary: product of Z_t so far. Multiclass: product of the per-round
    /// ratios, i.e. the state sum over its value at round start (m*(C-1)).
    pub z_product: f64,
    pub train_err: f64,
    /// exp(-0.5 * sum of max(gamma, 0)^2 over rounds so far).
    pub train_err_bound: f64,
    /// Covariance of the proof's two per-example exponential factors; its
    /// sign gates the per-round Z bound.
    pub covariance: f64,
    /// Multiclass only: mean exponential loss (1/m) sum_i L_exp(i).
    pub exp_loss: Option<f64>,
    /// The measured edge hit the clamp at +-(1 - 1e-9).
    pub saturated: bool,
    /// |sum_i D_{t+1}(i) y_i o_{t+1}(x_i)| after reweighting, the residual of
    /// the line-search stationarity condition (binary loop only; zero when
    /// alpha was not an interior exact minimizer). The per-round bound
    /// Z_t <= sqrt(1 - impr_t) inherits an error of roughly
    /// residual_{t-1} * sinh(alpha_t-1) from the previous round.
    pub stationarity_residual: f64,
    /// The proof's second factor E[exp(alpha_t y o_t)] under the current
    /// weighting: with nonpositive covariance,
    /// Z_t <= (cosh(a) - sinh(a) * edge) * prev_exp_moment holds at the used
    /// alpha, round by round.
    pub prev_exp_moment: f64,
    pub wallclock_ms: u64,
}

impl RoundRecord {
    pub fn covariance_sign(&self) -> i32 {
        if self.covariance > 0.0 {
            1
        } else if self.covariance < 0.0 {
            -1
        } else {
            0
        }
    }
}

/// Whether metric files carry measured wallclock or a fixed zero. Zero keeps
/// reruns byte-identical; measured timing is opt-in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Zero,
    Measured,
}

/// Render records as CSV. First line is the schema version, then the header.
/// The multiclass schema appends exp_loss before wallclock_ms.
pub fn rounds_csv(records: &[RoundRecord], multiclass: bool, timing: TimingMode) -> String {
    let mut out = String::new();
    if multiclass {
        out.push_str(&format!("# schema: {ROUNDS_SCHEMA_MULTICLASS}\n"));
        out.push_str("round,edge,gamma,alpha,z,z_product,train_err,train_err_bound,covariance_sign,exp_loss,wallclock_ms\n");
    } else {
        out.push_str(&format!("# schema: {ROUNDS_SCHEMA_BINARY}\n"));
        out.push_str("round,edge,gamma,alpha,z,z_product,train_err,train_err_bound,covariance_sign,wallclock_ms\n");
    }
    for r in records {
        let ms = match timing {
            TimingMode::Zero => 0,
            TimingMode::Measured => r.wallclock_ms,
        };
        if multiclass {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.edge,
                r.gamma,
                r.alpha,
                r.z,
                r.z_product,
                r.train_err,
                r.train_err_bound,
                r.covariance_sign(),
                r.exp_loss.unwrap_or(f64::NAN),
                ms
            ));
        } else {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.edge,
                r.gamma,
                r.alpha,
                r.z,
                r.z_product,
                r.train_err,
                r.train_err_bound,
                r.covariance_sign(),
                ms
            ));
        }
    }
    out
}

/// Parse a rounds CSV back into records (covariance comes back as its sign).
/// Returns the schema string and the records.
pub fn parse_rounds_csv(text: &str) -> Result<(String, Vec<RoundRecord>)> {
    let mut lines = text.lines();
    let schema_line = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "empty rounds csv".into(),
    })?;
    let schema = schema_line
        .strip_prefix("# schema: ")
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("missing schema line, got '{schema_line}'"),
        })?
        .to_string();
    let multiclass = match schema.as_str() {
        s if s == ROUNDS_SCHEMA_BINARY => false,
        s if s == ROUNDS_SCHEMA_MULTICLASS => true,
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("unknown rounds schema '{other}'"),
            })
        }
    };
    let _header = lines.next();
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expect = if multiclass { 11 } else { 10 };
        if fields.len() != expect {
            return Err(Error::Format {
                offset: (lineno + 3) as u64,
                message: format!("expected {expect} fields, got {}", fields.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::Format {
                offset: (lineno + 3) as u64,
                message: format!("bad float '{}'", fields[i]),
            })
        };
        let round: usize = fields[0].parse().map_err(|_| Error::Format {
            offset: (lineno + 3) as u64,
            message: format!("bad round '{}'", fields[0]),
        })?;
        let cov_sign: f64 = f(8)?;
        let (exp_loss, ms_idx) = if multiclass {
            (Some(f(9)?), 10)
        } else {
            (None, 9)
        };
        records.push(RoundRecord {
            round,
            edge: f(1)?,
            gamma: f(2)?,
            alpha: f(3)?,
            z: f(4)?,
            z_product: f(5)?,
            train_err: f(6)?,
            train_err_bound: f(7)?,
            covariance: cov_sign,
            exp_loss,
            saturated: false,
            stationarity_residual: 0.0,
            prev_exp_moment: 1.0,
            wallclock_ms: fields[ms_idx].parse().unwrap_or(0),
        });
    }
    Ok((schema, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize) -> RoundRecord {
        RoundRecord {
            round,
            edge: 0.5,
            gamma: 0.5,
            alpha: 0.549306,
            z: 0.866,
            z_product: 0.866,
            train_err: 0.25,
            train_err_bound: 0.8825,
            covariance: -1e-4,
            exp_loss: None,
            saturated: false,
            stationarity_residual: 0.0,
            prev_exp_moment: 1.0,
            wallclock_ms: 12,
        }
    }

    #[test]
    fn csv_round_trips() {
        let recs = vec![record(0), record(1)];
        let text = rounds_csv(&recs, false, TimingMode::Zero);
        assert!(text.starts_with("# schema: boostresnet.rounds.v1\n"));
        let (schema, parsed) = parse_rounds_csv(&text).unwrap();
        assert_eq!(schema, ROUNDS_SCHEMA_BINARY);
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].z, 0.866);
        assert_eq!(parsed[0].covariance, -1.0); // sign only
        assert_eq!(parsed[0].wallclock_ms, 0);
    }

    #[test]
    fn timing_mode_zero_masks_wallclock() {
        let text = rounds_csv(&[record(0)], false, TimingMode::Zero);
        assert!(text.lines().last().unwrap().ends_with(",0"));
        let text = rounds_csv(&[record(0)], false, TimingMode::Measured);
        assert!(text.lines().last().unwrap().ends_with(",12"));
    }

    #[test]
    fn multiclass_schema_has_exp_loss() {
        let mut r = record(0);
        r.exp_loss = Some(1.75);
        let text = rounds_csv(&[r], true, TimingMode::Zero);
        let (schema, parsed) = parse_rounds_csv(&text).unwrap();
        assert_eq!(schema, ROUNDS_SCHEMA_MULTICLASS);
        assert_eq!(parsed[0].exp_loss, Some(1.75));
    }
}
