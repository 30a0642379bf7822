//! Trajectory CSV and replica-summary JSON.

use std::io::{Read, Write};

use serde::Deserialize;

use super::{MacroState, ReplicaSummary, Sample};
use crate::error::{ModelError, Result};

pub const TRAJECTORY_HEADER: [&str; 12] = [
    "t", "S", "I", "SS", "SI", "II", "s", "i", "ss", "si", "ii", "y",
];

/// Formats `x` with nine significant digits, `%.9g` style.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.8e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::InvalidState(format!("trajectory csv: {e}"))
}

pub fn write_trajectory_csv<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for smp in samples {
        let st = &smp.state;
        let [s, i, ss, si, ii] = st.fractions();
        let mut row = vec![fmt_sig9(smp.t)];
        row.extend([st.s, st.i, st.ss, st.si, st.ii].iter().map(u64::to_string));
        row.extend([s, i, ss, si, ii, st.y()].into_iter().map(fmt_sig9));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| ModelError::InvalidState(format!("trajectory csv: {e}")))?;
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    t: f64,
    #[serde(rename = "S")]
    s: u64,
    #[serde(rename = "I")]
    i: u64,
    #[serde(rename = "SS")]
    ss: u64,
    #[serde(rename = "SI")]
    si: u64,
    #[serde(rename = "II")]
    ii: u64,
}

/// Reads a trajectory back. The population size is recovered from the
/// counts, and the rescaled columns are checked against them.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(ModelError::InvalidState(format!(
            "unexpected trajectory header {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row: Row = record.deserialize(Some(&headers)).map_err(csv_err)?;
        let n = row.s + row.i + 2 * (row.ss + row.si + row.ii);
        let state = MacroState::new(n, row.s, row.i, row.ss, row.si, row.ii)?;
        let y: f64 = record[11]
            .parse()
            .map_err(|_| ModelError::InvalidState("bad y column".into()))?;
        if (y - state.y()).abs() > 1e-8 * state.y().max(1.0) {
            return Err(ModelError::InvalidState(format!(
                "y column {y} disagrees with counts at t = {}",
                row.t
            )));
        }
        out.push(Sample { t: row.t, state });
    }
    Ok(out)
}

pub fn write_summaries_json<W: Write>(out: W, summaries: &[ReplicaSummary]) -> Result<()> {
    serde_json::to_writer_pretty(out, summaries)
        .map_err(|e| ModelError::InvalidState(format!("summary json: {e}")))
}

pub fn read_summaries_json<R: Read>(input: R) -> Result<Vec<ReplicaSummary>> {
    serde_json::from_reader(input)
        .map_err(|e| ModelError::InvalidState(format!("summary json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Params;
    use crate::sim::{simulate_macro, SimConfig};

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(0.1), "0.1");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123456.789012), "123456.789");
        assert_eq!(fmt_sig9(2.0 / 3.0 * 1e-7), "6.66666667e-8");
        assert_eq!(fmt_sig9(-12.5), "-12.5");
        assert_eq!(fmt_sig9(1e12), "1e12");
    }

    #[test]
    fn trajectory_roundtrip() {
        let p = Params::new(8.0, 6.0, 2.0).unwrap();
        let init = MacroState::default_initial(300).unwrap();
        let log = simulate_macro(&init, &p, &SimConfig::new(2.0), 5).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &log.samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,S,I,SS,SI,II,s,i,ss,si,ii,y\n"));
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), log.samples.len());
        for (a, b) in back.iter().zip(&log.samples) {
            assert_eq!(a.state, b.state);
            assert!((a.t - b.t).abs() <= 1e-8 * b.t.max(1.0));
        }
    }

    #[test]
    fn rejects_foreign_header() {
        let text = "t,S,I\n0,1,2\n";
        assert!(read_trajectory_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn summary_roundtrip() {
        let p = Params::new(0.5, 3.0, 1.0).unwrap();
        let init = MacroState::default_initial(100).unwrap();
        let s = simulate_macro(&init, &p, &SimConfig::new(100.0), 1)
            .unwrap()
            .summary();
        let mut buf = Vec::new();
        write_summaries_json(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for key in ["seed", "absorbed", "absorption_time", "time_avg_i", "time_avg_y"] {
            assert!(text.contains(&format!("\"{key}\"")));
        }
        assert_eq!(read_summaries_json(buf.as_slice()).unwrap(), vec![s]);
    }
}
