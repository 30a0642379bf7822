//! CSV files written by the CLI beyond the simulator trajectories, and
//! their readers.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use partner_model::branching::{BranchingRun, BranchingState};
use partner_model::mfe::{MfeState, Trajectory};
use partner_model::sim::io::fmt_sig9;
use partner_model::CriticalValue;

pub const MFE_HEADER: [&str; 8] = ["t", "y", "i", "si", "ii", "ip", "s", "ss"];
pub const SWEEP_HEADER: [&str; 3] = ["r_plus", "r_minus", "lambda_c"];
pub const BRANCHING_HEADER: [&str; 4] = ["t", "n_i", "n_si", "n_ii"];

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> anyhow::Result<()> {
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != expected {
        bail!("unexpected header {found:?}, expected {expected:?}");
    }
    Ok(())
}

pub fn write_mfe_csv<W: Write>(out: W, tr: &Trajectory) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MFE_HEADER)?;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        let row = [*t, s.y, s.i, s.si, s.ii, s.ip(), s.s(), s.ss()];
        w.write_record(row.map(fmt_sig9))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mfe_csv<R: Read>(input: R) -> anyhow::Result<Vec<(f64, MfeState)>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &MFE_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .context("bad number in mean-field csv")?;
        out.push((v[0], MfeState::new(v[1], v[2], v[3], v[4])));
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[(f64, f64, CriticalValue)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for (rp, rm, lc) in rows {
        let lc = match lc {
            CriticalValue::Finite(v) => fmt_sig9(*v),
            CriticalValue::Infinite => "inf".to_owned(),
        };
        w.write_record([fmt_sig9(*rp), fmt_sig9(*rm), lc])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> anyhow::Result<Vec<(f64, f64, CriticalValue)>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &SWEEP_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((rec[0].parse()?, rec[1].parse()?, rec[2].parse()?));
    }
    Ok(out)
}

/// Observed counts of one branching run; rows after censoring are left out.
pub fn write_branching_csv<W: Write>(out: W, run: &BranchingRun) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BRANCHING_HEADER)?;
    for (t, st) in &run.observations {
        let Some(st) = st else { break };
        w.write_record([
            fmt_sig9(*t),
            st.n_i.to_string(),
            st.n_si.to_string(),
            st.n_ii.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_branching_csv<R: Read>(input: R) -> anyhow::Result<Vec<(f64, BranchingState)>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &BRANCHING_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let st = BranchingState::new(rec[1].parse()?, rec[2].parse()?, rec[3].parse()?);
        out.push((rec[0].parse()?, st));
    }
    Ok(out)
}

pub fn create_file(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn open_file(path: &Path) -> anyhow::Result<std::io::BufReader<std::fs::File>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::BufReader::new(f))
}
