//! Repetition orchestration and CSV output.
//!
//! Files written to the output directory:
//!
//! * `throughput_<scheme>_<rep>.csv`: `time_s,flow_id,group,throughput_bps`
//! * `summary_<scheme>.csv`: `window,flow_id,group,mean_bps,ci95_bps,fair_share_bps`;
//!   rows with `flow_id = all` aggregate a group (mean over its members per
//!   repetition, then across repetitions).
//! * `drops_<scheme>.csv`: `flow_id,cause,packets,bytes`, summed over
//!   repetitions, causes `prob_nonconformant`, `overflow_conformant`,
//!   `overflow_nonconformant`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine;
use crate::metrics::{bin_throughput, fair_shares, window_mean_ci, MetricsError, RunRecord};
use crate::scenario::{ScenarioErrors, ScenarioSpec};
use crate::time::SimTime;

pub const THROUGHPUT_HEADER: &str = "time_s,flow_id,group,throughput_bps";
pub const SUMMARY_HEADER: &str = "window,flow_id,group,mean_bps,ci95_bps,fair_share_bps";
pub const DROPS_HEADER: &str = "flow_id,cause,packets,bytes";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid scenario:\n{0}")]
    Scenario(#[from] ScenarioErrors),
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub out_dir: PathBuf,
    pub bin_width: SimTime,
    pub windows: Vec<(SimTime, SimTime)>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Each 60 s subperiod minus its first 10 s, e.g. `[130, 180)`.
pub fn default_windows(horizon: SimTime) -> Vec<(SimTime, SimTime)> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let start = SimTime::from_secs(60 * k + 10);
        let end = SimTime::from_secs(60 * (k + 1));
        if end > horizon {
            break;
        }
        out.push((start, end));
        k += 1;
    }
    out
}

/// `a:b,c:d` in seconds.
pub fn parse_windows(text: &str) -> Result<Vec<(SimTime, SimTime)>, String> {
    text.split(',')
        .map(|w| {
            let (a, b) = w
                .split_once(':')
                .ok_or_else(|| format!("window `{w}` is not `start:end`"))?;
            let parse = |s: &str| -> Result<SimTime, String> {
                let v: f64 = s.trim().parse().map_err(|_| format!("bad window bound `{s}`"))?;
                if v.is_finite() && v >= 0.0 {
                    Ok(SimTime::from_secs_f64(v))
                } else {
                    Err(format!("bad window bound `{s}`"))
                }
            };
            let (a, b) = (parse(a)?, parse(b)?);
            if b <= a {
                return Err(format!("window `{w}` is empty"));
            }
            Ok((a, b))
        })
        .collect()
}

fn secs(t: SimTime) -> String {
    format!("{}", t.as_secs_f64())
}

pub fn throughput_csv(spec: &ScenarioSpec, record: &RunRecord, bin_width: SimTime) -> Result<String, MetricsError> {
    let series = bin_throughput(record, bin_width)?;
    let mut out = String::from(THROUGHPUT_HEADER);
    out.push('\n');
    let bins = series.first().map_or(0, Vec::len);
    for k in 0..bins {
        let t = SimTime::from_nanos(bin_width.as_nanos() * k as u64);
        for (flow, s) in spec.subscribers.iter().zip(&series) {
            let _ = writeln!(out, "{:.3},{},{},{:.1}", t.as_secs_f64(), flow.id, flow.group, s[k]);
        }
    }
    Ok(out)
}

pub fn summary_csv(
    spec: &ScenarioSpec,
    records: &[RunRecord],
    windows: &[(SimTime, SimTime)],
) -> Result<String, MetricsError> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let ci = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    for &(start, end) in windows {
        let stat = window_mean_ci(records, start, end)?;
        let fair = fair_shares(spec, start);
        let label = format!("{}:{}", secs(start), secs(end));
        for (f, share) in stat.flows.iter().zip(&fair) {
            let _ = writeln!(
                out,
                "{label},{},{},{:.1},{},{:.1}",
                f.flow,
                f.group,
                f.mean_bps,
                ci(f.ci95_bps),
                share
            );
        }
        for g in &stat.groups {
            let members: Vec<f64> = spec
                .subscribers
                .iter()
                .zip(&fair)
                .filter(|(s, _)| s.group == g.group)
                .map(|(_, f)| *f)
                .collect();
            let share = members.iter().sum::<f64>() / members.len() as f64;
            let _ = writeln!(
                out,
                "{label},all,{},{:.1},{},{:.1}",
                g.group,
                g.mean_bps,
                ci(g.ci95_bps),
                share
            );
        }
    }
    Ok(out)
}

pub fn drops_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(DROPS_HEADER);
    out.push('\n');
    let Some(first) = records.first() else {
        return out;
    };
    for (i, f) in first.flows.iter().enumerate() {
        let sum = |pick: &dyn Fn(&crate::metrics::FlowCounters) -> crate::metrics::Tally| {
            records.iter().fold((0u64, 0u64), |(p, b), r| {
                let t = pick(&r.flows[i].counters);
                (p + t.packets, b + t.bytes)
            })
        };
        for (cause, (p, b)) in [
            ("prob_nonconformant", sum(&|c| c.dropped_prob)),
            ("overflow_conformant", sum(&|c| c.dropped_overflow_conformant)),
            ("overflow_nonconformant", sum(&|c| c.dropped_overflow_nonconformant)),
        ] {
            let _ = writeln!(out, "{},{cause},{p},{b}", f.id);
        }
    }
    out
}

/// Writes files through a temporary name and removes everything it wrote if
/// any step fails.
struct OutputSet {
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), ExperimentError> {
        let path = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        let res = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, &path));
        if let Err(source) = res {
            let _ = fs::remove_file(&tmp);
            return Err(ExperimentError::Io { path, source });
        }
        self.written.push(path);
        Ok(())
    }

    fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs `spec.repetitions` repetitions with seeds `spec.seed + r` and writes
/// the CSV outputs.
pub fn run_experiment(spec: &ScenarioSpec, opts: &ExperimentOptions) -> Result<ExperimentOutput, ExperimentError> {
    spec.validate()?;
    let mut files = OutputSet { written: Vec::new() };
    let result = (|| {
        fs::create_dir_all(&opts.out_dir).map_err(|source| ExperimentError::Io {
            path: opts.out_dir.clone(),
            source,
        })?;
        let scheme = spec.scheme.name();
        let mut records = Vec::with_capacity(spec.repetitions as usize);
        for rep in 0..spec.repetitions {
            let mut s = spec.clone();
            s.seed = spec.seed.wrapping_add(rep as u64);
            let record = engine::run(&s)?;
            let csv = throughput_csv(&s, &record, opts.bin_width)?;
            files.write(&opts.out_dir, &format!("throughput_{scheme}_{rep}.csv"), &csv)?;
            records.push(record);
        }
        let mut warnings = Vec::new();
        if records.len() < 2 {
            warnings.push(format!(
                "only {} repetition(s): confidence intervals need at least 2 and are left empty",
                records.len()
            ));
        }
        let windows: Vec<_> = opts.windows.iter().copied().filter(|(_, end)| *end <= spec.horizon).collect();
        if windows.len() < opts.windows.len() {
            warnings.push("windows extending past the horizon were skipped".into());
        }
        let summary = summary_csv(spec, &records, &windows)?;
        files.write(&opts.out_dir, &format!("summary_{scheme}.csv"), &summary)?;
        files.write(&opts.out_dir, &format!("drops_{scheme}.csv"), &drops_csv(&records))?;
        Ok((records, warnings))
    })();
    match result {
        Ok((records, warnings)) => Ok(ExperimentOutput {
            records,
            files: files.written,
            warnings,
        }),
        Err(e) => {
            files.discard();
            Err(e)
        }
    }
}
