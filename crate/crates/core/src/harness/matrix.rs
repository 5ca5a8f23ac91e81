//! The experiment matrix: which regularizer sits at which hook, run side by
//! side and summarised one row per experiment.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::ExperimentConfig;
use super::train::{run_experiment, ExperimentOutcome};
use crate::error::{Error, Result};
use crate::metrics::MiouSummary;
use crate::regularizers::{Method, RegularizerSpec};

/// Drop probability used at every active hook.
pub const TABLE2_P: f64 = 0.2;
pub const SCHEDULED_SUFFIX: &str = "-sched";

/// Rows of the testing matrix: name and method at (resnet, spp, decoder).
pub const TABLE2_ROWS: [(&str, [Method; 3]); 16] = {
    use Method::{Channel as C, DropBlock as D, None as N, UOut as U};
    [
        ("none", [N, N, N]),
        ("resnet-chandrop", [C, N, N]),
        ("spp-chandrop", [N, C, N]),
        ("decoder-chandrop", [N, N, C]),
        ("upper-chandrop", [N, C, C]),
        ("all-chandrop", [C, C, C]),
        ("resnet-uout", [U, N, N]),
        ("spp-uout", [N, U, N]),
        ("decoder-uout", [N, N, U]),
        ("upper-uout", [N, U, U]),
        ("all-uout", [U, U, U]),
        ("resnet-dropblock", [D, N, N]),
        ("spp-dropblock", [N, D, N]),
        // listed with channel dropout on the backbone
        ("decoder-dropblock", [C, N, D]),
        ("upper-dropblock", [N, D, D]),
        ("all-dropblock", [D, D, D]),
    ]
};

fn spec(method: Method) -> RegularizerSpec {
    match method {
        Method::None => RegularizerSpec::none(),
        m => RegularizerSpec::new(m, TABLE2_P),
    }
}

/// The 16 rows built on `base` (whose name and hooks are replaced).
/// Scheduled rows get the ramp and a `-sched` suffix.
pub fn table2(base: &ExperimentConfig, scheduled: bool) -> Vec<ExperimentConfig> {
    TABLE2_ROWS
        .iter()
        .map(|(name, [r, s, d])| {
            let mut e = base.clone();
            e.name = if scheduled {
                format!("{name}{SCHEDULED_SUFFIX}")
            } else {
                name.to_string()
            };
            e.resnet = spec(*r);
            e.spp = spec(*s);
            e.decoder = spec(*d);
            e.scheduled = scheduled;
            e
        })
        .collect()
}

/// Unscheduled rows followed by their scheduled counterparts.
pub fn table2_full(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut all = table2(base, false);
    all.extend(table2(base, true));
    all
}

/// The `none` row and the scheduled `all-chandrop` row, the pair whose
/// comparison is the headline result.
pub fn headline(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    table2_full(base)
        .into_iter()
        .filter(|e| e.name == "none" || e.name == "all-chandrop-sched")
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub summary: MiouSummary,
}

pub const SUMMARY_HEADER: &str = "experiment,mean_miou,std,worst,median,best,loss";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.experiment, s.mean, s.std, s.worst, s.median, s.best, s.loss
        ));
    }
    out
}

/// Worker count: the request, capped by `DROPREG_THREADS` and the number
/// of experiments.
pub fn effective_parallelism(requested: usize, jobs: usize) -> usize {
    let cap = std::env::var("DROPREG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap).min(jobs.max(1))
}

pub fn check_unique(matrix: &[ExperimentConfig]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in matrix {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::config(format!(
                "duplicate experiment name {:?}",
                e.name
            )));
        }
    }
    Ok(())
}

/// Runs every experiment into `out_dir/<name>/` and writes
/// `out_dir/summary.csv` from the best epoch of each. Experiments are
/// independent, so the worker count does not affect any output. If some
/// fail, the summary lists the rest and the first failure is returned.
pub fn run_matrix(
    matrix: &[ExperimentConfig],
    parallelism: usize,
    out_dir: &Path,
) -> Result<Vec<SummaryRow>> {
    check_unique(matrix)?;
    for e in matrix {
        e.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let workers = effective_parallelism(parallelism, matrix.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExperimentOutcome>>>> =
        Mutex::new((0..matrix.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= matrix.len() {
                    break;
                }
                let exp = &matrix[i];
                let r = run_experiment(exp, &out_dir.join(&exp.name));
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut rows = Vec::new();
    let mut first_err = None;
    for r in results.into_inner().expect("results lock") {
        match r.expect("every experiment ran") {
            Ok(o) => rows.push(SummaryRow {
                experiment: o.name,
                summary: o.best.val,
            }),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(
            "base",
            RegularizerSpec::none(),
            RegularizerSpec::none(),
            RegularizerSpec::none(),
        )
    }

    #[test]
    fn sixteen_plus_sixteen() {
        let m = table2_full(&base());
        assert_eq!(m.len(), 32);
        check_unique(&m).unwrap();
        assert_eq!(m[0].name, "none");
        assert_eq!(m[15].name, "all-dropblock");
        assert_eq!(m[16].name, "none-sched");
        assert!(m[16..].iter().all(|e| e.scheduled));
        let all = &m[5];
        assert_eq!(all.name, "all-chandrop");
        assert!([all.resnet, all.spp, all.decoder]
            .iter()
            .all(|s| s.method == Method::Channel && s.p == 0.2));
    }

    #[test]
    fn headline_pair() {
        let h = headline(&base());
        assert_eq!(h.len(), 2);
        assert!(!h[0].resnet.is_active() && !h[0].scheduled);
        assert!(h[1].scheduled && h[1].decoder.method == Method::Channel);
    }

    #[test]
    fn duplicates_rejected() {
        let m = vec![base(), base()];
        assert!(run_matrix(&m, 1, Path::new("/nonexistent")).is_err());
    }

    #[test]
    fn summary_header() {
        assert!(summary_csv(&[]).starts_with("experiment,mean_miou,std,worst,median,best,loss\n"));
    }
}
