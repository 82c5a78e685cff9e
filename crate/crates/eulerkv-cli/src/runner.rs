//! Drives one configured scenario and writes its artifacts: a ledger CSV
//! (always, even when the dynamics abort mid-run), coefficient snapshots
//! on the configured stride, and an echo of the effective configuration.
//! A numerical abort is an outcome, not an error: the caller inspects
//! [`RunArtifacts::failure`] and maps it to the process exit code.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use eulerkv::dynamics::DynamicsError;
use eulerkv::kinematics::{det_transport_check, return_map_defect};
use eulerkv::{EnergyLedger, SimState, Solver};

use crate::config::{ConfigError, RunConfig};
use crate::output::{write_csv, CsvRow, Snapshot};
use crate::CliError;

pub struct RunArtifacts {
    pub rows: Vec<CsvRow>,
    pub csv_path: PathBuf,
    pub snapshot_paths: Vec<PathBuf>,
    /// Last state reached; the final state when `failure` is `None`.
    pub final_state: SimState,
    /// `|| div v ||_{L2}` over space and the whole run time.
    pub div_l2_time: f64,
    /// Peak-normalized energy-balance residual over the run.
    pub relative_residual: f64,
    pub failure: Option<DynamicsError>,
}

/// Bookkeeping shared by the sampling closure. `run` borrows the closure
/// mutably for the whole integration, so the post-run code reads the
/// collected state back out of one `RefCell` nest.
struct Tape {
    ledger: EnergyLedger,
    div_sq_time: f64,
    rows: Vec<CsvRow>,
    recent: Vec<(usize, SimState)>,
    snapshot_paths: Vec<PathBuf>,
    last: Option<SimState>,
    io_failure: Option<CliError>,
    observe_failure: Option<DynamicsError>,
}

pub fn run_scenario(cfg: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, CliError> {
    let scenario = cfg.to_scenario()?;
    let solver = Solver::new(scenario).map_err(|e| ConfigError::Rule(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Write {
        path: out_dir.into(),
        source,
    })?;
    let echo_path = out_dir.join(format!("{}.toml", cfg.name));
    std::fs::write(&echo_path, cfg.to_toml()).map_err(|source| CliError::Write {
        path: echo_path,
        source,
    })?;

    let steps = if cfg.time.t_end == 0.0 {
        0
    } else {
        ((cfg.time.t_end / cfg.time.dt).round() as usize).max(1)
    };
    let sample_stride = cfg.output.sample_stride;
    let snapshot_stride = cfg.output.snapshot_stride;

    let tape = RefCell::new(Tape {
        ledger: EnergyLedger::new(),
        rows: Vec::new(),
        recent: Vec::new(),
        snapshot_paths: Vec::new(),
        last: None,
        io_failure: None,
        observe_failure: None,
    });
    let mut k = 0usize;
    let result = solver.run(|s, diag| {
        let mut tape = tape.borrow_mut();
        let t = tape;
        let tape = &mut *t;
        tape.ledger.accumulate(diag);
        let is_edge = k == 0 || k == steps;
        if is_edge || k % sample_stride == 0 {
            match solver.observe(s) {
                Ok(obs) => {
                    let ledger_sample = tape.ledger.record(s.t, obs.e_kin, obs.e_sto);
                    let return_defect = s
                        .zeta
                        .as_ref()
                        .and_then(|_| return_map_defect(&solver.basis, s).ok());
                    tape.rows.push(CsvRow {
                        t: s.t,
                        e_kin: obs.e_kin,
                        e_sto: obs.e_sto,
                        d_cum: ledger_sample.d_cum,
                        w_cum: ledger_sample.w_cum,
                        residual: ledger_sample.residual,
                        v_l2: obs.v_l2,
                        f_l2: obs.f_l2,
                        grad_f_l2: obs.grad_f_l2,
                        grad_v_linf: obs.grad_v_linf,
                        grad_ev_lp: obs.grad_ev_lp,
                        min_det_f: obs.min_det_f,
                        det_defect: None,
                        return_defect,
                    });
                    let row_idx = tape.rows.len() - 1;
                    tape.recent.push((row_idx, s.clone()));
                    if tape.recent.len() > 3 {
                        tape.recent.remove(0);
                    }
                    if let [a, b, c] = &tape.recent[..] {
                        let h = b.1.t - a.1.t;
                        if ((c.1.t - b.1.t) - h).abs() <= 1e-9 * h {
                            let states = [a.1.clone(), b.1.clone(), c.1.clone()];
                            if let Ok(pairs) = det_transport_check(&solver.basis, &states) {
                                tape.rows[b.0].det_defect = pairs.first().map(|&(_, d)| d);
                            }
                        }
                    }
                }
                Err(e) => {
                    if tape.observe_failure.is_none() {
                        tape.observe_failure = Some(e);
                    }
                }
            }
        }
        if snapshot_stride > 0 && (is_edge || k % snapshot_stride == 0) {
            let path = out_dir.join(format!("{}-{k:06}.snap", cfg.name));
            let snap = Snapshot::from_state(&solver.basis, s);
            match snap.write(&path) {
                Ok(()) => tape.snapshot_paths.push(path),
                Err(e) => {
                    if tape.io_failure.is_none() {
                        tape.io_failure = Some(CliError::Write {
                            path,
                            source: std::io::Error::other(e.to_string()),
                        });
                    }
                }
            }
        }
        tape.last = Some(s.clone());
        k += 1;
    });

    let tape = tape.into_inner();
    if let Some(io) = tape.io_failure {
        return Err(io);
    }
    let csv_path = out_dir.join(format!("{}.csv", cfg.name));
    write_csv(&csv_path, &tape.rows).map_err(|source| CliError::Write {
        path: csv_path.clone(),
        source,
    })?;
    let failure = result.err().or(tape.observe_failure);
    let final_state = tape
        .last
        .expect("run invokes the callback on the initial state");
    Ok(RunArtifacts {
        rows: tape.rows,
        csv_path,
        snapshot_paths: tape.snapshot_paths,
        final_state,
        div_l2_time: tape.ledger.div_l2_time(),
        relative_residual: tape.ledger.relative_residual(),
        failure,
    })
}
