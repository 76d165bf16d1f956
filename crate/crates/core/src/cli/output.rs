use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::experiments::{self, outcome_label};
use super::{Command, RunRequest};
use crate::array::{write_records_csv, Granularity, WlvmRecord};
use crate::cell::{write_trajectory_csv, VtcPoint};
use crate::error::{Error, Result};
use crate::metrics::{
    bwtv, critical_pulse_width, wlvm_cell, wlvm_full_sweep, write_metrics_csv, write_noise_margin,
    write_ramp_csv, wwtv, Direction, MetricResult,
};
use crate::stats::{pearson, summarize, write_histogram_csv};
use crate::variation::write_population_csv;

/// Output directory that remembers the files written into it.
pub(super) struct Sink {
    dir: PathBuf,
    files: Vec<String>,
}

impl Sink {
    pub(super) fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn create(&mut self, name: String) -> Result<BufWriter<File>> {
        let f = File::create(self.dir.join(&name))?;
        self.files.push(name);
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, name: String) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }

    pub(super) fn into_files(self) -> Vec<String> {
        self.files
    }
}

fn mv(v: f64) -> String {
    format!("{:.3}", v * 1e3)
}

fn ps(v: f64) -> String {
    if v.is_finite() {
        format!("{:.3}", v * 1e12)
    } else {
        "inf".to_string()
    }
}

pub(super) fn run_command(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    match req.command {
        Command::Vtc => vtc(req, sink),
        Command::Trajectories => trajectories(req, sink),
        Command::Wnm | Command::Bwtv | Command::Wwtv | Command::CritPulse | Command::WlvmCell => {
            single_metric(req, sink)
        }
        Command::PrSweep => pr_sweep(req, sink),
        Command::McCorrelate => mc_correlate(req, sink),
        Command::WlvmArray => wlvm_array(req, sink),
        Command::CellCompare => cell_compare(req, sink),
    }
}

fn vtc(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    for cell in &req.cells {
        let c = experiments::vtc_curves(&req.config.design(cell)?)?;
        let mut wr = sink.csv(format!("{cell}_vtc.csv"))?;
        wr.write_record(["v_in_V", "hold_a_V", "hold_b_V", "write_a_V", "write_b_V"])?;
        let v = |p: &VtcPoint| format!("{:.6}", p.v_out);
        for k in 0..c.hold_a.len() {
            wr.write_record([
                format!("{:.6}", c.hold_a[k].v_in),
                v(&c.hold_a[k]),
                v(&c.hold_b[k]),
                v(&c.write_a[k]),
                v(&c.write_b[k]),
            ])?;
        }
        wr.flush()?;
        let mut wr = sink.csv(format!("{cell}_equilibria.csv"))?;
        wr.write_record(["bias", "va_V", "vb_V", "kind"])?;
        for (label, e) in &c.equilibria {
            wr.write_record([
                label.to_string(),
                format!("{:.6}", e.state.v_a),
                format!("{:.6}", e.state.v_b),
                format!("{:?}", e.kind),
            ])?;
        }
        wr.flush()?;
    }
    Ok(())
}

fn trajectories(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    for cell in &req.cells {
        let runs = experiments::write_scenarios(cfg, cell)?;
        let mut wr = sink.csv(format!("{cell}_scenarios.csv"))?;
        wr.write_record([
            "scenario",
            "description",
            "direction",
            "v_wl_V",
            "v_bl_low_V",
            "v_cell_V",
            "pull_up_ratio",
            "pulse_width_ps",
            "final_va_V",
            "final_vb_V",
            "read_back",
            "outcome",
            "write_blocked",
        ])?;
        for r in &runs {
            let f = r.attempt.trajectory.final_state;
            wr.write_record([
                r.label.to_string(),
                r.description.to_string(),
                cfg.scenarios.direction.to_string(),
                format!("{:.4}", r.v_wl),
                format!("{:.4}", r.setup.v_bl_low),
                format!("{:.4}", r.setup.v_cell),
                format!("{:.3}", r.design.pull_up_ratio()),
                ps(r.setup.pulse.width),
                format!("{:.6}", f.v_a),
                format!("{:.6}", f.v_b),
                outcome_label(r.attempt.read_back).to_string(),
                if r.attempt.success { "success" } else { "fail" }.to_string(),
                r.blocked.to_string(),
            ])?;
        }
        wr.flush()?;
        for r in &runs {
            let w = sink.create(format!("{cell}_trajectory_{}.csv", r.label))?;
            write_trajectory_csv(&r.attempt.trajectory, w)?;
        }
        let points = experiments::separatrix(&cfg.design(cell)?, 11)?;
        let mut wr = sink.csv(format!("{cell}_separatrix.csv"))?;
        wr.write_record(["va_V", "vb_V"])?;
        for p in points {
            wr.write_record([format!("{:.6}", p.v_a), format!("{:.6}", p.v_b)])?;
        }
        wr.flush()?;
    }
    Ok(())
}

fn single_metric(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    let setup = cfg.write_setup();
    let ramp = cfg.ramp();
    let mut rows: Vec<(String, MetricResult)> = Vec::new();
    for cell in &req.cells {
        let d = cfg.design(cell)?;
        for dir in Direction::BOTH {
            let m = match req.command {
                Command::Wnm => write_noise_margin(&d, dir)?,
                Command::Bwtv => bwtv(&d, &ramp, dir)?,
                Command::Wwtv => wwtv(&d, &ramp, dir)?,
                Command::CritPulse => critical_pulse_width(&d, &setup, dir)?,
                Command::WlvmCell => wlvm_cell(&d, &setup, cfg.delta(), cfg.floor(), dir)?,
                _ => unreachable!("not a single-cell metric"),
            };
            match req.command {
                Command::Bwtv | Command::Wwtv => {
                    let name = format!("{cell}_{}_{dir}_ramp.csv", req.command);
                    write_ramp_csv(&m, sink.create(name)?)?;
                }
                Command::WlvmCell => {
                    let sweep = wlvm_full_sweep(&d, &setup, cfg.delta(), cfg.floor(), dir)?;
                    let mut wr = sink.csv(format!("{cell}_wlvm_{dir}_sweep.csv"))?;
                    wr.write_record(["reduction_mV", "v_wl_V", "success"])?;
                    for (reduction, ok) in sweep {
                        wr.write_record([
                            mv(reduction),
                            format!("{:.4}", (cfg.device.vdd - reduction).max(0.0)),
                            (ok as u8).to_string(),
                        ])?;
                    }
                    wr.flush()?;
                }
                _ => {}
            }
            rows.push((cell.clone(), m));
        }
    }
    let name = format!("{}.csv", req.command.name().replace('-', "_"));
    write_metrics_csv(&rows, sink.create(name)?)
}

fn pr_sweep(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    let header = ["wnm_mV", "bwtv_mV", "wwtv_mV", "wlvm_mV", "crit_pulse_ps"];
    let rows = experiments::pr_sweep(cfg)?;
    let mut wr = sink.csv("pr_sweep.csv".into())?;
    let mut h = vec!["pr", "w_p_nm"];
    h.extend(header);
    h.extend(["consistent", "boundary"]);
    wr.write_record(&h)?;
    for r in &rows {
        let m = &r.metrics;
        wr.write_record([
            format!("{:.3}", r.pr),
            format!("{:.3}", r.pr * cfg.pr_sweep.w_tx_nm),
            mv(m.wnm),
            mv(m.bwtv),
            mv(m.wwtv),
            mv(m.wlvm),
            ps(m.crit_pulse),
            r.consistent.to_string(),
            r.boundary.to_string(),
        ])?;
    }
    wr.flush()?;

    let mut wr = sink.csv("designs.csv".into())?;
    let mut h = vec!["cell", "cr", "pr"];
    h.extend(header);
    wr.write_record(&h)?;
    for cell in &req.cells {
        let d = cfg.design(cell)?;
        let m = experiments::metric_set(cfg, &d, cfg.pr_sweep.direction)?;
        wr.write_record([
            cell.clone(),
            format!("{:.3}", d.cell_ratio()),
            format!("{:.3}", d.pull_up_ratio()),
            mv(m.wnm),
            mv(m.bwtv),
            mv(m.wwtv),
            mv(m.wlvm),
            ps(m.crit_pulse),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn mc_correlate(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    for cell in &req.cells {
        let r = experiments::mc_correlate(cfg, cell, req.seed, cfg.monte_carlo.samples)?;
        let mut wr = sink.csv(format!("{cell}_mc_samples.csv"))?;
        wr.write_record(["index", "wwtv_mV", "bwtv_mV", "wlvm_mV", "error"])?;
        for s in &r.samples {
            let row = match &s.value {
                Ok(t) => [
                    s.id.index.to_string(),
                    mv(t.wwtv),
                    mv(t.bwtv),
                    mv(t.wlvm),
                    String::new(),
                ],
                Err(e) => [
                    s.id.index.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            };
            wr.write_record(&row)?;
        }
        wr.flush()?;
        let mut wr = sink.csv(format!("{cell}_mc_correlation.csv"))?;
        wr.write_record(["pair", "n", "r", "r2"])?;
        for (pair, c) in [
            ("wwtv_wlvm", r.wwtv_wlvm),
            ("bwtv_wlvm", r.bwtv_wlvm),
            ("wwtv_bwtv", r.wwtv_bwtv),
        ] {
            wr.write_record([
                pair.to_string(),
                c.n.to_string(),
                format!("{:.6}", c.r),
                format!("{:.6}", c.r2),
            ])?;
        }
        wr.flush()?;
        let population: Vec<_> = r.samples.iter().map(|s| (s.id, s.design)).collect();
        let nominal = cfg.design(cell)?;
        write_population_csv(
            &nominal,
            &population,
            sink.create(format!("{cell}_population.csv"))?,
        )?;
    }
    Ok(())
}

struct Series {
    name: &'static str,
    values: Vec<f64>,
}

fn series(records: &[WlvmRecord], delta: f64) -> Vec<Series> {
    let valid: Vec<&WlvmRecord> = records.iter().filter(|r| r.is_valid()).collect();
    let col = |f: fn(&WlvmRecord) -> u32| valid.iter().map(|r| f(r) as f64 * delta).collect();
    vec![
        Series {
            name: "0to1",
            values: col(|r| r.steps_0to1),
        },
        Series {
            name: "1to0",
            values: col(|r| r.steps_1to0),
        },
        Series {
            name: "combined",
            values: col(|r| r.steps),
        },
    ]
}

fn wlvm_array(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    let delta = cfg.delta();
    for cell in &req.cells {
        let run = experiments::array_run(cfg, cell, req.seed, &req.granularity)?;
        let population: Vec<_> = run
            .array
            .cells
            .iter()
            .enumerate()
            .map(|(k, d)| {
                (
                    crate::variation::SampleId {
                        seed: req.seed,
                        index: k as u64,
                    },
                    *d,
                )
            })
            .collect();
        write_population_csv(
            &cfg.design(cell)?,
            &population,
            sink.create(format!("{cell}_population.csv"))?,
        )?;
        let mut summary = sink.csv(format!("{cell}_summary.csv"))?;
        summary.write_record([
            "granularity",
            "series",
            "units",
            "valid",
            "mean_mV",
            "std_mV",
            "min_mV",
            "max_mV",
            "spread_mV",
        ])?;
        for (g, records) in &run.records {
            if *g != Granularity::Bit && !req.granularity.contains(g) {
                continue;
            }
            write_records_csv(
                records,
                delta,
                sink.create(format!("{cell}_records_{g}.csv"))?,
            )?;
            for s in series(records, delta) {
                if s.values.is_empty() {
                    continue;
                }
                let st = summarize(&s.values)?;
                summary.write_record([
                    g.to_string(),
                    s.name.to_string(),
                    records.len().to_string(),
                    st.n.to_string(),
                    mv(st.mean),
                    mv(st.std),
                    mv(st.min),
                    mv(st.max),
                    mv(st.spread),
                ])?;
                if records.len() > 1 {
                    write_histogram_csv(
                        &s.values,
                        delta,
                        sink.create(format!("{cell}_hist_{g}_{}.csv", s.name))?,
                    )?;
                }
            }
        }
        summary.flush()?;
        let bits = run
            .records(Granularity::Bit)
            .ok_or_else(|| Error::solver("bit-level records missing"))?;
        let s = series(bits, delta);
        let mut wr = sink.csv(format!("{cell}_direction_correlation.csv"))?;
        wr.write_record(["n", "r", "r2"])?;
        match pearson(&s[0].values, &s[1].values) {
            Ok(c) => wr.write_record([
                c.n.to_string(),
                format!("{:.6}", c.r),
                format!("{:.6}", c.r2),
            ])?,
            Err(Error::Degenerate(_)) => {
                wr.write_record([s[0].values.len().to_string(), "nan".into(), "nan".into()])?
            }
            Err(e) => return Err(e),
        }
        wr.flush()?;
    }
    Ok(())
}

fn cell_compare(req: &RunRequest, sink: &mut Sink) -> Result<()> {
    let cfg = &req.config;
    let n = cfg.monte_carlo.compare_samples;
    let mut table = sink.csv("cell_compare.csv".into())?;
    table.write_record([
        "cell", "cr", "pr", "n", "valid", "mean_mV", "std_mV", "min_mV", "max_mV",
    ])?;
    for cell in &req.cells {
        let d = cfg.design(cell)?;
        let pop = experiments::wlvm_population(cfg, cell, req.seed, n)?;
        let values: Vec<f64> = pop
            .iter()
            .filter_map(|s| s.value.as_ref().ok().map(|m| m.value))
            .collect();
        let st = summarize(&values)?;
        table.write_record([
            cell.clone(),
            format!("{:.3}", d.cell_ratio()),
            format!("{:.3}", d.pull_up_ratio()),
            n.to_string(),
            st.n.to_string(),
            mv(st.mean),
            mv(st.std),
            mv(st.min),
            mv(st.max),
        ])?;
        write_histogram_csv(
            &values,
            cfg.delta(),
            sink.create(format!("{cell}_compare_hist.csv"))?,
        )?;
    }
    table.flush()?;
    Ok(())
}
