use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tmsync::adapt::{table3_epsilon, table3_gamma2_max, AdaptParams, MatchConstants};
use tmsync::config::{
    load_config, BoundsConfig, GarnerConfig, MatchConfig, MicroscopeConfig, SweepSpec, TradeoffConfig,
};
use tmsync::detect::{sync_upper_bound, HRParams};
use tmsync::engine::{run_match, sweep, MatchReport, Trajectory};
use tmsync::experiments::garner::run_garner;
use tmsync::experiments::microscope::run_microscope;
use tmsync::experiments::tradeoff::{powers_of_two, sampling_tradeoff};

#[derive(Parser)]
#[command(name = "tmsync", version, about = "Invariant template matching with adaptive observers and synchronizing detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match an image against templates; exit 0 when a template matches, 1 otherwise.
    Match(Common),
    /// Repeat a match over the values of one numeric config field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted field inside `run`, e.g. `adapt.gamma2`; overrides `[sweep]`.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Option<Vec<f64>>,
    },
    /// Attractor census of a Garner-pattern ensemble.
    Garner(Common),
    /// Blur and brightness tracking on a synthetic scan line.
    Microscope(Common),
    /// Parameter bounds for the adaptive and detector levels.
    Bounds(Common),
    /// Sampling cost against information for every block size.
    SampleOptimality(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("run.seed={s}"));
        }
        o
    }

    fn load<T: serde::de::DeserializeOwned>(&self) -> anyhow::Result<T> {
        Ok(load_config(&self.config, &self.overrides())?)
    }

    fn base_dir(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn out_dir(&self) -> anyhow::Result<Option<PathBuf>> {
        if let Some(d) = &self.out {
            fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
        }
        Ok(self.out.clone())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").trim_end());
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Match(c) => cmd_match(&c),
        Command::Sweep { common, axis, values } => cmd_sweep(&common, axis, values),
        Command::Garner(c) => cmd_garner(&c),
        Command::Microscope(c) => cmd_microscope(&c),
        Command::Bounds(c) => cmd_bounds(&c),
        Command::SampleOptimality(c) => cmd_tradeoff(&c),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut text = header.join(",") + "\n";
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn match_summary(r: &MatchReport) -> String {
    let mut s = String::new();
    for t in &r.templates {
        s.push_str(&format!(
            "template {}: {} theta1_hat={:.6} theta2_hat={:.6} residual={:.3e} sync_error={}\n",
            t.index,
            if t.matched { "matched" } else { "not matched" },
            t.theta1_hat,
            t.theta2_hat,
            t.residual.final_window_max,
            t.sync.as_ref().map_or("n/a".into(), |p| format!("{:.3e}", p.max_x)),
        ));
    }
    s
}

fn write_run(dir: &Path, report: &MatchReport, traj: &Trajectory) -> anyhow::Result<()> {
    traj.write_csv(&dir.join("trajectory.csv"))?;
    report.write_json(&dir.join("report.json"))?;
    Ok(())
}

fn cmd_match(c: &Common) -> anyhow::Result<u8> {
    let cfg: MatchConfig = c.load()?;
    let (image, templates) = cfg.load_images(&c.base_dir())?;
    let out = run_match(&image, &templates, &cfg.run)?;
    if let Some(dir) = c.out_dir()? {
        write_run(&dir, &out.report, &out.trajectory)?;
    }
    emit(c.json, &out.report, || match_summary(&out.report))?;
    Ok(if out.report.matched_any { 0 } else { 1 })
}

#[derive(Serialize)]
struct SweepEntry {
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<MatchReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_sweep(c: &Common, axis: Option<String>, values: Option<Vec<f64>>) -> anyhow::Result<u8> {
    let cfg: MatchConfig = c.load()?;
    let spec = match (axis, values, cfg.sweep.clone()) {
        (Some(axis), Some(values), _) => SweepSpec { axis, values },
        (axis, values, Some(s)) => SweepSpec { axis: axis.unwrap_or(s.axis), values: values.unwrap_or(s.values) },
        _ => bail!("no sweep axis: pass --axis and --values or add a [sweep] table"),
    };
    let (image, templates) = cfg.load_images(&c.base_dir())?;
    let results = sweep(&image, &templates, &cfg.run, &spec.axis, &spec.values)?;
    let entries: Vec<SweepEntry> = spec
        .values
        .iter()
        .zip(results)
        .map(|(&value, r)| match r {
            Ok(report) => SweepEntry { value, report: Some(report), error: None },
            Err(e) => SweepEntry { value, report: None, error: Some(e.to_string()) },
        })
        .collect();
    let rows = || {
        entries.iter().flat_map(|e| match &e.report {
            Some(r) => r
                .templates
                .iter()
                .map(|t| {
                    vec![
                        e.value.to_string(),
                        t.index.to_string(),
                        "ok".into(),
                        t.matched.to_string(),
                        t.theta1_hat.to_string(),
                        t.theta2_hat.to_string(),
                        t.residual.final_window_max.to_string(),
                        t.sync.as_ref().map_or(String::new(), |p| p.max_x.to_string()),
                        t.validity.all_pass().to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
            None => vec![vec![e.value.to_string(), String::new(), "error".into(), "false".into(), String::new(), String::new(), String::new(), String::new(), "false".into()]],
        })
    };
    let header = ["value", "template", "status", "matched", "theta1_hat", "theta2_hat", "residual", "sync_error", "valid"];
    if let Some(dir) = c.out_dir()? {
        write_csv(&dir.join("sweep.csv"), &header, rows())?;
        write_json(&dir.join("sweep.json"), &entries)?;
    }
    emit(c.json, &entries, || {
        let mut s = header.join(",") + "\n";
        for r in rows() {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    })?;
    Ok(0)
}

fn cmd_garner(c: &Common) -> anyhow::Result<u8> {
    let cfg: GarnerConfig = c.load()?;
    let census = run_garner(&cfg.pattern, cfg.rotation, cfg.brightness, cfg.ensemble, &cfg.run)?;
    if let Some(dir) = c.out_dir()? {
        write_json(&dir.join("census.json"), &census)?;
        let members = census.members.iter().map(|m| {
            vec![
                m.seed.to_string(),
                m.init_phase.to_string(),
                m.theta1_hat.to_string(),
                m.theta2_hat.to_string(),
                m.lambda3.to_string(),
                m.theta2_total_variation.to_string(),
                m.residual.to_string(),
                m.matched.to_string(),
                m.converged.to_string(),
            ]
        });
        write_csv(
            &dir.join("members.csv"),
            &["seed", "init_phase", "theta1_hat", "theta2_hat", "lambda3", "theta2_tv", "residual", "matched", "converged"],
            members,
        )?;
        let clusters = census.clusters.iter().map(|k| {
            vec![k.branch.to_string(), k.angle.to_string(), k.angle.to_degrees().to_string(), k.spread_deg.to_string(), k.members.len().to_string()]
        });
        write_csv(&dir.join("clusters.csv"), &["branch", "angle", "angle_deg", "spread_deg", "size"], clusters)?;
    }
    emit(c.json, &census, || {
        let mut s = format!(
            "order {}: census {} converged {:.1}%\n",
            census.symmetry_order,
            census.census,
            100.0 * census.converged_fraction
        );
        for k in &census.clusters {
            s.push_str(&format!(
                "  branch {:+} angle {:.2} deg spread {:.2} deg members {}\n",
                k.branch,
                k.angle.to_degrees(),
                k.spread_deg,
                k.members.len()
            ));
        }
        s
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct MicroscopeSummary {
    theta1_truth: f64,
    theta1_hat: f64,
    theta1_relative_error: f64,
    theta2_truth: f64,
    theta2_hat: f64,
    constants: MatchConstants,
    report: MatchReport,
}

fn cmd_microscope(c: &Common) -> anyhow::Result<u8> {
    let cfg: MicroscopeConfig = c.load()?;
    let run = run_microscope(&cfg.scenario, &cfg.run)?;
    let report = &run.output.report;
    let t = &report.templates[0];
    let summary = MicroscopeSummary {
        theta1_truth: run.theta1_truth,
        theta1_hat: t.theta1_hat,
        theta1_relative_error: run.theta1_relative_error,
        theta2_truth: cfg.scenario.blur,
        theta2_hat: t.theta2_hat,
        constants: run.constants,
        report: report.clone(),
    };
    if let Some(dir) = c.out_dir()? {
        write_run(&dir, report, &run.output.trajectory)?;
        write_json(&dir.join("summary.json"), &summary)?;
        let traj = &run.output.trajectory;
        let col = |name: &str| traj.column(name).map(<[f64]>::to_vec);
        let (e, th1, th2) = (col("e_1"), col("theta1_hat_1"), col("theta2_hat_1"));
        let sync = col("x_0").zip(col("x_1")).map(|(a, b)| a.iter().zip(&b).map(|(p, q)| (p - q).abs()).collect());
        let rows = traj.times.iter().enumerate().map(|(k, &time)| {
            let get = |v: &Option<Vec<f64>>| v.as_ref().map_or(String::new(), |v| v[k].to_string());
            vec![
                time.to_string(),
                get(&e),
                get(&th1),
                cfg.scenario.bleach.at(time).to_string(),
                get(&th2),
                cfg.scenario.blur.to_string(),
                get(&sync),
            ]
        });
        write_csv(
            &dir.join("plot.csv"),
            &["t", "e", "theta1_hat", "theta1_truth", "theta2_hat", "theta2_truth", "sync_error"],
            rows,
        )?;
    }
    emit(c.json, &summary, || {
        format!(
            "theta1_hat={:.6} (truth {:.6}, rel error {:.3e}) theta2_hat={:.6} (truth {:.6}) residual={:.3e}\n",
            summary.theta1_hat,
            summary.theta1_truth,
            summary.theta1_relative_error,
            summary.theta2_hat,
            summary.theta2_truth,
            t.residual.final_window_max
        )
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct BoundsReport {
    constants: MatchConstants,
    adapt: AdaptParams,
    hr: HRParams,
    templates: usize,
    table3_epsilon: f64,
    table3_gamma2_max: f64,
    sync_upper_bound: f64,
}

fn cmd_bounds(c: &Common) -> anyhow::Result<u8> {
    let cfg: BoundsConfig = c.load()?;
    let report = BoundsReport {
        table3_epsilon: table3_epsilon(&cfg.constants, &cfg.adapt)?,
        table3_gamma2_max: table3_gamma2_max(&cfg.constants, &cfg.adapt)?,
        sync_upper_bound: sync_upper_bound(cfg.templates, &cfg.hr)?,
        constants: cfg.constants,
        adapt: cfg.adapt,
        hr: cfg.hr,
        templates: cfg.templates,
    };
    if let Some(dir) = c.out_dir()? {
        write_json(&dir.join("bounds.json"), &report)?;
    }
    emit(c.json, &report, || {
        let k = &report.constants;
        let a = &report.adapt;
        format!(
            "inputs: D={} D2={} D3={} D4={} Delta={} tau={} k={} gamma1={} gamma2={} theta1_max={} theta2_range=[{}, {}] templates={}\n\
             table3_epsilon={}\ntable3_gamma2_max={}\nsync_upper_bound={}\n",
            k.d,
            k.d2,
            k.d3,
            k.d4,
            k.delta,
            a.tau,
            a.k,
            a.gamma1,
            a.gamma2,
            a.theta1_range.max,
            a.theta2_range.min,
            a.theta2_range.max,
            report.templates,
            report.table3_epsilon,
            report.table3_gamma2_max,
            report.sync_upper_bound
        )
    })?;
    Ok(0)
}

fn cmd_tradeoff(c: &Common) -> anyhow::Result<u8> {
    let cfg: TradeoffConfig = c.load()?;
    let probs = cfg.probs.clone().unwrap_or_else(|| vec![1.0 / cfg.levels as f64; cfg.levels]);
    let ks = cfg.ks.clone().unwrap_or_else(|| powers_of_two(cfg.nx * cfg.ny));
    let table = sampling_tradeoff(cfg.nx, cfg.ny, cfg.levels, &probs, cfg.lam1, cfg.lam2, &ks)?;
    let rows = || table.rows.iter().map(|r| vec![r.k.to_string(), r.cost.to_string(), r.entropy.to_string(), r.q.to_string()]);
    if let Some(dir) = c.out_dir()? {
        write_csv(&dir.join("tradeoff.csv"), &["k", "cost", "entropy", "q"], rows())?;
        write_json(&dir.join("tradeoff.json"), &table)?;
    }
    emit(c.json, &table, || {
        let mut s = String::from("k,cost,entropy,q\n");
        for r in rows() {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s.push_str(&format!("argmin k={} unimodal={} interior={}\n", table.argmin, table.is_unimodal(), table.argmin_is_interior()));
        s
    })?;
    Ok(0)
}
