use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use ringfed_core::metrics::{write_csv, Report};
use ringfed_core::{load_idx_limited, Dataset, ReportFormat, Simulator, SummaryStats};

use crate::error::{CliError, CliResult};
use crate::settings::{Resolved, Settings, KEYS};
use crate::sweep::{parse_grid_entry, run_sweep, table3_grid, SweepSpec};

fn setting_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .help("key = value configuration file; flags override its values")];
    for k in KEYS {
        let mut arg = Arg::new(k.key).long(k.key).help(k.help);
        if k.switch {
            arg = arg
                .value_name("BOOL")
                .num_args(0..=1)
                .default_missing_value("true")
                .require_equals(true);
        } else {
            arg = arg.value_name("VALUE");
        }
        if let Some(d) = k.default {
            arg = arg.help(format!("{} [default: {d}]", k.help));
        }
        args.push(arg);
    }
    args
}

pub fn command() -> Command {
    Command::new("ringfed")
        .about("Simulate federated training with FedAvg, RingFed, FedProx or SCAFFOLD")
        .version(env!("CARGO_PKG_VERSION"))
        .args_conflicts_with_subcommands(true)
        .args_override_self(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("log progress (-v per round, -vv debug)"),
        )
        .args(setting_args())
        .subcommand(
            Command::new("sweep")
                .args_override_self(true)
                .about("Run one experiment per point of a hyperparameter grid")
                .args(setting_args())
                .arg(
                    Arg::new("grid")
                        .long("grid")
                        .value_name("KEY=V1,V2,...")
                        .action(ArgAction::Append)
                        .help("values to sweep for one key; repeatable"),
                )
                .arg(
                    Arg::new("table3")
                        .long("table3")
                        .action(ArgAction::SetTrue)
                        .help("sweep lr {1e-4,5e-4,1e-3,5e-3} x momentum {0.9,1.0} x lr-decay {0.98,0.99,1.0}"),
                )
                .arg(
                    Arg::new("out-dir")
                        .long("out-dir")
                        .value_name("DIR")
                        .required(true)
                        .help("directory for per-run reports and summary tables"),
                )
                .arg(
                    Arg::new("parallel")
                        .long("parallel")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("1")
                        .help("concurrent runs, each in its own process"),
                ),
        )
}

fn settings_from(m: &ArgMatches) -> CliResult<Settings> {
    let mut s = match m.get_one::<String>("config") {
        Some(path) => Settings::from_file(Path::new(path))?,
        None => Settings::default(),
    };
    let mut flags = Settings::default();
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            flags.set(k.key, v.clone())?;
        }
    }
    s.merge(&flags);
    Ok(s)
}

/// Parses arguments, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(matches.get_count("verbose"));
    let result = match matches.subcommand() {
        Some(("sweep", sub)) => sweep(sub),
        _ => single(&matches),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn load(images: &Path, labels: &Path, limit: Option<usize>) -> CliResult<Dataset> {
    load_idx_limited(images, labels, limit).map_err(CliError::from)
}

fn single(m: &ArgMatches) -> CliResult<i32> {
    let resolved = settings_from(m)?.resolve()?;
    eprint!("# resolved configuration\n{}", resolved.settings.to_text());
    let train = load(&resolved.data.train_images, &resolved.data.train_labels, resolved.train_limit)?;
    let test = load(&resolved.data.test_images, &resolved.data.test_labels, resolved.test_limit)?;
    let summary = execute(&resolved, &train, &test, resolved.out.as_deref(), resolved.format)?;
    eprintln!(
        "{}: rounds to {:.2} accuracy: {}, max accuracy {:.4}, last-{} mean {:.4} (sd {:.4})",
        resolved.run.algorithm,
        summary.target_accuracy,
        summary
            .rnd_to_target
            .map_or_else(|| "not reached".to_string(), |r| r.to_string()),
        summary.max_accuracy,
        summary.tail_window,
        summary.tail_mean,
        summary.tail_stdev
    );
    Ok(0)
}

/// Runs one resolved experiment and writes its report to `out` (or stdout).
pub fn execute(
    resolved: &Resolved,
    train: &Dataset,
    test: &Dataset,
    out: Option<&Path>,
    format: ReportFormat,
) -> CliResult<SummaryStats> {
    let mut sim = Simulator::new(resolved.run.clone(), train, test)?;
    let log = sim.run()?;
    let summary = SummaryStats::compute(&log, resolved.target_accuracy, resolved.tail_window, None)?;
    let report = Report {
        config: resolved.config_json(),
        summary: Some(summary.clone()),
        control_units: sim.ledger().control_units,
        records: log,
    };
    match out {
        Some(path) => report.write(path, format)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let res = match format {
                ReportFormat::Csv => write_csv(&report.records, &mut lock),
                ReportFormat::Json => serde_json::to_writer_pretty(&mut lock, &report)
                    .map_err(std::io::Error::other)
                    .and_then(|_| writeln!(lock)),
            };
            res.map_err(|e| CliError::Runtime(format!("cannot write report: {e}")))?;
        }
    }
    Ok(summary)
}

/// Image path, label path and example limit of a loaded dataset.
type DataKey = (PathBuf, PathBuf, Option<usize>);

fn sweep(m: &ArgMatches) -> CliResult<i32> {
    let base = settings_from(m)?;
    base.resolve()?;
    let mut grid = if m.get_flag("table3") { table3_grid() } else { Vec::new() };
    for raw in m.get_many::<String>("grid").into_iter().flatten() {
        grid.push(parse_grid_entry(raw)?);
    }
    let spec = SweepSpec::new(base, grid)?;
    for p in spec.points()? {
        p.settings.resolve().map_err(|e| {
            CliError::Usage(format!("grid point {} is invalid: {e}", p.index))
        })?;
    }
    let out_dir = PathBuf::from(m.get_one::<String>("out-dir").expect("required"));
    let parallel = *m.get_one::<usize>("parallel").expect("defaulted");

    let mut cache: Vec<(DataKey, Dataset)> = Vec::new();
    let mut runner = |settings: &Settings, report: &Path| -> CliResult<()> {
        let r = settings.resolve()?;
        let keys = [
            (r.data.train_images.clone(), r.data.train_labels.clone(), r.train_limit),
            (r.data.test_images.clone(), r.data.test_labels.clone(), r.test_limit),
        ];
        for k in &keys {
            if !cache.iter().any(|(ck, _)| ck == k) {
                let ds = load(&k.0, &k.1, k.2)?;
                cache.push((k.clone(), ds));
            }
        }
        let get = |k: &DataKey| {
            &cache.iter().find(|(ck, _)| ck == k).expect("cached").1
        };
        execute(&r, get(&keys[0]), get(&keys[1]), Some(report), ReportFormat::Json)?;
        Ok(())
    };
    let rows = run_sweep(&spec, &out_dir, parallel, &mut runner)?;
    print!("{}", crate::sweep::best_table(&rows));
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} run(s) failed; see sweep.csv", rows.len());
    }
    Ok(if failed == rows.len() { 3 } else { 0 })
}
