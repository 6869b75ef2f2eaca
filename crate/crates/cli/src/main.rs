use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use siegel::boundary::{spectrum_report, InterpScheme};
use siegel::cache::{cache_dir_from_env, cache_file_name, load_orbit, save_orbit_chunked, DEFAULT_CHUNK};
use siegel::cfrac::convergents_up_to;
use siegel::geometry::geometry_report;
use siegel::maps::{MapKind, MapSpec};
use siegel::orbit::{closest_returns_streaming, scaling_from_returns, EscalationOptions};
use siegel::output::{self, SpectrumMeta};
use siegel::pipeline::{self, files, Quantity, RunConfig, Stages, SweepConfig};
use siegel::{Error, Result};

#[derive(Parser)]
#[command(name = "siegel", version, about = "Siegel disk boundaries: orbits, spectra, regularity, scaling, geometry")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Iterate the boundary critical point and write an orbit cache file.
    Orbit(OrbitArgs),
    /// Resample a cached orbit onto a dyadic grid and write its spectrum.
    Spectrum(SpectrumArgs),
    /// CLP norms and the Hölder exponent from a spectrum.
    Regularity(RegularityArgs),
    /// Siegel radius and area from a spectrum.
    Geometry(GeometryArgs),
    /// Scaling exponent from closest returns.
    Scaling(ScalingArgs),
    /// Phase statistics over self-similarity windows.
    Phases(PhasesArgs),
    /// Every stage, end to end.
    Run(RunArgs),
    /// A table of runs over critical orders and rotation numbers.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct MapArgs {
    /// `quad` or `fmb:m=<int>:beta=<re>+<im>i`
    #[arg(long)]
    map: String,
    /// Continued fraction `head:period`, e.g. `:1` or `5:1`
    #[arg(long)]
    rot: String,
}

impl MapArgs {
    fn spec(&self) -> Result<MapSpec> {
        MapSpec::new(self.map.parse::<MapKind>()?, self.rot.parse()?)
    }
}

#[derive(Args)]
struct OrbitArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Orbit length; defaults to 4·2^level.
    #[arg(long, short = 'n')]
    iterations: Option<u64>,
    #[arg(long, default_value_t = 20)]
    level: u32,
    #[arg(long, default_value_t = 256)]
    prec: u32,
    /// Output file; defaults to the cache directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    chunk: usize,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    orbit: PathBuf,
    #[arg(long)]
    level: u32,
    #[arg(long, default_value_t = InterpScheme::Linear)]
    scheme: InterpScheme,
    /// Spectrum CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Log table of |c_k| and |k c_k| for plotting.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RegularityArgs {
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3, 4, 5, 6])]
    etas: Vec<u32>,
    #[arg(long, default_value_t = 400)]
    n_taus: usize,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    tau_max: Option<f64>,
    /// Manual window `lo,hi` in log10 τ.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    tau_window: Option<[f64; 2]>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Curves CSV: log10 τ against log10 N_η for each η and component.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long)]
    spectrum: PathBuf,
    /// Override the map recorded in the spectrum sidecar.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    rot: Option<String>,
    /// |α| for the κ_max bound.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    partial_sums: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, default_value_t = 2_000_000)]
    q_max: u64,
    /// Fixed precision in bits; without it the precision is doubled from
    /// `--start-bits` until consecutive runs agree.
    #[arg(long)]
    prec: Option<u32>,
    #[arg(long, default_value_t = 512)]
    start_bits: u32,
    #[arg(long, default_value_t = 8192)]
    max_bits: u32,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Closest returns CSV.
    #[arg(long)]
    returns: Option<PathBuf>,
}

#[derive(Args)]
struct PhasesArgs {
    #[arg(long)]
    spectrum: PathBuf,
    /// `j_lo,j_hi`; defaults to the two highest windows that fit.
    #[arg(long, value_parser = parse_pair::<u32>)]
    windows: Option<[u32; 2]>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    rot: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any `RunConfig` fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    rot: Option<String>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    prec: Option<u32>,
    #[arg(long)]
    scheme: Option<InterpScheme>,
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<u32>>,
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    tau_window: Option<[f64; 2]>,
    #[arg(long)]
    q_max: Option<u64>,
    #[arg(long, value_parser = parse_pair::<u32>)]
    phase_windows: Option<[u32; 2]>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    no_scaling: bool,
    #[arg(long)]
    no_phases: bool,
    #[arg(long)]
    no_geometry: bool,
    #[arg(long)]
    no_regularity: bool,
    /// Validate and print the plan without computing or writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// kappa, alpha, area or kappa-max
    #[arg(long)]
    quantity: Quantity,
    #[arg(long = "d", value_delimiter = ',', num_args = 0..)]
    ds: Vec<u32>,
    #[arg(long = "k", value_delimiter = ',', num_args = 0..)]
    ks: Vec<u32>,
    #[arg(long, default_value = pipeline::DEFAULT_TEMPLATE)]
    template: String,
    /// Base settings for every cell.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    q_max: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// `a,b`
fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 2], String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

fn print_json(v: &serde_json::Value) {
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn cmd_orbit(a: OrbitArgs) -> Result<()> {
    let spec = a.map.spec()?;
    let n = a.iterations.unwrap_or(4u64 << a.level);
    let out = match a.out {
        Some(p) => p,
        None => {
            let dir = cache_dir_from_env()
                .ok_or_else(|| Error::Config("give --out or set SIEGEL_CACHE_DIR".into()))?;
            std::fs::create_dir_all(&dir)?;
            dir.join(cache_file_name(&spec, a.prec, n))
        }
    };
    let (orbit, source) = pipeline::obtain_orbit(&spec, n, a.prec, cache_dir_from_env().as_deref())?;
    save_orbit_chunked(&out, &orbit, a.chunk)?;
    print_json(&json!({
        "orbit": out,
        "source": source,
        "iterations": orbit.iterations(),
        "prec_bits": orbit.prec_bits(),
        "digest": orbit.digest(),
        "diagnostics": orbit.diagnostics(),
    }));
    Ok(())
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<()> {
    let orbit = load_orbit(&a.orbit, None)?;
    let exec = if a.sequential { siegel::par::Exec::Sequential } else { siegel::par::Exec::Parallel };
    let sp = pipeline::spectrum_from_orbit(&orbit, a.level, a.scheme, exec)?;
    let mut meta = SpectrumMeta::new(&sp, &orbit.spec().kind.to_string(), &orbit.spec().rot.to_string());
    meta.iterations = Some(orbit.iterations());
    meta.prec_bits = Some(orbit.prec_bits());
    output::write_spectrum(&a.out, &sp, &meta)?;
    let rep = spectrum_report(&sp);
    if let Some(t) = &a.table {
        output::write_spectrum_table(t, &rep)?;
    }
    print_json(&json!({
        "spectrum": a.out,
        "level": sp.level,
        "orientation_flipped": sp.orientation_flipped,
        "max_gap": sp.grid.max_gap,
        "peaks": rep.peaks,
        "mean_peak_spacing": rep.mean_peak_spacing,
        "expected_peak_spacing": orbit.spec().rot.value_f64().log10().abs(),
    }));
    Ok(())
}

fn cmd_regularity(a: RegularityArgs) -> Result<()> {
    let (sp, meta) = output::read_spectrum(&a.spectrum)?;
    let rot: siegel::cfrac::RotationNumber = meta.rot.parse()?;
    let mut cfg = RunConfig { etas: a.etas, n_taus: a.n_taus, tau_window: a.tau_window, sequential: a.sequential, ..RunConfig::default() };
    if let Some(t) = a.tau_min {
        cfg.tau_min = t;
    }
    if let Some(t) = a.tau_max {
        cfg.tau_max = t;
    }
    let (curves, rep) =
        pipeline::regularity_analysis(&sp, &cfg.clp_options(), &cfg.window_options(&rot)).map_err(|e| e.source)?;
    if let Some(p) = &a.curves {
        output::write_curves(p, &curves)?;
    }
    if let Some(p) = &a.out {
        output::write_json(p, &rep)?;
    }
    print_json(&serde_json::to_value(&rep)?);
    Ok(())
}

fn cmd_geometry(a: GeometryArgs) -> Result<()> {
    let (sp, meta) = output::read_spectrum(&a.spectrum)?;
    let map = a.map.unwrap_or(meta.map);
    let rot = a.rot.unwrap_or(meta.rot);
    let spec = MapSpec::new(map.parse()?, rot.parse()?)?;
    let convs = convergents_up_to(&spec.rot, sp.k_max() as u64);
    let geo = geometry_report(&sp, &spec, &convs, a.alpha);
    if let Some(p) = &a.partial_sums {
        output::write_partial_sums(p, &geo.area)?;
    }
    if let Some(p) = &a.out {
        output::write_json(p, &geo)?;
    }
    print_json(&serde_json::to_value(&geo)?);
    Ok(())
}

fn cmd_scaling(a: ScalingArgs) -> Result<()> {
    let spec = a.map.spec()?;
    let convs = convergents_up_to(&spec.rot, a.q_max);
    let period = spec.rot.period().len();
    let (result, prec) = match a.prec {
        Some(bits) => {
            let r = scaling_from_returns(&closest_returns_streaming(&spec, &convs, bits)?, period)?;
            (r, bits)
        }
        None => {
            let opts = EscalationOptions { start_bits: a.start_bits, max_bits: a.max_bits, tolerance: a.tolerance };
            let r = siegel::orbit::scaling_exponent_auto(&spec, &convs, &opts)?;
            let bits = r.audit.as_ref().map_or(a.start_bits, |x| x.prec_bits);
            (r, bits)
        }
    };
    if let Some(p) = &a.returns {
        output::write_returns(p, &closest_returns_streaming(&spec, &convs, prec)?)?;
    }
    let kmax = siegel::geometry::kappa_max(result.best(), &spec.rot);
    let report = json!({ "map": spec.kind.to_string(), "rot": spec.rot.to_string(), "prec_bits": prec, "kappa_max": kmax, "scaling": result });
    if let Some(p) = &a.out {
        output::write_json(p, &report)?;
    }
    print_json(&report);
    Ok(())
}

fn cmd_phases(a: PhasesArgs) -> Result<()> {
    let (sp, meta) = output::read_spectrum(&a.spectrum)?;
    let rot: siegel::cfrac::RotationNumber = a.rot.unwrap_or(meta.rot).parse()?;
    let windows = a.windows.map(|[x, y]| (x, y));
    let (sample, rep) = pipeline::phase_analysis(&sp, &rot, windows, a.bins)?;
    std::fs::create_dir_all(&a.out_dir)?;
    output::write_histogram(&a.out_dir.join(files::HISTOGRAM), &rep.histogram)?;
    output::write_qq(&a.out_dir.join(files::QQ), &rep.ks)?;
    output::write_json(&a.out_dir.join(files::PHASE_REPORT), &rep)?;
    let mut w = csv::Writer::from_path(a.out_dir.join(files::PHASES)).map_err(Error::from)?;
    w.write_record(["k", "phase"]).map_err(Error::from)?;
    for (i, p) in sample.phases.iter().enumerate() {
        w.write_record([(sample.k_lo + i as u64).to_string(), p.to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    let mut v = serde_json::to_value(&rep)?;
    v["histogram"] = json!({ "bins": rep.histogram.counts.len() });
    print_json(&v);
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $val:expr) => {
            if let Some(v) = $val {
                cfg.$field = v;
            }
        };
    }
    set!(map, a.map.clone());
    set!(rot, a.rot.clone());
    set!(level, a.level);
    set!(prec_bits, a.prec);
    set!(scheme, a.scheme);
    set!(etas, a.etas.clone());
    set!(out_dir, a.out_dir.clone());
    set!(seed, a.seed);
    if a.iterations.is_some() {
        cfg.iterations = a.iterations;
    }
    if a.tau_window.is_some() {
        cfg.tau_window = a.tau_window;
    }
    if a.phase_windows.is_some() {
        cfg.phase_windows = a.phase_windows;
    }
    if a.cache_dir.is_some() {
        cfg.cache_dir = a.cache_dir.clone();
    }
    if let Some(q) = a.q_max {
        cfg.scaling.q_max = q;
    }
    cfg.sequential |= a.sequential;
    let st = &mut cfg.stages;
    st.scaling &= !a.no_scaling;
    st.phases &= !a.no_phases;
    st.geometry &= !a.no_geometry;
    st.regularity &= !a.no_regularity;
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> std::result::Result<(), (i32, String)> {
    let cfg = run_config(&a).map_err(|e| (e.exit_code(), e.to_string()))?;
    if a.dry_run {
        let plan = cfg.plan().map_err(|e| (e.exit_code(), e.to_string()))?;
        for step in plan {
            let _ = writeln!(std::io::stdout(), "{step}");
        }
        return Ok(());
    }
    let rep = pipeline::run_pipeline(&cfg).map_err(|e| (e.exit_code(), e.to_string()))?;
    print_json(&json!({
        "report": cfg.out_dir.join(files::REPORT),
        "kappa": rep.regularity.as_ref().map(|r| r.kappa),
        "kappa_max": rep.kappa_max,
        "alpha": rep.scaling.as_ref().map(|s| s.best()),
        "area": rep.geometry.as_ref().map(|g| g.area.area),
        "radius": rep.geometry.as_ref().map(|g| g.radius.first),
    }));
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(l) = a.level {
        base.level = l;
    }
    if let Some(q) = a.q_max {
        base.scaling.q_max = q;
    }
    if a.cache_dir.is_some() {
        base.cache_dir = a.cache_dir.clone();
    }
    base.stages = Stages::default();
    let sweep = SweepConfig {
        quantity: a.quantity,
        cells: pipeline::cells(&a.ds, &a.ks),
        template: a.template,
        base,
        jobs: a.jobs,
        out_dir: a.out_dir.clone(),
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let table = pipeline::table_sweep(&sweep);
    pipeline::write_sweep_csv(&a.out_dir.join("table.csv"), &table)?;
    pipeline::write_sweep_grid(&a.out_dir.join("grid.csv"), &table)?;
    output::write_json(&a.out_dir.join("sweep.json"), &table)?;
    print_json(&serde_json::to_value(&table)?);
    Ok(())
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", p.display())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: std::result::Result<(), (i32, String)> = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        other => {
            let r = match other {
                Cmd::Orbit(a) => cmd_orbit(a),
                Cmd::Spectrum(a) => exists(&a.orbit).and_then(|_| cmd_spectrum(a)),
                Cmd::Regularity(a) => exists(&a.spectrum).and_then(|_| cmd_regularity(a)),
                Cmd::Geometry(a) => exists(&a.spectrum).and_then(|_| cmd_geometry(a)),
                Cmd::Scaling(a) => cmd_scaling(a),
                Cmd::Phases(a) => exists(&a.spectrum).and_then(|_| cmd_phases(a)),
                Cmd::Sweep(a) => cmd_sweep(a),
                Cmd::Run(_) => unreachable!(),
            };
            r.map_err(|e| (e.exit_code(), e.to_string()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
