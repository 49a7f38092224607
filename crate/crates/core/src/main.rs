use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nvis_reliability::cli::config::{parse_config, Config};
use nvis_reliability::cli::oracles::run_oracles;
use nvis_reliability::cli::output::{
    domain_svg, read_csv, read_mesh_json, write_csv, write_domain_csv, write_mesh_json, ResultRow,
};
use nvis_reliability::dependability::RedundancyMode;
use nvis_reliability::engine::run;
use nvis_reliability::error::{Result, SimError};
use nvis_reliability::experiment::{
    parse_list, pb0_index, reliability_mesh, sweep, working_domain, GridSpec, MeshPoint, ReliabilityMesh,
};
use nvis_reliability::transport::Protocol;

#[derive(Parser)]
#[command(name = "nvis-reliability", version, about = "Transport reliability simulator for LoRa + NVIS sensor networks")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Axis restriction, e.g. "clusters=8..64;pb0=1e-3,1e-1".
    #[arg(long = "sub-grid", global = true)]
    sub_grid: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Comma-separated redundancy modes.
    #[arg(long, global = true)]
    modes: Option<String>,
    /// Comma-separated protocols.
    #[arg(long, global = true)]
    protocols: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one cell once and print its ledgers.
    Simulate,
    /// Run the grid or a sub-grid and write results.csv and meshes.json.
    Sweep,
    /// Turn a results CSV into meshes.json.
    Mesh { input: PathBuf },
    /// Turn a results CSV or meshes.json into domain.svg and domain.csv.
    DomainMap {
        input: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// best, none, social or consensus.
        #[arg(long = "domain-modes")]
        domain_modes: Option<String>,
    },
    /// Run the formula and brute-force oracle suite.
    Validate,
    /// Print every configuration key with its default.
    ConfigReference,
}

fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Config { .. } | SimError::InvalidParameter(_) | SimError::Input(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => parse_config(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.parallel {
        config.parallel = p;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn execute(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Sweep => run_sweep(&cli),
        Command::Mesh { input } => {
            let meshes = meshes_from(input)?;
            let path = out_dir(&cli)?.join("meshes.json");
            write_mesh_json(&meshes, create(&path)?)?;
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::DomainMap {
            input,
            threshold,
            domain_modes,
        } => {
            let mut config = load_config(&cli)?;
            if let Some(t) = threshold {
                config.set("experiment.threshold", &t.to_string())?;
            }
            if let Some(m) = domain_modes {
                config.set("experiment.domain_modes", m)?;
            }
            config.validate()?;
            let map = working_domain(&meshes_from(input)?, config.threshold, config.domain_modes);
            let dir = out_dir(&cli)?;
            fs::write(dir.join("domain.svg"), domain_svg(&map))?;
            write_domain_csv(&map, create(&dir.join("domain.csv"))?)?;
            eprintln!("wrote {} and {}", dir.join("domain.svg").display(), dir.join("domain.csv").display());
            Ok(0)
        }
        Command::Validate => {
            let checks = run_oracles();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 2 })
        }
        Command::ConfigReference => {
            print!("{}", Config::reference());
            Ok(0)
        }
    }
}

fn simulate(cli: &Cli) -> Result<u8> {
    let mut config = load_config(cli)?;
    if let Some(list) = &cli.protocols {
        match parse_list::<Protocol>(list, "--protocols")?.as_slice() {
            [p] => config.run.protocol = *p,
            _ => return Err(SimError::config("--protocols", "simulate takes exactly one protocol")),
        }
    }
    if let Some(list) = &cli.modes {
        match parse_list::<RedundancyMode>(list, "--modes")?.as_slice() {
            [m] => config.run.mode = *m,
            _ => return Err(SimError::config("--modes", "simulate takes exactly one mode")),
        }
    }
    let result = run(&config.run, config.seed)?;
    let json = serde_json::to_string_pretty(&result)?;
    println!("{json}");
    if cli.out.is_some() {
        fs::write(out_dir(cli)?.join("simulate.json"), json + "\n")?;
    }
    Ok(0)
}

/// Grid for a sweep. Scenario and Pb0 keys set in the config pin their axis.
fn grid_spec(cli: &Cli, config: &Config) -> Result<GridSpec> {
    let mut spec = GridSpec {
        rounds: config.rounds,
        ..GridSpec::default()
    };
    if config.is_explicit("sim.pb0") {
        if pb0_index(config.run.pb0).is_none() {
            return Err(SimError::config(
                "sim.pb0",
                format!("{} is not on the Pb0 axis and cannot be swept", config.run.pb0),
            ));
        }
        spec.pb0 = vec![config.run.pb0];
    }
    if config.is_explicit("scenario.clusters_per_gateway") {
        spec.clusters = vec![config.run.topology.clusters_per_gateway];
    }
    if config.is_explicit("scenario.stations_per_cluster") {
        spec.redundancy = vec![config.run.topology.stations_per_cluster];
    }
    if let Some(expr) = &cli.sub_grid {
        spec.restrict(expr)?;
    }
    if let Some(list) = &cli.modes {
        spec.modes = parse_list(list, "--modes")?;
    }
    if let Some(list) = &cli.protocols {
        spec.protocols = parse_list(list, "--protocols")?;
    }
    spec.validate()?;
    Ok(spec)
}

fn run_sweep(cli: &Cli) -> Result<u8> {
    let config = load_config(cli)?;
    let spec = grid_spec(cli, &config)?;
    let dir = out_dir(cli)?;
    let points = sweep(&config.run, &spec, config.seed, config.parallel, true)?;
    let rows: Vec<ResultRow> = points.iter().map(ResultRow::from_point).collect();
    let mut csv = create(&dir.join("results.csv"))?;
    write_csv(&rows, &mut csv)?;
    csv.flush()?;
    write_mesh_json(&reliability_mesh(&points), create(&dir.join("meshes.json"))?)?;
    eprintln!("wrote {} points to {}", points.len(), dir.display());
    Ok(0)
}

fn meshes_from(input: &Path) -> Result<Vec<ReliabilityMesh>> {
    let file = BufReader::new(File::open(input)?);
    if input.extension().is_some_and(|e| e == "json") {
        return read_mesh_json(file);
    }
    let points = read_csv(file)?
        .iter()
        .map(ResultRow::to_point)
        .collect::<Result<Vec<MeshPoint>>>()?;
    Ok(reliability_mesh(&points))
}
