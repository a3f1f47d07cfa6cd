use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use microgrid::certify::{
    block_feasibility, build_hull, corner_profiles, synthesize_gains, verify_certificate, zeta_estimate, CapacityBox,
    HullKind, StabilityCertificate, SynthOptions, VerifyOptions, ZetaMode, BLOCK_SAMPLE_BUDGET,
};
use microgrid::controller::GainSet;
use microgrid::netmodel::{build_admittance, NetworkCase, ShuntLoads};
use microgrid::powerflow::{check_existence, InjectionRanges, Verdict};
use microgrid::sim::{metrics, run_scenario, Scenario, Trace};
use microgrid::Error;

#[derive(Parser)]
#[command(name = "microgrid", version, about = "Consensus inverter control: checks, certificates and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Jbar,
    Dbar,
}

impl From<Kind> for HullKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Jbar => HullKind::JBar,
            Kind::Dbar => HullKind::DBar,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Report the power-flow existence conditions for a case.
    CheckCase {
        case: PathBuf,
        /// JSON file with admissible injection ranges per bus id.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Dump the per-block Jacobian entry bounds and hull sizes.
    Bounds {
        case: PathBuf,
        #[arg(long, value_enum, default_value = "jbar")]
        kind: Kind,
    },
    /// Verify a certificate, or report block feasibility when none is given.
    Certify {
        case: PathBuf,
        gains: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Synthesize gains and a certificate.
    Synthesize {
        case: PathBuf,
        /// Output prefix; writes `<out>.gains.json` and `<out>.cert.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        /// Use `ε ζ I` instead of `ε ζ² I`.
        #[arg(long)]
        linear_zeta: bool,
    },
    /// Run a scenario and write the trace as CSV.
    Simulate {
        case: PathBuf,
        gains: PathBuf,
        scenario: PathBuf,
        /// Trace destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Summarize a trace.
    Metrics {
        trace: PathBuf,
        /// Nominal frequency in Hz.
        #[arg(long, default_value_t = 50.0)]
        f0: f64,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    Ok(fs::read_to_string(path)?)
}

fn load_case(path: &Path) -> Result<NetworkCase, Error> {
    NetworkCase::parse(&read(path)?)
}

fn load_gains(path: &Path) -> Result<GainSet, Error> {
    GainSet::parse(&read(path)?)
}

fn check_case(case: &Path, ranges: Option<&Path>) -> Result<u8, Error> {
    let case = load_case(case)?;
    let ranges = match ranges {
        Some(p) => Some(serde_json::from_str::<InjectionRanges>(&read(p)?).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?),
        None => None,
    };
    let y = build_admittance(&case, ShuntLoads::Exclude)?;
    let report = check_existence(&case, &y, ranges.as_ref());
    for c in &report.conditions {
        let v = match c.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::NotChecked => "not checked",
        };
        println!("({}) {v:<11} {}", c.label, c.description);
        if !c.violations.is_empty() {
            println!("    offending: {:?}", c.violations);
        }
    }
    Ok(0)
}

fn bounds(case: &Path, kind: Kind) -> Result<u8, Error> {
    let case = load_case(case)?;
    let y = build_admittance(&case, ShuntLoads::Exclude)?;
    let hull = build_hull(&case, &y, kind.into(), BLOCK_SAMPLE_BUDGET)?;
    println!("hull: {:?}, vertex product {}", hull.kind, hull.product_count());
    for (k, b) in hull.blocks.iter().enumerate() {
        let ids: Vec<u32> = b.inverters.iter().map(|&i| case.buses[i].id).collect();
        let rel: Vec<u32> = b.relevant.iter().map(|&i| case.buses[i].id).collect();
        println!(
            "block {k}: inverters {ids:?}, relevant buses {rel:?}, {} vertices",
            b.vertices.len()
        );
        for r in 0..b.dim() {
            let cells: Vec<String> = (0..b.dim())
                .map(|c| format!("[{:+.4e}, {:+.4e}]", b.lower[(r, c)], b.upper[(r, c)]))
                .collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(0)
}

fn certify(case: &Path, gains: &Path, cert: Option<&Path>) -> Result<u8, Error> {
    let case = load_case(case)?;
    let gains = load_gains(gains)?;
    gains.check_covers(&case)?;
    let y = build_admittance(&case, ShuntLoads::Exclude)?;
    match cert {
        Some(p) => {
            let cert = StabilityCertificate::parse(&read(p)?)?;
            let hull = build_hull(&case, &y, cert.hull_kind, BLOCK_SAMPLE_BUDGET)?;
            let rep = verify_certificate(&case, &gains, &cert, &hull, VerifyOptions::default())?;
            println!("mode: {:?}", rep.mode);
            println!("vertex product: {}", rep.vertex_count);
            println!("digest matches: {}", rep.digest_ok);
            println!("worst margin: {:.6e}", rep.worst_margin);
            println!("worst block eigenvalue: {:.6e}", rep.block_worst);
            if let Some((choice, v)) = &rep.counterexample {
                println!("violating vertex {choice:?} with eigenvalue {v:.6e}");
            }
            println!("{}", if rep.pass { "certificate accepted" } else { "certificate REJECTED" });
            Ok(if rep.pass { 0 } else { 3 })
        }
        None => {
            let hull = build_hull(&case, &y, HullKind::JBar, BLOCK_SAMPLE_BUDGET)?;
            let bf = block_feasibility(&case, &gains, &hull, 0.0)?;
            for (k, (w, n)) in bf.per_block.iter().zip(&bf.norms).enumerate() {
                println!("block {k}: max eigenvalue {w:+.6e}, max norm {n:.6e}");
            }
            let zeta = zeta_estimate(&case, &y, &gains, &corner_profiles(&case, 200, 0))?;
            println!("disturbance degree estimate: {zeta:.6e}");
            let pass = bf.worst < 0.0;
            println!(
                "{}",
                if pass {
                    format!("block feasibility holds with margin {:.6e}", bf.margin())
                } else {
                    "block feasibility FAILS".to_string()
                }
            );
            Ok(if pass { 0 } else { 3 })
        }
    }
}

fn synthesize(case: &Path, out: Option<&Path>, iterations: usize, linear: bool) -> Result<u8, Error> {
    let case = load_case(case)?;
    let y = build_admittance(&case, ShuntLoads::Exclude)?;
    let hull = build_hull(&case, &y, HullKind::JBar, BLOCK_SAMPLE_BUDGET)?;
    let opts = SynthOptions {
        stage1_iters: iterations,
        zeta_mode: if linear { ZetaMode::Linear } else { ZetaMode::Squared },
        ..SynthOptions::default()
    };
    let (gains, cert) = synthesize_gains(&case, &hull, Default::default(), &CapacityBox::from_case(&case), opts)?;
    eprintln!("block margin d = {:.6e}, certified disturbance degree = {:.6e}", cert.d, cert.zeta);
    match out {
        Some(prefix) => {
            let base = prefix.to_string_lossy();
            fs::write(format!("{base}.gains.json"), gains.to_json())?;
            fs::write(format!("{base}.cert.json"), cert.to_json())?;
        }
        None => {
            println!("{}", gains.to_json());
            println!("{}", cert.to_json());
        }
    }
    Ok(0)
}

fn simulate(case: &Path, gains: &Path, scenario: &Path, out: Option<&Path>, stride: usize) -> Result<u8, Error> {
    let case = load_case(case)?;
    let gains = load_gains(gains)?;
    let scenario = Scenario::parse(&read(scenario)?)?;
    let mut cfg = scenario.config();
    cfg.record_stride = stride;
    let trace = run_scenario(&case, &gains, &scenario.events, &cfg)?;
    match out {
        Some(p) => trace.write_csv(fs::File::create(p)?)?,
        None => trace.write_csv(io::stdout().lock())?,
    }
    let m = metrics(&trace, case.f0_hz)?;
    eprintln!(
        "final sharing error P {:.3e}, Q {:.3e}; max |f - f0| {:.3e} Hz; max |E - 1| {:.4}; max angle {:.3} deg",
        m.final_sharing_p, m.final_sharing_q, m.max_freq_dev, m.max_voltage_dev, m.max_angle_deg
    );
    if m.uncertified {
        eprintln!("warning: the communication graph was disconnected during the run");
    }
    Ok(0)
}

fn show_metrics(trace: &Path, f0: f64) -> Result<u8, Error> {
    let trace = Trace::read_csv(fs::File::open(trace)?)?;
    let m = metrics(&trace, f0)?;
    let text = serde_json::to_string_pretty(&m).expect("metrics serialize");
    writeln!(io::stdout(), "{text}")?;
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Certificate(_) => 3,
        e if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CheckCase { case, ranges } => check_case(case, ranges.as_deref()),
        Command::Bounds { case, kind } => bounds(case, *kind),
        Command::Certify { case, gains, cert } => certify(case, gains, cert.as_deref()),
        Command::Synthesize {
            case,
            out,
            iterations,
            linear_zeta,
        } => synthesize(case, out.as_deref(), *iterations, *linear_zeta),
        Command::Simulate {
            case,
            gains,
            scenario,
            out,
            stride,
        } => simulate(case, gains, scenario, out.as_deref(), *stride),
        Command::Metrics { trace, f0 } => show_metrics(trace, *f0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
