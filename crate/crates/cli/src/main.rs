//! `sepcert` command line: state generation, detection with certificate
//! output, certificate verification, closed-form criteria, base tables and
//! the reproduction suite.
//!
//! Exit codes: 0 separable / passed, 1 inconclusive / failed, 2 error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sepcert::certificate::{self, verify_certificate};
use sepcert::criteria::{self, Criterion, CriterionReport, Verdict};
use sepcert::detector::{self, AutoOptions, Base, BaseTable, DetectOptions, DetectionOutcome, TableEntry};
use sepcert::io::{self, StateMeta};
use sepcert::linalg::BipartiteState;
use sepcert::{repro, states};

/// Largest local dimension accepted without `--allow-large`.
const MAX_DIM: usize = 6;
const GENERATOR: &str = concat!("sepcert ", env!("CARGO_PKG_VERSION"));

#[derive(Parser, Debug)]
#[command(name = "sepcert", version, about = "Separability certificates for bipartite quantum states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search for a product-state decomposition of a state
    Detect(DetectArgs),
    /// Evaluate a closed-form separability criterion
    Criterion {
        which: Which,
        state: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a certificate against a state
    Verify {
        cert: PathBuf,
        state: PathBuf,
        /// Reassembly residual tolerance (max-abs entry)
        #[arg(long, default_value_t = certificate::TOL_CERT)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Generate state and ensemble files
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Maintain a table of faithful base states
    Table {
        #[command(subcommand)]
        action: TableAction,
    },
    /// Run the acceptance criteria
    Repro {
        /// Run a single criterion (1-8)
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        only: Option<u8>,
        #[arg(long)]
        json: bool,
    },
    /// Detection rate of random-base search on separable two-qubit states
    Coverage {
        #[arg(long, default_value_t = 50)]
        states: usize,
        #[arg(long, default_value_t = 32)]
        bases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    Eig,
    Gb,
    Ppt,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct Tolerances {
    /// Minimum normalized LMI margin for a feasible point
    #[arg(long, default_value_t = 1e-7)]
    tol_feas: f64,
    /// Relative equality residual
    #[arg(long, default_value_t = 1e-8)]
    tol_eq: f64,
    /// Certificate reassembly tolerance
    #[arg(long, default_value_t = certificate::TOL_CERT)]
    tol_cert: f64,
}

impl Tolerances {
    fn detect_options(&self) -> Result<DetectOptions> {
        for (name, v) in [("--tol-feas", self.tol_feas), ("--tol-eq", self.tol_eq), ("--tol-cert", self.tol_cert)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        let mut opts = DetectOptions::default();
        opts.solver.eps_feas = self.tol_feas;
        opts.solver.eps_eq = self.tol_eq;
        opts.build.residual_tol = self.tol_cert;
        opts.verify_tol = self.tol_cert;
        Ok(opts)
    }

    fn to_json(&self) -> Value {
        json!({ "feas": self.tol_feas, "eq": self.tol_eq, "cert": self.tol_cert })
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    state: PathBuf,
    /// Use this base ensemble only
    #[arg(long, conflicts_with_all = ["table", "random_bases"])]
    base: Option<PathBuf>,
    /// Try the active entries of this base table before random bases
    #[arg(long)]
    table: Option<PathBuf>,
    /// Number of random faithful bases to try
    #[arg(long)]
    random_bases: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two-sided search (equal local dimensions only)
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    enhanced: Toggle,
    /// Try the closed-form eigenvalue criterion first
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    analytic: Toggle,
    #[command(flatten)]
    tol: Tolerances,
    /// Write the certificate here when the state is certified
    #[arg(long)]
    cert_out: Option<PathBuf>,
    /// Worker threads for random trials
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    json: bool,
    /// Accept local dimensions above 6
    #[arg(long)]
    allow_large: bool,
}

#[derive(Subcommand, Debug)]
enum GenKind {
    /// (1-λ)·𝟙/d² + λ|ψ⁺⟩⟨ψ⁺|
    Isotropic {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random separable state with full-rank factors, or a pure product
    RandomSep {
        #[arg(long)]
        d: usize,
        /// Dimension of B (defaults to d)
        #[arg(long)]
        db: Option<usize>,
        /// Number of product terms (defaults to (d_A d_B)²)
        #[arg(long, conflicts_with = "pure")]
        terms: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One pure product term
        #[arg(long)]
        pure: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the product ensemble (usable as --base)
        #[arg(long)]
        ensemble_out: Option<PathBuf>,
    },
    /// Isotropic-spectrum state detected by the eigenvalue criterion but
    /// outside the Gurvits–Barnum ball
    SigmaEps {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// p·A + (1-p)·B
    Mix {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum TableAction {
    /// Append a faithful base (the file is created if missing)
    Add {
        table: PathBuf,
        /// Ensemble file to add
        #[arg(long, conflicts_with = "random")]
        ensemble: Option<PathBuf>,
        /// Add a random base instead
        #[arg(long, requires = "d")]
        random: bool,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        terms: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        allow_large: bool,
    },
    /// Flag entries reachable from another entry
    Prune {
        table: PathBuf,
        #[command(flatten)]
        tol: Tolerances,
    },
    /// Clear all prune flags
    Restore { table: PathBuf },
    List {
        table: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Detect(args) => detect(args),
        Command::Criterion { which, state, json } => criterion(which, &state, json),
        Command::Verify { cert, state, tol, json } => verify(&cert, &state, tol, json),
        Command::Gen { kind } => gen(kind).map(|()| true),
        Command::Table { action } => table(action),
        Command::Repro { only, json } => reproduce(only, json),
        Command::Coverage {
            states,
            bases,
            seed,
            jobs,
            json,
        } => coverage(states, bases, seed, jobs, json),
    }
}

fn guard_dims(d_a: usize, d_b: usize, allow_large: bool) -> Result<()> {
    if d_a.max(d_b) > MAX_DIM && !allow_large {
        bail!("local dimension {} exceeds {MAX_DIM}; pass --allow-large to proceed", d_a.max(d_b));
    }
    Ok(())
}

fn load_state(path: &Path) -> Result<BipartiteState> {
    Ok(io::load_state(path)?.0)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_file(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6e}"))
}

// ---------------------------------------------------------------- detect

fn absorb(acc: &mut DetectionOutcome, out: DetectionOutcome) {
    acc.trials.extend(out.trials);
    acc.notes.extend(out.notes);
    if out.certificate.is_some() {
        acc.status = out.status;
        acc.certificate = out.certificate;
        acc.base = out.base;
        acc.method = out.method;
    }
}

fn detect(a: DetectArgs) -> Result<bool> {
    let sigma = load_state(&a.state)?;
    guard_dims(sigma.d_a(), sigma.d_b(), a.allow_large)?;
    let opts = a.tol.detect_options()?;
    let enhanced = a.enhanced == Toggle::On;

    let (outcome, mode) = if let Some(path) = &a.base {
        let (ensemble, _) = io::load_ensemble(path)?;
        let base = Base::new(ensemble)?;
        let mut out = detector::detect_linear(&base, &sigma, &opts)?;
        let two_sided = sigma.d_a() == sigma.d_b() && base.state().dims() == sigma.dims();
        if !out.is_separable() && enhanced {
            if two_sided {
                absorb(&mut out, detector::detect_enhanced(&base, &sigma, &opts)?);
            } else {
                out.notes.push("two-sided search needs equal dimensions for base and target".into());
            }
        }
        (out, format!("given base {}", path.display()))
    } else {
        let table = a.table.as_deref().map(io::load_table).transpose()?;
        let n_bases = a.random_bases.unwrap_or(if table.is_some() { 0 } else { 32 });
        let auto = AutoOptions {
            n_bases,
            seed: a.seed,
            enhanced,
            analytic: a.analytic == Toggle::On,
            jobs: a.jobs.max(1),
            detect: opts.clone(),
        };
        let out = detector::detect_auto(&sigma, table.as_ref(), &auto)?;
        let stored = table.as_ref().map_or(0, |t| t.active().count());
        (out, format!("auto, {stored} table bases, {n_bases} random bases"))
    };

    let ppt = (sigma.dim() <= 6).then(|| criteria::ppt_check(&sigma));
    let written = match (&outcome.certificate, &a.cert_out) {
        (Some(cert), Some(path)) => {
            io::write_file(path, &io::certificate_to_json(cert))?;
            Some(path.clone())
        }
        _ => None,
    };

    if a.json {
        print_json(&json!({
            "generator": GENERATOR,
            "command": "detect",
            "state": a.state.display().to_string(),
            "dims": [sigma.d_a(), sigma.d_b()],
            "digest": certificate::digest_of(&sigma),
            "mode": mode,
            "seed": a.seed,
            "enhanced": enhanced,
            "tolerances": a.tol.to_json(),
            "status": outcome.status,
            "method": outcome.method,
            "certificate": outcome.certificate.as_ref().map(|c| json!({
                "terms": c.len(),
                "residual": c.residual,
                "clipped": c.clipped,
                "dropped": c.dropped,
                "path": written.as_ref().map(|p| p.display().to_string()),
            })),
            "trials": outcome.trials,
            "notes": outcome.notes,
            "ppt_advisory": ppt.as_ref().map(|r| json!({
                "verdict": r.verdict,
                "min_eigenvalue": r.statistic,
            })),
        }));
    } else {
        println!("{GENERATOR} detect");
        println!("state       {} ({}x{})", a.state.display(), sigma.d_a(), sigma.d_b());
        println!("digest      {}", certificate::digest_of(&sigma));
        println!(
            "mode        {mode}, seed {}, two-sided {}",
            a.seed,
            if enhanced { "on" } else { "off" }
        );
        println!(
            "tolerances  feas {:e}, eq {:e}, cert {:e}",
            a.tol.tol_feas, a.tol.tol_eq, a.tol.tol_cert
        );
        println!("trials");
        for t in &outcome.trials {
            let line = format!(
                "  {:<22} {:<10} {:<12} margin {:>11}  nullity {:<3} {}",
                t.label,
                t.method.to_string(),
                t.status.to_string(),
                fmt_opt(t.margin),
                t.nullity,
                t.note.as_deref().unwrap_or("")
            );
            println!("{}", line.trim_end());
        }
        for n in &outcome.notes {
            println!("note        {n}");
        }
        match &outcome.certificate {
            Some(c) => {
                let method = outcome.method.map(|m| m.to_string()).unwrap_or_default();
                println!(
                    "verdict     Separable (method {method}, {} terms, residual {:.3e})",
                    c.len(),
                    c.residual
                );
                match &written {
                    Some(p) => println!("certificate {}", p.display()),
                    None => println!("certificate not written (use --cert-out)"),
                }
            }
            None => println!("verdict     Inconclusive"),
        }
        if let Some(r) = &ppt {
            println!(
                "ppt advisory: {} (PPT), min eigenvalue of partial transpose {}",
                r.verdict,
                fmt_opt(r.statistic)
            );
        }
    }
    Ok(outcome.is_separable())
}

// ------------------------------------------------------ criterion, verify

fn criterion(which: Which, path: &Path, as_json: bool) -> Result<bool> {
    let sigma = load_state(path)?;
    let c = match which {
        Which::Eig => Criterion::Eigenvalue,
        Which::Gb => Criterion::GurvitsBarnum,
        Which::Ppt => Criterion::Ppt,
    };
    let report: CriterionReport = criteria::run(c, &sigma)?;
    if as_json {
        print_json(&json!({
            "generator": GENERATOR,
            "command": "criterion",
            "state": path.display().to_string(),
            "report": report,
        }));
    } else {
        println!("criterion   {}", c.id());
        println!("state       {} ({}x{})", path.display(), sigma.d_a(), sigma.d_b());
        println!("verdict     {}", report.verdict);
        println!("statistic   {}", fmt_opt(report.statistic));
        println!("threshold   {:.6e}", report.threshold);
        if let Some(n) = &report.note {
            println!("note        {n}");
        }
    }
    Ok(report.verdict == Verdict::Separable)
}

fn verify(cert_path: &Path, state_path: &Path, tol: f64, as_json: bool) -> Result<bool> {
    let cert = io::load_certificate(cert_path)?;
    let sigma = load_state(state_path)?;
    let report = verify_certificate(&cert, &sigma, tol);
    if as_json {
        print_json(&json!({
            "generator": GENERATOR,
            "command": "verify",
            "certificate": cert_path.display().to_string(),
            "state": state_path.display().to_string(),
            "tolerance": tol,
            "report": report,
        }));
    } else {
        for c in &report.checks {
            println!("{} {:<30} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        println!(
            "{} ({} terms, residual {:.3e}, tolerance {tol:e})",
            if report.passed { "certificate valid" } else { "certificate INVALID" },
            cert.len(),
            report.residual
        );
    }
    Ok(report.passed)
}

// -------------------------------------------------------------------- gen

fn gen(kind: GenKind) -> Result<()> {
    match kind {
        GenKind::Isotropic { d, lambda, out } => {
            let s = states::isotropic_state(d, lambda)?;
            let meta = StateMeta {
                label: Some(format!("isotropic d={d} lambda={lambda}")),
                seed: None,
            };
            emit(&io::state_to_json(&s, &meta), out.as_deref())
        }
        GenKind::SigmaEps { d, eps, out } => {
            let s = criteria::sigma_epsilon(d, eps)?;
            let meta = StateMeta {
                label: Some(format!("sigma-eps d={d} eps={eps}")),
                seed: None,
            };
            emit(&io::state_to_json(&s, &meta), out.as_deref())
        }
        GenKind::RandomSep {
            d,
            db,
            terms,
            seed,
            pure,
            out,
            ensemble_out,
        } => {
            let d_b = db.unwrap_or(d);
            let ensemble = if pure {
                states::random_pure_product(d, d_b, seed)?
            } else {
                states::random_separable(d, d_b, terms.unwrap_or((d * d_b).pow(2)), seed)?
            };
            let s = ensemble.assemble()?;
            let meta = StateMeta {
                label: Some(format!(
                    "{} d_a={d} d_b={d_b} terms={}",
                    if pure { "pure product" } else { "random separable" },
                    ensemble.len()
                )),
                seed: Some(seed),
            };
            if let Some(p) = ensemble_out {
                io::write_file(&p, &io::ensemble_to_json(&ensemble, Some(seed)))?;
            }
            emit(&io::state_to_json(&s, &meta), out.as_deref())
        }
        GenKind::Mix { a, b, p, out } => {
            let s = states::mix(&load_state(&a)?, &load_state(&b)?, p)?;
            let meta = StateMeta {
                label: Some(format!("mix p={p} of {} and {}", a.display(), b.display())),
                seed: None,
            };
            emit(&io::state_to_json(&s, &meta), out.as_deref())
        }
    }
}

// ------------------------------------------------------------------ table

fn table(action: TableAction) -> Result<bool> {
    match action {
        TableAction::Add {
            table,
            ensemble,
            random,
            d,
            terms,
            seed,
            allow_large,
        } => {
            let mut t = if table.exists() { io::load_table(&table)? } else { BaseTable::default() };
            let (ensemble, seed) = match (ensemble, random) {
                (Some(path), false) => io::load_ensemble(&path)?,
                (None, true) => {
                    let d = d.ok_or_else(|| anyhow!("--random needs --d"))?;
                    guard_dims(d, d, allow_large)?;
                    (states::random_separable(d, d, terms.unwrap_or(d.pow(4)), seed)?, Some(seed))
                }
                _ => bail!("pass exactly one of --ensemble or --random"),
            };
            guard_dims(ensemble.d_a(), ensemble.d_b(), allow_large)?;
            let entry = TableEntry::new(ensemble, seed).context("base rejected")?;
            println!(
                "added entry #{} ({}x{}, {} terms, sigma_min {:.3e})",
                t.entries.len(),
                entry.ensemble.d_a(),
                entry.ensemble.d_b(),
                entry.ensemble.len(),
                entry.sigma_min
            );
            t.entries.push(entry);
            io::write_file(&table, &io::table_to_json(&t))?;
            Ok(true)
        }
        TableAction::Prune { table, tol } => {
            let mut t = io::load_table(&table)?;
            let before = t.active().count();
            let records = detector::table_prune(&mut t, &tol.detect_options()?)?;
            for r in &records {
                println!(
                    "flagged #{} (reachable from #{}, sampled min output eigenvalue {:.3e})",
                    r.pruned, r.by, r.sampled_min_eigenvalue
                );
            }
            println!("{} of {before} active entries flagged", records.len());
            if !records.is_empty() {
                println!("note: flagged entries can still help two-sided detection; `table restore` clears flags");
            }
            io::write_file(&table, &io::table_to_json(&t))?;
            Ok(true)
        }
        TableAction::Restore { table } => {
            let mut t = io::load_table(&table)?;
            t.restore();
            io::write_file(&table, &io::table_to_json(&t))?;
            println!("{} entries active", t.entries.len());
            Ok(true)
        }
        TableAction::List { table, json } => {
            let t = io::load_table(&table)?;
            if json {
                let rows: Vec<Value> = t
                    .entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        json!({
                            "index": i,
                            "dims": [e.ensemble.d_a(), e.ensemble.d_b()],
                            "terms": e.ensemble.len(),
                            "sigma_min": e.sigma_min,
                            "seed": e.seed,
                            "pruned_by": e.pruned_by,
                            "digest": e.digest,
                        })
                    })
                    .collect();
                print_json(&Value::Array(rows));
            } else {
                for (i, e) in t.entries.iter().enumerate() {
                    let status = e.pruned_by.map_or("active".to_string(), |j| format!("pruned by #{j}"));
                    let seed = e.seed.map_or("-".to_string(), |s| s.to_string());
                    println!(
                        "#{i:<3} {}x{}  {:>3} terms  sigma_min {:.3e}  seed {seed:<20}  {status:<14} {}",
                        e.ensemble.d_a(),
                        e.ensemble.d_b(),
                        e.ensemble.len(),
                        e.sigma_min,
                        &e.digest[..16]
                    );
                }
                println!("{} entries, {} active", t.entries.len(), t.active().count());
            }
            Ok(true)
        }
    }
}

// ---------------------------------------------------------- repro, coverage

fn reproduce(only: Option<u8>, as_json: bool) -> Result<bool> {
    let ids: Vec<usize> = match only {
        Some(i) => vec![i as usize],
        None => (1..=8).collect(),
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = repro::run(id)?;
        if !as_json {
            println!("{o}");
        }
        outcomes.push(o);
    }
    let passed = outcomes.iter().all(|o| o.passed);
    if as_json {
        print_json(&json!({
            "generator": GENERATOR,
            "command": "repro",
            "passed": passed,
            "criteria": outcomes,
        }));
    } else {
        let n_pass = outcomes.iter().filter(|o| o.passed).count();
        println!("{n_pass}/{} criteria passed", outcomes.len());
    }
    Ok(passed)
}

fn coverage(n_states: usize, bases: usize, seed: u64, jobs: usize, as_json: bool) -> Result<bool> {
    let c = repro::coverage_benchmark(n_states, bases, seed, jobs.max(1))?;
    if as_json {
        print_json(&json!({
            "generator": GENERATOR,
            "command": "coverage",
            "rate": c.rate(),
            "result": c,
        }));
    } else {
        println!("{GENERATOR} coverage, seed {seed}, {bases} random bases per state");
        println!(
            "detected    {}/{} ({:.1}%)",
            c.detected,
            c.states,
            100.0 * c.rate()
        );
        println!("analytic    {}", c.by_analytic);
        println!("random      {}", c.by_random);
        println!("trials      {}", c.trials);
        println!("unverified  {}", c.unverified);
    }
    Ok(c.unverified == 0)
}
