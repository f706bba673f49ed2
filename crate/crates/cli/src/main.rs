//! `gwdev`: runs law analyses, exact and simulated tails, and regime
//! verifications from a TOML experiment file.
//!
//! Exit status: 0 when every acceptance rule passed, 2 when a rule failed,
//! 1 on any error.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use gwdev::deviations::{decomposition_tails, verify, write_verify_csv, Regime, RuleOutcome};
use gwdev::limits::limit_report;
use gwdev::montecarlo::{simulate, write_mc_csv};
use gwdev::{Error, Result};
use serde::Serialize;
use serde_json::json;

use config::ExperimentConfig;
use report::{cross_check_csv, exact_tail_csv, to_csv, verify_svg, write_json, write_text, CrossCheck};

#[derive(Parser, Debug)]
#[command(name = "gwdev", version, about = "Deviation probabilities of sums over Galton-Watson generations")]
struct Cli {
    /// Experiment file (TOML). Without it the built-in defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    no_plots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Constants and classification of the offspring law.
    AnalyzeLaw,
    /// Limit objects of the offspring law on the configured grids.
    Limits,
    /// Exact P(R_n >= ε, Z_n > 0) by decomposition over Z_n.
    ExactTail,
    /// Monte Carlo estimates of P(R_n >= ε), cross-checked against the exact values.
    McTail,
    /// Checks a regime's predicted rate over a range of generations.
    Verify {
        #[arg(value_enum)]
        regime: RegimeArg,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RegimeArg {
    Ddev,
    LdevA,
    LdevB,
    LdevC,
    Bottcher,
    Ldev1,
}

impl RegimeArg {
    fn regime(self) -> Regime {
        match self {
            RegimeArg::Ddev => Regime::Ddev,
            RegimeArg::LdevA => Regime::LdevA,
            RegimeArg::LdevB => Regime::LdevB,
            RegimeArg::LdevC => Regime::LdevC { tau: 1.0 },
            RegimeArg::Bottcher => Regime::Bottcher,
            RegimeArg::Ldev1 => Regime::Ldev1,
        }
    }
}

/// Whether every acceptance rule of the run passed.
type Verdict = bool;

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    law: &'a str,
    increments: &'a str,
    seed: u64,
    experiments: usize,
    passed: bool,
    rules: Vec<RuleOutcome>,
    result: T,
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish<T: Serialize>(
        &self,
        command: &str,
        experiments: usize,
        rules: Vec<RuleOutcome>,
        result: T,
    ) -> Result<Verdict> {
        let passed = rules.iter().all(|r| r.passed);
        let summary = Summary {
            command,
            law: &self.cfg.law,
            increments: &self.cfg.increments,
            seed: self.cfg.seed,
            experiments,
            passed,
            rules,
            result,
        };
        write_json(&self.path(&format!("{command}.json")), &summary)?;
        write_text(&self.path(&format!("{command}.config.toml")), &self.cfg.to_toml())?;
        Ok(passed)
    }
}

fn analyze_law(run: &mut Run) -> Result<Verdict> {
    run.cfg.canonicalize()?;
    let law = run.cfg.build_law()?;
    let s = law.summary();
    let result = json!({
        "m": s.mean,
        "q": s.extinction_prob,
        "gamma": s.gamma,
        "alpha": s.schroder_alpha,
        "d": s.lattice_span,
        "mu": s.min_offspring,
        "beta": s.bottcher_beta,
        "classification": law.classify(),
        "summary": s,
    });
    println!("{}", serde_json::to_string_pretty(&result).map_err(|e| Error::IoFailure(e.to_string()))?);
    run.finish("analyze-law", 1, Vec::new(), result)
}

fn limits(run: &mut Run) -> Result<Verdict> {
    run.cfg.canonicalize()?;
    let law = run.cfg.build_law()?;
    let rep = limit_report(&law, &run.cfg.limits, &run.cfg.engine())?;
    let mut csv = String::from("function,argument,value\n");
    for (name, pts) in [
        ("schroder", &rep.schroder_values),
        ("bottcher", &rep.bottcher_values),
        ("laplace_w", &rep.phi_values),
        ("w_density", &rep.w_values),
    ] {
        for (a, v) in pts.iter() {
            csv.push_str(&format!("{name},{a:.14e},{v:.14e}\n"));
        }
    }
    write_text(&run.path("limits.csv"), &csv)?;
    run.finish("limits", 1, Vec::new(), rep)
}

fn exact_tail(run: &mut Run) -> Result<Verdict> {
    run.cfg.canonicalize()?;
    let law = run.cfg.build_law()?;
    let x = run.cfg.build_increments()?;
    let sec = &run.cfg.exact_tail;
    let rows = decomposition_tails(&law, &x, sec.n, &sec.epsilons, None, &run.cfg.decomposition())?;
    write_text(&run.path("exact_tail.csv"), &exact_tail_csv(&rows))?;
    run.finish("exact-tail", rows.len(), Vec::new(), rows)
}

fn mc_tail(run: &mut Run) -> Result<Verdict> {
    run.cfg.canonicalize()?;
    let law = run.cfg.build_law()?;
    let x = run.cfg.build_increments()?;
    let sec = run.cfg.montecarlo.clone();
    let batch = simulate(&law, Some(&x), sec.n, &sec.epsilons, run.cfg.seed, &run.cfg.mc())?;
    let est = batch.estimates();
    write_text(&run.path("mc_tail.csv"), &to_csv(|b| write_mc_csv(b, &est))?)?;
    let mut rules = Vec::new();
    let mut checks = Vec::new();
    if sec.cross_check && !est.is_empty() {
        let exact = decomposition_tails(&law, &x, sec.n, &sec.epsilons, None, &run.cfg.decomposition())?;
        let surv = if sec.survival_conditioning {
            1.0 - law.pgf_iterate(0.0, sec.n)
        } else {
            1.0
        };
        for (e, d) in est.iter().zip(&exact) {
            let (v, err) = (d.value / surv, d.error_bar / surv);
            let covered = v + err >= e.ci_low && v - err <= e.ci_high;
            checks.push(CrossCheck {
                epsilon: e.epsilon,
                exact: v,
                exact_error_bar: err,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                covered,
            });
        }
        write_text(&run.path("mc_check.csv"), &cross_check_csv(&checks))?;
        let covered = checks.iter().filter(|c| c.covered).count();
        rules.push(RuleOutcome {
            rule: "ci_covers_exact".into(),
            passed: covered == checks.len(),
            detail: format!(
                "{covered}/{} intervals at level {} cover the exact value",
                checks.len(),
                sec.ci_level
            ),
        });
    }
    run.finish("mc-tail", est.len(), rules, json!({ "estimates": est, "cross_check": checks }))
}

fn verify_cmd(run: &mut Run, regime: Regime) -> Result<Verdict> {
    let exp = run.cfg.resolve_experiment(regime)?;
    let report = verify(&exp, &run.cfg.limits, &run.cfg.decomposition())?;
    let stem = format!("verify_{}", exp.regime.to_string().replace(['(', ')', '='], "_").trim_end_matches('_'));
    write_text(&run.path(&format!("{stem}.csv")), &to_csv(|b| write_verify_csv(b, &report.rows))?)?;
    if run.cfg.emit_plots {
        let title = format!("{} , ε_n = {}", exp.regime, report.epsilon);
        write_text(&run.path(&format!("{stem}.svg")), &verify_svg(&title, &report.rows))?;
    }
    for r in &report.rules {
        eprintln!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.rule, r.detail);
    }
    let rules = report.rules.clone();
    let n = report.rows.len();
    run.finish(&stem.replace('_', "-"), n, rules, report)
}

fn execute(cli: Cli) -> Result<Verdict> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if cli.no_plots {
        cfg.emit_plots = false;
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads {t}: {e}")))?;
    }
    let out = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::IoFailure(format!("{}: {e}", out.display())))?;
    let limit = cfg.budgets.time_limit_secs;
    let mut run = Run { cfg, out };
    let start = Instant::now();
    let verdict = match cli.command {
        Command::AnalyzeLaw => analyze_law(&mut run),
        Command::Limits => limits(&mut run),
        Command::ExactTail => exact_tail(&mut run),
        Command::McTail => mc_tail(&mut run),
        Command::Verify { regime } => verify_cmd(&mut run, regime.regime()),
    }?;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!("finished in {elapsed:.2}s; outputs in {}", display(&run.out));
    if let Some(t) = limit {
        if elapsed > t {
            return Err(Error::BudgetExceeded(format!("run took {elapsed:.1}s, time limit {t}s")));
        }
    }
    Ok(verdict)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
