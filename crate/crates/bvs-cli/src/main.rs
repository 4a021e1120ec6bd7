use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bvs::global_bounds::{crossing_n, figure1_curves, write_curves_csv, CurveSettings, LambdaRule};
use bvs::posterior::{write_models_csv, write_pips_csv};
use bvs::sim::{self, Bundle, EvidenceKind, PriorName, Scenario};
use bvs::tail_bounds as tb;
use bvs::{
    enumerate_posterior, gibbs_posterior, orthogonal_dp_posterior, Dataset, GibbsConfig, L0Criterion,
    ModelIndex,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "bvs", version, about = "Bayesian and L0 variable selection with finite-sample bounds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact posterior by enumerating every model up to size p̄.
    Enumerate(PosteriorArgs),
    /// Exact posterior for orthogonal designs via symmetric-polynomial recursions.
    OrthoDp(PosteriorArgs),
    /// Posterior estimated by Gibbs sampling over inclusion indicators.
    Gibbs(PosteriorArgs),
    /// Tail inequalities and global posterior-mass bounds.
    Bounds {
        #[command(subcommand)]
        cmd: BoundsCmd,
    },
    /// Seeded simulation study over prior bundles.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct PosteriorArgs {
    /// TOML file with `data`, a `[bundle]` table and optional `[gibbs]` table.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for models.csv and pips.csv.
    #[arg(long)]
    out: PathBuf,
    /// Replace the configured evidence by an L0 criterion: bic, ric or ebic:<xi>.
    #[arg(long)]
    criterion: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorConfig {
    /// CSV with a header row; the response is the first column.
    data: PathBuf,
    bundle: Bundle,
    /// Noise variance used by the known-variance Zellner prior.
    #[serde(default)]
    phi: Option<f64>,
    /// Reference model as a 0/1 string, for subset masses.
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    gibbs: Option<GibbsToml>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GibbsToml {
    sweeps: Option<usize>,
    burn_in: Option<usize>,
    chains: Option<usize>,
    random_scan: Option<bool>,
    rao_blackwell: Option<bool>,
}

#[derive(Subcommand)]
enum BoundsCmd {
    /// Evaluate one tail inequality.
    Tail(TailArgs),
    /// Global bounds on spurious and non-spurious mass over a grid of n.
    Global(GlobalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Chisq,
    Ncchisq,
    F,
    Fmoment,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Right,
    Left,
}

#[derive(Args)]
struct TailArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, value_enum, default_value = "right")]
    side: Side,
    /// Degrees of freedom (numerator for F).
    #[arg(long)]
    nu: f64,
    /// Denominator degrees of freedom for F.
    #[arg(long)]
    nu2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    w: f64,
    /// Free parameter (s for the F bounds and the non-central left tail).
    #[arg(long)]
    s: Option<f64>,
    /// Minimize over the free parameter.
    #[arg(long)]
    optimal: bool,
    /// Also print an exact or Monte Carlo reference probability.
    #[arg(long)]
    reference: bool,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GlobalArgs {
    #[arg(long)]
    case: u8,
    #[arg(long)]
    n_from: usize,
    #[arg(long)]
    n_to: usize,
    #[arg(long, default_value_t = 50)]
    n_step: usize,
    #[arg(long, default_value = "theta-squared-n")]
    lambda_rule: String,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 0.98)]
    alpha_prime: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file mirroring the scenario fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    replicates: Option<usize>,
    /// Add a normalized L0 bundle: bic, ric or ebic:<xi>.
    #[arg(long)]
    criterion: Option<String>,
    /// Also write plotdata.csv.
    #[arg(long)]
    plotdata: bool,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Enumerate(a) => posterior_cmd(a, sim::Engine::Enumerate),
        Cmd::OrthoDp(a) => posterior_cmd(a, sim::Engine::OrthoDp),
        Cmd::Gibbs(a) => posterior_cmd(a, sim::Engine::Gibbs),
        Cmd::Bounds { cmd: BoundsCmd::Tail(a) } => tail_cmd(a),
        Cmd::Bounds { cmd: BoundsCmd::Global(a) } => global_cmd(a),
        Cmd::Simulate(a) => simulate_cmd(a),
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn criterion_bundle(base: &Bundle, crit: &str) -> Result<Bundle> {
    let mut b = base.clone();
    match crit.parse::<L0Criterion>()? {
        L0Criterion::Bic => b.evidence = EvidenceKind::Bic,
        L0Criterion::Ric => b.evidence = EvidenceKind::Ric,
        L0Criterion::Ebic(xi) => {
            b.evidence = EvidenceKind::Ebic;
            b.ebic_xi = Some(xi);
        }
        L0Criterion::Custom(_) => bail!("custom criteria are not available from the command line"),
    }
    Ok(b)
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let p = dir.join(name);
    File::create(&p).with_context(|| format!("creating {}", p.display()))
}

fn posterior_cmd(a: PosteriorArgs, engine: sim::Engine) -> Result<()> {
    let cfg: PosteriorConfig = read_toml(&a.config)?;
    let data = Dataset::from_csv(&cfg.data)?;
    let bundle = match &a.criterion {
        Some(c) => criterion_bundle(&cfg.bundle, c)?,
        None => cfg.bundle.clone(),
    };
    if bundle.evidence == EvidenceKind::ZellnerKnown && cfg.phi.is_none() {
        bail!("the zellner-known evidence needs `phi` in the config");
    }
    let spec = bundle.spec(data.n(), data.p(), cfg.phi.unwrap_or(1.0), cfg.seed)?;
    let reference = cfg
        .reference
        .as_deref()
        .map(ModelIndex::parse_bitstring)
        .transpose()?;
    let summary = match engine {
        sim::Engine::Enumerate => enumerate_posterior(&data, &spec, reference.as_ref())?,
        sim::Engine::OrthoDp => orthogonal_dp_posterior(&data, &spec, reference.as_ref())?,
        sim::Engine::Gibbs => {
            let d = GibbsConfig::default();
            let g = cfg.gibbs.unwrap_or(GibbsToml {
                sweeps: None,
                burn_in: None,
                chains: None,
                random_scan: None,
                rao_blackwell: None,
            });
            let gc = GibbsConfig {
                sweeps: g.sweeps.unwrap_or(d.sweeps),
                burn_in: g.burn_in.unwrap_or(d.burn_in),
                chains: g.chains.unwrap_or(d.chains),
                random_scan: g.random_scan.unwrap_or(d.random_scan),
                rao_blackwell: g.rao_blackwell.unwrap_or(d.rao_blackwell),
                seed: cfg.seed,
            };
            gibbs_posterior(&data, &spec, &gc, reference.as_ref())?
        }
    };
    std::fs::create_dir_all(&a.out)?;
    write_models_csv(&summary, create(&a.out, "models.csv")?)?;
    write_pips_csv(&summary, create(&a.out, "pips.csv")?)?;
    if let Some(top) = summary.records.first() {
        println!("top model {} probability {:.6}", top.model, top.probability);
    }
    if let Some(m) = &summary.masses {
        println!(
            "reference {:.6} spurious {:.6} non-spurious {:.6}",
            m.reference_prob,
            m.spurious(),
            m.nonspurious()
        );
    }
    if let Some(g) = &summary.gibbs {
        println!(
            "chains {} retained sweeps {} max split-half discrepancy {:.4} distinct models {}",
            g.chains,
            g.retained_sweeps,
            g.split_half_discrepancy.iter().cloned().fold(0.0, f64::max),
            g.distinct_models
        );
    }
    Ok(())
}

fn tail_cmd(a: TailArgs) -> Result<()> {
    let need_nu2 = || a.nu2.context("--nu2 is required for F families");
    let (res, reference): (tb::TailResult, Option<(f64, Option<f64>)>) = match (a.family, a.side) {
        (Family::Chisq, Side::Right) => (tb::chisq_right(a.nu, a.w), Some((tb::chisq_sf(a.nu, a.w), None))),
        (Family::Chisq, Side::Left) => (tb::chisq_left(a.nu, a.w), Some((1.0 - tb::chisq_sf(a.nu, a.w), None))),
        (Family::Ncchisq, side) => {
            let r = match side {
                Side::Right => {
                    let v = if a.optimal {
                        tb::NcRightVariant::Optimal
                    } else {
                        tb::NcRightVariant::NuChoice
                    };
                    tb::ncchisq_right(a.nu, a.lambda, a.w, v)
                }
                Side::Left => tb::ncchisq_left(a.nu, a.lambda, a.w, a.s),
            };
            let reference = a.reference.then(|| {
                let smp = tb::mc_ncchisq(a.nu, a.lambda, a.draws, a.seed);
                let (p, se) = match side {
                    Side::Right => smp.right(a.w),
                    Side::Left => smp.left(a.w),
                };
                (p, Some(se))
            });
            (r, reference)
        }
        (Family::F, side) => {
            let nu2 = need_nu2()?;
            let r = match side {
                Side::Right => {
                    let mode = match (a.optimal, a.s) {
                        (true, _) => tb::FRightMode::Optimal,
                        (false, Some(s)) => tb::FRightMode::Given(s),
                        (false, None) => tb::FRightMode::ClosedForm,
                    };
                    tb::f_right(a.nu, nu2, a.lambda, a.w, mode)
                }
                Side::Left => {
                    let t = if a.optimal { tb::FLeftT::Optimal } else { tb::FLeftT::Closed };
                    tb::f_left(a.nu, nu2, a.lambda, a.w, a.s.unwrap_or(1.0), t)
                }
            };
            let reference = a.reference.then(|| {
                if a.lambda == 0.0 {
                    let sf = tb::f_sf(a.nu, nu2, a.w / a.nu);
                    match side {
                        Side::Right => (sf, None),
                        Side::Left => (1.0 - sf, None),
                    }
                } else {
                    let smp = tb::mc_ncf(a.nu, nu2, a.lambda, a.draws, a.seed);
                    let (p, se) = match side {
                        Side::Right => smp.right(a.w),
                        Side::Left => smp.left(a.w),
                    };
                    (p, Some(se))
                }
            });
            (r, reference)
        }
        (Family::Fmoment, Side::Right) => {
            let nu2 = need_nu2()?;
            (tb::f_moment(a.nu, nu2, a.w, a.s), Some((tb::f_sf(a.nu, nu2, a.w), None)))
        }
        (Family::Fmoment, Side::Left) => bail!("the moment bound covers the right tail only"),
    };
    println!("bound {:.10e}", res.bound);
    println!("raw {:.10e}", res.raw);
    println!("applicable {}", res.applicable);
    if let Some(p) = res.param {
        println!("parameter {p:.10}");
    }
    if a.reference {
        match reference {
            Some((p, Some(se))) => println!("reference {p:.10e} (monte carlo, se {se:.3e})"),
            Some((p, None)) => println!("reference {p:.10e} (exact)"),
            None => {}
        }
    }
    Ok(())
}

fn global_cmd(a: GlobalArgs) -> Result<()> {
    if a.n_step == 0 || a.n_from > a.n_to {
        bail!("need n-step > 0 and n-from ≤ n-to");
    }
    let settings = CurveSettings {
        alpha: a.alpha,
        alpha_prime: a.alpha_prime,
        lambda_rule: a.lambda_rule.parse::<LambdaRule>()?,
        ..CurveSettings::default()
    };
    let grid: Vec<usize> = (a.n_from..=a.n_to).step_by(a.n_step).collect();
    let rows = figure1_curves(a.case, &grid, &settings)?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_curves_csv(&rows, f)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    match crossing_n(&rows) {
        Some(n) => println!("non-spurious bound stays below spurious from n = {n}"),
        None => println!("non-spurious bound does not stay below spurious on this grid"),
    }
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut sc: Scenario = read_toml(&a.config)?;
    sc.seed = a.seed;
    if let Some(r) = a.replicates {
        sc.replicates = r;
    }
    if let Some(c) = &a.criterion {
        let base = Bundle {
            name: format!("l0-{c}"),
            evidence: EvidenceKind::Bic,
            prior: PriorName::Uniform,
            complexity_c: None,
            tau: None,
            ebic_xi: None,
            pbar: None,
            mc_draws: 0,
        };
        sc.bundles.push(criterion_bundle(&base, c)?);
    }
    if let Some(sw) = sc.sweep.clone() {
        let results = sim::run_sweep(&sc, &sw.n_grid, sw.p_equals_n)?;
        for r in &results {
            report(r);
        }
        sim::emit_sweep(&results, &a.out, a.plotdata)?;
    } else {
        let r = sim::run(&sc)?;
        report(&r);
        sim::emit(&r, &a.out, a.plotdata)?;
    }
    println!("results in {}", a.out.display());
    Ok(())
}

fn report(r: &sim::RunResult) {
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    for f in &r.failures {
        eprintln!("replicate {} bundle {} failed: {}", f.replicate, f.bundle, f.message);
    }
    for b in &r.bundles {
        let m = b.metric("prob_true").expect("always present");
        println!("n={} {}: mean p(M_t|y) {:.4} (se {:.4})", r.n, b.name, m.mean, m.se);
    }
}
