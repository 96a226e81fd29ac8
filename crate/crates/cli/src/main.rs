use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mirs::config::{parse_number, Config};
use mirs::estimator::{
    calibrate_config, config_model, fit_options, reexpansion_check, reexpansion_triple, run_experiment, Report,
};
use mirs::kernels::GridField;
use mirs::model::{counterterm_active, counterterm_slot, Counterterms, Model};
use mirs::noise::{bump_direction, sample_white, NoiseSample};
use mirs::reexpansion::build_gamma_yx;
use mirs::selftest::{algebra_suite, kernel_suite, schauder_suite, shift_suite, SuiteReport};
use mirs::{Error, Node};

#[derive(Parser)]
#[command(name = "mirs", version, about = "Multi-index models: algebra checks, calibration and scaling estimates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact algebra and shift-covariance suites.
    SelftestAlgebra(Common),
    /// Kernel and Schauder suites on the configured grid.
    KernelsCheck(Common),
    /// BPHZ counterterms, written to counterterms.json.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Mollification scale, e.g. `2^-20`.
        #[arg(long, value_parser = parse_tau)]
        tau: Option<f64>,
    },
    /// Builds model samples, caches the noise and checks base-point identities.
    BuildModel(Common),
    /// Runs the statistical experiments and writes CSV and JSON reports.
    Estimate(Common),
    /// Re-expansion maps between three base points, with residuals.
    Reexpand(Common),
    /// Aggregates the JSON summaries in the output directory.
    Report(Common),
}

fn parse_tau(s: &str) -> Result<f64, String> {
    parse_number(s).map_err(|e| e.to_string())
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
    json: bool,
}

fn load(common: &Common) -> mirs::Result<Ctx> {
    let mut cfg = Config::from_file(&common.config)?.with_env_overrides();
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.samples {
        cfg.samples = n;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(Ctx {
        out: cfg.output_dir.clone(),
        cfg,
        json: common.json,
    })
}

fn write_summary(ctx: &Ctx, name: &str, rep: &Report) -> mirs::Result<()> {
    let v = rep.summary_json(&ctx.cfg)?;
    let text = serde_json::to_string_pretty(&v)?;
    fs::write(ctx.out.join(format!("{name}.json")), &text)?;
    if ctx.json {
        println!("{text}");
    } else {
        print_table(rep);
    }
    Ok(())
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_table(rep: &Report) {
    for f in &rep.fits {
        println!(
            "{}  {:<14} {:<14} slope {:>8.4} ± {:.4}  target {:>7.4} ± {}",
            mark(f.pass),
            f.quantity,
            f.beta,
            f.slope,
            f.stderr,
            f.target,
            f.tol
        );
    }
    for c in &rep.checks {
        println!("{}  {:<36} {:>12.4e} <= {:.3e}  {}", mark(c.pass), c.name, c.value, c.bound, c.detail);
    }
}

fn suites_to_report(suites: &[SuiteReport]) -> Report {
    let mut rep = Report::default();
    for s in suites {
        for c in &s.checks {
            rep.add_check(
                format!("{}/{}", s.suite, c.name),
                c.value,
                c.bound,
                c.pass,
                format!("{} instances, suite {:.2} s", c.instances, s.seconds),
            );
        }
    }
    rep
}

const COUNTERTERM_FILE: &str = "counterterms.json";

fn calibrate_and_write(ctx: &Ctx, model: &Model) -> mirs::Result<Counterterms> {
    let c = calibrate_config(model, &ctx.cfg, ctx.cfg.samples, 0, false)?;
    fs::write(ctx.out.join(COUNTERTERM_FILE), c.to_json()?)?;
    Ok(c)
}

/// Counterterms from the output directory, calibrating first if absent.
fn counterterms(ctx: &Ctx, model: &Model) -> mirs::Result<Counterterms> {
    let path = ctx.out.join(COUNTERTERM_FILE);
    if !path.exists() {
        eprintln!("no {COUNTERTERM_FILE} in {}; calibrating", ctx.out.display());
        return calibrate_and_write(ctx, model);
    }
    let c = Counterterms::from_json(&fs::read_to_string(&path)?, model.truncation().clone())?;
    if c.tau != model.spec.tau {
        return Err(Error::Config(format!(
            "{} was calibrated at tau = {:e}, config has model.tau = {:e}",
            path.display(),
            c.tau,
            model.spec.tau
        )));
    }
    Ok(c)
}

/// Noise sample from `cache/sample_{seed}_{index}.bin`, generated and
/// cached on a miss.
fn cached_noise(ctx: &Ctx, index: u64) -> mirs::Result<NoiseSample> {
    let dir = ctx.out.join("cache");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("sample_{}_{}.bin", ctx.cfg.seed, index));
    if path.exists() {
        let field = GridField::read_from(fs::File::open(&path)?)?;
        if field.grid == ctx.cfg.grid {
            return Ok(NoiseSample {
                seed: ctx.cfg.seed,
                sample_index: index,
                field,
            });
        }
    }
    let xi = sample_white(ctx.cfg.grid, ctx.cfg.seed, index);
    xi.field.write_to(std::io::BufWriter::new(fs::File::create(&path)?))?;
    Ok(xi)
}

fn file_stem(beta: &str) -> String {
    if beta.is_empty() || beta == "1" {
        return "one".into();
    }
    beta.chars()
        .map(|c| match c {
            ' ' => '_',
            '^' => 'p',
            '(' | ')' => '_',
            ',' => '-',
            c => c,
        })
        .collect()
}

fn selftest(ctx: &Ctx) -> mirs::Result<bool> {
    let g = ctx.cfg.grading();
    let suites = [
        algebra_suite(g, ctx.cfg.cutoff, 100, ctx.cfg.seed)?,
        shift_suite(g, ctx.cfg.cutoff, 100, ctx.cfg.seed)?,
    ];
    let rep = suites_to_report(&suites);
    write_summary(ctx, "selftest", &rep)?;
    Ok(rep.all_pass())
}

fn kernels_check(ctx: &Ctx) -> mirs::Result<bool> {
    let suites = [
        kernel_suite(ctx.cfg.grid)?,
        schauder_suite(ctx.cfg.grid, ctx.cfg.model_tau, ctx.cfg.seed)?,
    ];
    let rep = suites_to_report(&suites);
    write_summary(ctx, "kernels", &rep)?;
    Ok(rep.all_pass())
}

fn calibrate_cmd(mut ctx: Ctx, tau: Option<f64>) -> mirs::Result<bool> {
    if let Some(t) = tau {
        ctx.cfg.model_tau = t;
        ctx.cfg.validate()?;
    }
    let model = config_model(&ctx.cfg)?;
    let c = calibrate_and_write(&ctx, &model)?;
    let g = ctx.cfg.grading();
    let mut rep = Report::default();
    for b in model.index_set() {
        if !counterterm_slot(b, &g) {
            continue;
        }
        let (v, se) = (c.value(b), c.stderr.value(b));
        if counterterm_active(b, &g) {
            rep.add_check(format!("c {b}"), v, f64::INFINITY, true, format!("stderr {se:.3e}"));
        } else {
            rep.add_check(format!("c {b}"), v.abs(), 0.0, v == 0.0, "vanishes by parity");
        }
    }
    write_summary(&ctx, "calibrate", &rep)?;
    Ok(rep.all_pass())
}

const BASE_POINT_TOL: f64 = 1e-9;

fn build_model(ctx: &Ctx, samples: usize) -> mirs::Result<bool> {
    let model = config_model(&ctx.cfg)?;
    let c = counterterms(ctx, &model)?;
    let grid = ctx.cfg.grid;
    let dxi = bump_direction(grid, 1e-4, grid.node_point(Node::new(grid.n1 / 3, grid.n2 / 5)));
    let (mut worst_pi, mut worst_lin) = (0.0f64, 0.0f64);
    for i in 0..samples as u64 {
        let xi = cached_noise(ctx, i)?;
        let x = ctx.cfg.base_points[i as usize % ctx.cfg.base_points.len()];
        let s = model.build(&xi, x, &c)?;
        let v = model.linearize(&s, &dxi, &c)?;
        worst_pi = model.base_point_residuals(&s, &c).iter().fold(worst_pi, |m, r| m.max(r.1));
        worst_lin = model
            .linearized_base_point_residuals(&s, &v)
            .iter()
            .fold(worst_lin, |m, r| m.max(r.1));
        if i == 0 {
            let dir = ctx.out.join(format!("model_{}_0", ctx.cfg.seed));
            fs::create_dir_all(&dir)?;
            for (b, f) in s.pi.iter() {
                let name = format!("pi_{}.bin", file_stem(&b.to_string()));
                f.write_to(std::io::BufWriter::new(fs::File::create(dir.join(name))?))?;
            }
        }
    }
    let mut rep = Report::default();
    let detail = format!("{samples} samples");
    rep.add_check("base_point_identity", worst_pi, BASE_POINT_TOL, worst_pi <= BASE_POINT_TOL, detail.clone());
    rep.add_check("linearized_base_point_identity", worst_lin, BASE_POINT_TOL, worst_lin <= BASE_POINT_TOL, detail);
    write_summary(ctx, "build_model", &rep)?;
    Ok(rep.all_pass())
}

fn estimate(ctx: &Ctx) -> mirs::Result<bool> {
    let model = config_model(&ctx.cfg)?;
    let c = counterterms(ctx, &model)?;
    let rep = run_experiment(&ctx.cfg, &c)?;
    rep.write_csv(fs::File::create(ctx.out.join("estimate.csv"))?)?;
    write_summary(ctx, "estimate", &rep)?;
    Ok(rep.all_pass())
}

const REEXPANSION_TOL: f64 = 0.05;

fn reexpand(ctx: &Ctx, samples: usize) -> mirs::Result<bool> {
    let model = config_model(&ctx.cfg)?;
    let c = counterterms(ctx, &model)?;
    let grid = ctx.cfg.grid;
    let (x, y, z) = reexpansion_triple(&grid, ctx.cfg.base_points[0]);
    let opts = fit_options(&ctx.cfg);
    let smoothing = ctx.cfg.t[0];

    let xi = cached_noise(ctx, 0)?;
    let mx = model.build_in_chart(&xi, x, &c, x)?;
    let my = model.build_in_chart(&xi, y, &c, x)?;
    let mz = model.build_in_chart(&xi, z, &c, x)?;
    for (name, a, b) in [("yx", &mx, &my), ("zy", &my, &mz), ("zx", &mx, &mz)] {
        let r = build_gamma_yx(a, b, &opts)?;
        fs::write(ctx.out.join(format!("gamma_{name}.tsv")), r.matrix.to_triplet_text())?;
    }

    let r = reexpansion_check(&model, &c, ctx.cfg.seed, samples, (x, y, z), &opts, smoothing)?;
    let mut rep = Report::default();
    for row in &r.residuals {
        rep.add_check(format!("pi {}", row.beta), row.pi, REEXPANSION_TOL, row.pi <= REEXPANSION_TOL, "");
        rep.add_check(
            format!("pi_minus {}", row.beta),
            row.pi_minus,
            REEXPANSION_TOL,
            row.pi_minus <= REEXPANSION_TOL,
            format!("smoothed at t = {smoothing:e}"),
        );
    }
    rep.add_check(
        "transitivity",
        r.transitivity,
        REEXPANSION_TOL,
        r.transitivity <= REEXPANSION_TOL,
        format!("{samples} samples"),
    );
    write_summary(ctx, "reexpand", &rep)?;
    Ok(rep.all_pass())
}

fn report(ctx: &Ctx) -> mirs::Result<bool> {
    let mut names: Vec<PathBuf> = fs::read_dir(&ctx.out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && !is_counterterm_file(p))
        .collect();
    names.sort();
    let mut all = true;
    let mut table = Vec::new();
    for path in names {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        for kind in ["fits", "checks"] {
            for row in v.get(kind).and_then(|r| r.as_array()).into_iter().flatten() {
                let pass = row.get("pass").and_then(|p| p.as_bool()).unwrap_or(false);
                all &= pass;
                let label = row
                    .get("name")
                    .or_else(|| row.get("quantity"))
                    .and_then(|s| s.as_str())
                    .unwrap_or("?");
                let beta = row.get("beta").and_then(|s| s.as_str()).unwrap_or("");
                table.push(serde_json::json!({"source": stem, "kind": kind, "name": label, "beta": beta, "pass": pass}));
                if !ctx.json {
                    println!("{}  {:<12} {:<36} {}", mark(pass), stem, label, beta);
                }
            }
        }
    }
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({"rows": table, "pass": all}))?);
    } else {
        println!("{}", if all { "all checks pass" } else { "some checks fail" });
    }
    Ok(all)
}

fn is_counterterm_file(p: &Path) -> bool {
    p.file_name().is_some_and(|n| n == COUNTERTERM_FILE)
}

fn run(cli: Cli) -> mirs::Result<bool> {
    match cli.cmd {
        Cmd::SelftestAlgebra(c) => selftest(&load(&c)?),
        Cmd::KernelsCheck(c) => kernels_check(&load(&c)?),
        Cmd::Calibrate { common, tau } => calibrate_cmd(load(&common)?, tau),
        Cmd::BuildModel(c) => build_model(&load(&c)?, c.samples.unwrap_or(16)),
        Cmd::Estimate(c) => estimate(&load(&c)?),
        Cmd::Reexpand(c) => reexpand(&load(&c)?, c.samples.unwrap_or(16)),
        Cmd::Report(c) => report(&load(&c)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
