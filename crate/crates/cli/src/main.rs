//! `eqatlas` command-line front end.

use clap::{Args, Parser, Subcommand};
use eqatlas::atlas::build_atlas;
use eqatlas::geometry::{distance_field, distance_field_csv};
use eqatlas::model::{build_system, EquilibriumSystem, ModelConfig};
use eqatlas::radius::{self, checks, Analysis, Case, CertifyError, CertifyOptions, Verdict};
use eqatlas::singular::{self, verify_sample, DetectOptions};
use eqatlas::solver::{enumerate_fiber, lift_path, round_trip, FiberOptions, LiftOptions};
use eqatlas::{round_sig, Point2};
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "eqatlas", version, about = "Local uniqueness analysis for parametrized equilibrium systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Grid cells per axis, overriding the config.
    #[arg(long)]
    resolution: Option<usize>,
    /// Seed for randomized sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multi-start seeds per unknown for fiber enumeration.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fiber counts on the grid and the singular set.
    Atlas(Common),
    /// Singular set only.
    Singular(Common),
    /// Uniqueness radius certificate at a parameter point.
    Radius {
        #[command(flatten)]
        common: Common,
        /// Parameter point "q1,q2".
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// Lift a parameter path starting from a given equilibrium.
    Lift {
        #[command(flatten)]
        common: Common,
        /// JSON file with the path as a list of parameter points.
        #[arg(long)]
        path: PathBuf,
        /// Starting equilibrium "p1,...".
        #[arg(long, allow_hyphen_values = true)]
        start: String,
    },
    /// Recompute a certificate and check the invariants behind it.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Parameter point "q1,q2".
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
}

#[derive(Serialize)]
struct RunManifest {
    config: String,
    out: String,
    subcommand: &'static str,
    seed: u64,
    version: &'static str,
}

struct Failure {
    code: u8,
    message: String,
}

fn config_error(e: impl Display) -> Failure {
    Failure { code: EXIT_CONFIG, message: e.to_string() }
}

fn numerical_error(e: impl Display) -> Failure {
    Failure { code: EXIT_NUMERICAL, message: e.to_string() }
}

fn certify_error(e: CertifyError) -> Failure {
    match e {
        CertifyError::OutsideWindow(..) => config_error(e),
        CertifyError::Stage { .. } => numerical_error(e),
    }
}

/// Rounds every float to 12 significant digits.
fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap());
            serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

struct Run {
    common: Common,
    manifest: RunManifest,
    cfg: ModelConfig,
    sys: Box<dyn EquilibriumSystem>,
}

impl Run {
    fn open(common: &Common, subcommand: &'static str) -> Result<Run, Failure> {
        let text = fs::read_to_string(&common.config)
            .map_err(|e| config_error(format!("cannot read {}: {e}", common.config.display())))?;
        let mut cfg: ModelConfig = serde_json::from_str(&text).map_err(config_error)?;
        if let Some(r) = common.resolution {
            cfg = cfg.with_resolution([r, r]);
        }
        cfg.validate().map_err(config_error)?;
        let sys = build_system(&cfg).map_err(config_error)?;
        fs::create_dir_all(&common.out)
            .map_err(|e| config_error(format!("cannot create {}: {e}", common.out.display())))?;
        let manifest = RunManifest {
            config: common.config.display().to_string(),
            out: common.out.display().to_string(),
            subcommand,
            seed: common.seed,
            version: env!("CARGO_PKG_VERSION"),
        };
        Ok(Run { common: common.clone(), manifest, cfg, sys })
    }

    fn fiber_options(&self) -> FiberOptions {
        match self.common.seeds {
            Some(k) => FiberOptions::default().with_seeds(k),
            None => FiberOptions::default(),
        }
    }

    fn certify_options(&self) -> CertifyOptions {
        let mut o = CertifyOptions::default();
        o.lifted.fiber = self.fiber_options();
        o
    }

    fn path(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn write_json(&self, name: &str, body: Value) -> Result<(), Failure> {
        let mut doc = serde_json::Map::new();
        doc.insert("manifest".into(), serde_json::to_value(&self.manifest).unwrap());
        doc.insert("config".into(), serde_json::to_value(&self.cfg).unwrap());
        if let Value::Object(m) = body {
            doc.extend(m);
        }
        let text = serde_json::to_string_pretty(&canonical(Value::Object(doc))).unwrap();
        write_file(&self.path(name), &(text + "\n"))
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<(), Failure> {
        let header = serde_json::to_string(&self.manifest).unwrap();
        write_file(&self.path(name), &format!("# {header}\n{body}"))
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| numerical_error(format!("cannot write {}: {e}", path.display())))
}

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(config_error(format!("malformed {what}: {text:?}"))),
    }
}

fn parse_point(text: &str) -> Result<Point2, Failure> {
    match parse_floats(text, "x")?.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(config_error(format!("malformed x: {text:?}, expected \"q1,q2\""))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}

fn cmd_atlas(common: &Common) -> Result<String, Failure> {
    let run = Run::open(common, "atlas")?;
    let atlas = build_atlas(
        run.sys.as_ref(),
        run.cfg.window,
        run.cfg.resolution,
        &run.fiber_options(),
        &DetectOptions::default(),
    )
    .map_err(numerical_error)?;
    run.write_csv("fiber_counts.csv", &atlas.counts_csv())?;
    run.write_csv("singular.csv", &atlas.singular.to_csv())?;
    let histogram: serde_json::Map<String, Value> =
        atlas.histogram().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let near_singular = atlas.nodes.iter().filter(|n| n.near_singular).count();
    run.write_json(
        "atlas.json",
        json!({ "histogram": histogram, "near_singular_nodes": near_singular, "singular": to_value(&atlas.singular) }),
    )?;
    Ok(format!("fiber counts {:?}, {} singular curves, {} singular points", atlas.histogram(), atlas.singular.sigma1.len(), atlas.singular.sigma2.len()))
}

fn cmd_singular(common: &Common) -> Result<String, Failure> {
    let run = Run::open(common, "singular")?;
    let (samples, set) =
        singular::singular_set(run.sys.as_ref(), run.cfg.window, run.cfg.resolution, &DetectOptions::default())
            .map_err(numerical_error)?;
    run.write_csv("singular.csv", &set.to_csv())?;
    run.write_json("singular.json", json!({ "samples": samples.len(), "singular": to_value(&set) }))?;
    Ok(format!("{} samples, {} singular curves, {} singular points", samples.len(), set.sigma1.len(), set.sigma2.len()))
}

fn analyze(run: &Run, x: Point2) -> Result<Analysis, Failure> {
    radius::analyze(run.sys.as_ref(), &run.cfg, x, &run.certify_options()).map_err(certify_error)
}

fn cmd_radius(common: &Common, x: &str) -> Result<String, Failure> {
    let x = parse_point(x)?;
    let run = Run::open(common, "radius")?;
    let a = analyze(&run, x)?;
    let field = distance_field(&a.graph);
    run.write_csv("distance_field.csv", &distance_field_csv(&a.graph, &field))?;
    run.write_json("loop.json", json!({ "shortest_loop": to_value(&a.geo.shortest_loop) }))?;
    run.write_json("certificate.json", to_value(&a.certificate))?;
    let c = &a.certificate;
    Ok(format!("r_x = {} ({:?}), ball radius {}, {:?}", round_sig(c.r_x), c.case, round_sig(c.ball_radius), c.verdict))
}

fn cmd_lift(common: &Common, path: &Path, start: &str) -> Result<String, Failure> {
    let p0 = parse_floats(start, "start")?;
    let run = Run::open(common, "lift")?;
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(config_error)?;
    let value = match value {
        Value::Object(mut m) => m.remove("path").unwrap_or(Value::Null),
        v => v,
    };
    let points: Vec<Vec<f64>> = serde_json::from_value(value).map_err(config_error)?;
    if points.is_empty() || points.iter().any(|q| q.len() != run.sys.n_q()) {
        return Err(config_error("path must be a non-empty list of parameter points"));
    }
    if p0.len() != run.sys.n_p() {
        return Err(config_error(format!("start needs {} coordinates", run.sys.n_p())));
    }
    let opts = LiftOptions::default();
    let fwd = lift_path(run.sys.as_ref(), &points, &p0, &opts).map_err(numerical_error)?;
    let (_, back, deviation) = round_trip(run.sys.as_ref(), &points, &p0, &opts).map_err(numerical_error)?;
    run.write_json(
        "lift.json",
        json!({ "lift": to_value(&fwd), "reverse": to_value(&back), "round_trip_deviation": deviation }),
    )?;
    Ok(format!("p_end = {:?}, {} steps, round-trip deviation {:.3e}", fwd.p_end, fwd.steps, deviation))
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn cmd_verify(common: &Common, x: &str) -> Result<String, Failure> {
    let x = parse_point(x)?;
    let run = Run::open(common, "verify")?;
    let sys = run.sys.as_ref();
    let a = analyze(&run, x)?;
    let c = &a.certificate;
    let mut list = Vec::new();
    let mut add = |name, passed, detail: String| list.push(Check { name, passed, detail });

    add("verdict", c.verdict == Verdict::Verified, format!("{:?}", c.verdict));
    let efr_ok = c.empirical_failure_radius.is_none_or(|r| r >= c.ball_radius);
    add("failure_radius_outside_ball", efr_ok, format!("{:?} vs ball {}", c.empirical_failure_radius, c.ball_radius));
    if c.case == Case::Zero {
        add("zero_case_sheets_never_merge", c.empirical_failure_radius.is_none(), format!("{:?}", c.empirical_failure_radius));
    } else {
        let odd = a.geo.shortest_loop.crossings % 2 == 1;
        add("witness_loop_odd_crossings", odd, format!("{} crossings", a.geo.shortest_loop.crossings));
    }
    let unsound = a.samples.iter().filter(|s| !verify_sample(sys, s)).count();
    add("singular_samples_reverify", unsound == 0, format!("{unsound} of {} samples fail", a.samples.len()));
    let fo = FiberOptions::default();
    let bad_points = a
        .singular
        .sigma2
        .iter()
        .filter(|q| enumerate_fiber(sys, q.as_slice(), &fo).min_abs_det() > 1e-6)
        .count();
    add("singular_points_are_critical", bad_points == 0, format!("{bad_points} of {}", a.singular.sigma2.len()));
    let residual = checks::max_sheet_residual(sys, &a.lifted);
    add("sheet_residuals", residual <= 1e-8, format!("max residual {residual:.3e}"));
    match checks::inverse_permutations(sys, &a.lifted, 200, run.common.seed) {
        Ok(bad) => add("edge_permutation_inverse", bad == 0, format!("{bad} of 200 sampled edges")),
        Err(e) => add("edge_permutation_inverse", false, e.to_string()),
    }
    let pairs = checks::distance_pairs(&a.lifted, 5, 20, run.common.seed);
    let worse = pairs.iter().filter(|p| p.lifted.is_finite() && p.lifted < p.base).count();
    add("distance_decreasing", worse == 0, format!("{worse} of {} pairs", pairs.len()));

    let passed = list.iter().all(|c| c.passed);
    run.write_json(
        "verify.json",
        json!({ "certificate": to_value(c), "checks": to_value(&list), "passed": passed }),
    )?;
    let failed: Vec<&str> = list.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if passed {
        Ok(format!("all {} checks passed", list.len()))
    } else {
        Err(numerical_error(format!("failed checks: {}", failed.join(", "))))
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("EQATLAS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Atlas(c) => cmd_atlas(c),
        Command::Singular(c) => cmd_singular(c),
        Command::Radius { common, x } => cmd_radius(common, x),
        Command::Lift { common, path, start } => cmd_lift(common, path, start),
        Command::Verify { common, x } => cmd_verify(common, x),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
