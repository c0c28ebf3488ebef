//! Command-line front end: `troplift validate|classify|lift|verify|sample|export`.
//!
//! Reports are JSON on stdout. Exit codes: 0 ok, 1 mathematical failure
//! (with a report), 2 input error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::btree::Length;
use crate::embed::EmbeddedGraph;
use crate::error::LiftError;
use crate::liftone::{self, TateData};
use crate::liftzero::{self, RationalMapData, SAMPLE_REL};
use crate::puiseux::{fmt_q, parse_q, qi, Series, Q};
use crate::ztcurve::{classify, fmt_vec, InputError, ZTCurve, ZtError};

#[derive(Parser, Debug)]
#[command(name = "troplift", version, about = "Lift zero-tension curves of genus 0 and 1 to explicit parameterizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Truncation order, a positive rational such as `24` or `49/2`.
    #[arg(long, default_value = "24")]
    pub trunc: String,
    /// Seed for every random choice (probe points).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sample probes (pairs for lift and verify).
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a curve file; exit 0 iff it is a valid zero-tension curve.
    Validate {
        /// Curve JSON file.
        path: PathBuf,
    },
    /// Genus, degree and, in genus 1, ordinary / well-spaced status.
    Classify {
        /// Curve JSON file.
        path: PathBuf,
    },
    /// Lift a curve and write its certificate.
    Lift {
        /// Curve JSON file.
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a certificate against a curve.
    Verify {
        /// Certificate written by `lift`.
        cert: PathBuf,
        /// Curve JSON file the certificate claims to lift.
        graph: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print `v(φ(u))` against the tropical image at random probes.
    Sample {
        /// Certificate written by `lift`.
        cert: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a curve as DOT or (in dimension 2) SVG.
    Export {
        /// Curve JSON file.
        path: PathBuf,
        /// Graphviz output.
        #[arg(long, conflicts_with = "svg", required_unless_present = "svg")]
        dot: bool,
        /// SVG output (planar curves only).
        #[arg(long)]
        svg: bool,
        /// Overlay the forward tropicalization of this certificate.
        #[arg(long)]
        cert: Option<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Validated run settings; all randomness flows from `seed`.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub trunc: Q,
    pub seed: u64,
    pub probes: usize,
}

impl RunConfig {
    pub fn from_args(a: &RunArgs) -> Result<RunConfig, Failure> {
        let trunc = parse_q(&a.trunc).map_err(|e| Failure::Input(format!("--trunc: {e}")))?;
        if !trunc.is_positive() {
            return Err(Failure::Input("--trunc must be positive".into()));
        }
        Ok(RunConfig { trunc, seed: a.seed, probes: a.probes })
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Input(String),
    /// Exit 1, with a JSON report on stdout.
    Math(Value),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<LiftError> for Failure {
    fn from(e: LiftError) -> Self {
        if let LiftError::Certificate(m) = &e {
            return Failure::Input(format!("bad certificate: {m}"));
        }
        let mut report = json!({ "error": error_kind(&e), "message": e.to_string() });
        if let LiftError::NotWellSpaced(w) = &e {
            report["witness"] = json!(w);
        }
        Failure::Math(report)
    }
}

impl From<ZtError> for Failure {
    fn from(e: ZtError) -> Self {
        LiftError::from(e).into()
    }
}

fn error_kind(e: &LiftError) -> &'static str {
    match e {
        LiftError::Curve(ZtError::Invalid(_)) => "InvalidCurve",
        LiftError::Curve(ZtError::WrongGenus { .. }) => "WrongGenus",
        LiftError::Curve(ZtError::ZeroLengthCircuit) => "ZeroLengthCircuit",
        LiftError::Curve(ZtError::Hypothesis(_)) => "HypothesisViolated",
        LiftError::Tree(_) => "TreeError",
        LiftError::Series(_) => "SeriesError",
        LiftError::EvaluationAtZeroOrPole => "EvaluationAtZeroOrPole",
        LiftError::Certificate(_) => "BadCertificate",
        LiftError::NotWellSpaced(_) => "NotWellSpaced",
        LiftError::RankDeficient { .. } => "RankDeficient",
        LiftError::GenericityExhausted(_) => "GenericityExhausted",
        LiftError::Unsolvable(_) => "Unsolvable",
        LiftError::Stalled(_) => "Stalled",
        LiftError::Unbalanced(_) => "Unbalanced",
        LiftError::CycleDoesNotClose(_) => "CycleDoesNotClose",
        LiftError::NotPowerOfTwo(_) => "NotPowerOfTwo",
        LiftError::Unsupported(_) => "Unsupported",
    }
}

/// What a successful command prints, and whether it counts as a pass.
pub struct Outcome {
    pub body: String,
    pub out: Option<PathBuf>,
    pub ok: bool,
}

impl Outcome {
    fn json(v: &Value, out: Option<PathBuf>, ok: bool) -> Outcome {
        Outcome { body: pretty(v), out, ok }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(o) => {
            let written = match &o.out {
                Some(p) => std::fs::write(p, &o.body).map_err(|e| format!("cannot write {}: {e}", p.display())),
                None => {
                    print!("{}", o.body);
                    Ok(())
                }
            };
            match written {
                Ok(()) => i32::from(!o.ok),
                Err(m) => {
                    eprintln!("error: {m}");
                    2
                }
            }
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Math(report)) => {
            print!("{}", pretty(&report));
            1
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Outcome, Failure> {
    match cmd {
        Command::Validate { path } => cmd_validate(path),
        Command::Classify { path } => cmd_classify(path),
        Command::Lift { path, run, out } => {
            let cfg = RunConfig::from_args(run)?;
            let (cert, ok) = cmd_lift(path, &cfg)?;
            Ok(Outcome::json(&cert, out.clone(), ok))
        }
        Command::Verify { cert, graph, run } => cmd_verify(cert, graph, &RunConfig::from_args(run)?),
        Command::Sample { cert, run, out } => {
            let mut o = cmd_sample(cert, &RunConfig::from_args(run)?)?;
            o.out = out.clone();
            Ok(o)
        }
        Command::Export { path, svg, cert, out, .. } => {
            let body = cmd_export(path, *svg, cert.as_deref())?;
            Ok(Outcome { body, out: out.clone(), ok: true })
        }
    }
}

fn read_curve(path: &Path) -> Result<ZTCurve, Failure> {
    Ok(ZTCurve::from_path(path)?)
}

pub fn cmd_validate(path: &Path) -> Result<Outcome, Failure> {
    let report = read_curve(path)?.validate();
    let v = serde_json::to_value(&report).expect("reports serialize");
    Ok(Outcome::json(&v, None, report.valid))
}

pub fn cmd_classify(path: &Path) -> Result<Outcome, Failure> {
    let c = read_curve(path)?;
    let cl = classify(&c)?;
    Ok(Outcome::json(&serde_json::to_value(&cl).expect("reports serialize"), None, true))
}

/// Certificate with its `verified` flag, and whether verification passed.
pub fn cmd_lift(path: &Path, cfg: &RunConfig) -> Result<(Value, bool), Failure> {
    let c = read_curve(path)?;
    let mut rng = cfg.rng();
    match c.genus() {
        0 => {
            let d = liftzero::lift(&c, &cfg.trunc)?;
            let ok = liftzero::verify(&d, &c, cfg.probes, &mut rng)?.verified;
            Ok((d.certificate(ok), ok))
        }
        1 => {
            let d = liftone::lift(&c, &cfg.trunc)?;
            let ok = liftone::verify(&d, &c, cfg.probes, &mut rng)?.verified;
            Ok((d.certificate(ok)?, ok))
        }
        g => Err(LiftError::Unsupported(format!("genus {g} curves")).into()),
    }
}

enum Certified {
    Zero(RationalMapData),
    One(TateData),
}

fn read_certificate(path: &Path) -> Result<Certified, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    match v.get("genus").and_then(Value::as_u64) {
        Some(0) => Ok(Certified::Zero(RationalMapData::from_certificate(&v)?)),
        Some(1) => Ok(Certified::One(TateData::from_certificate(&v)?)),
        _ => Err(Failure::Input("certificate has no genus 0 or 1 field".into())),
    }
}

pub fn cmd_verify(cert: &Path, graph: &Path, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let d = read_certificate(cert)?;
    let c = read_curve(graph)?;
    let mut rng = cfg.rng();
    let (v, ok) = match &d {
        Certified::Zero(d) => {
            let r = liftzero::verify(d, &c, cfg.probes, &mut rng)?;
            (serde_json::to_value(&r).expect("reports serialize"), r.verified)
        }
        Certified::One(d) => {
            let r = liftone::verify(d, &c, cfg.probes, &mut rng)?;
            (serde_json::to_value(&r).expect("reports serialize"), r.verified)
        }
    };
    Ok(Outcome::json(&v, None, ok))
}

fn valuations(f: &[Series]) -> Result<Vec<Q>, LiftError> {
    f.iter().map(|s| Ok(s.valuation().expect_finite()?)).collect()
}

/// One row per probe: `v(φ(u))` from series evaluation against the image point of `b(u)`.
pub fn cmd_sample(cert: &Path, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let d = read_certificate(cert)?;
    let mut rng = cfg.rng();
    let rel = qi(SAMPLE_REL);
    let mut rows = Vec::new();
    let mut all = true;
    let mut push = |u: String, lhs: Vec<Q>, rhs: Vec<Q>| {
        let ok = lhs == rhs;
        all &= ok;
        rows.push(json!({
            "u": u,
            "valuation": lhs.iter().map(fmt_q).collect::<Vec<_>>(),
            "tropical": rhs.iter().map(fmt_q).collect::<Vec<_>>(),
            "ok": ok,
        }));
    };
    match &d {
        Certified::Zero(d) => {
            let img = liftzero::forward_trop(d)?;
            for _ in 0..cfg.probes {
                let u = img.random_probe(&mut rng);
                let lhs = valuations(&d.evaluate_rel(&u, &rel)?)?;
                push(u.to_string(), lhs, img.value_at(d, &u)?);
            }
        }
        Certified::One(d) => {
            let img = liftone::forward_trop_gimel(d)?;
            for _ in 0..cfg.probes {
                let u = img.random_probe(d, &mut rng);
                let lhs = valuations(&d.evaluate_rel(&u, &rel)?)?;
                push(u.to_string(), lhs, img.value_at(d, &u)?);
            }
        }
    }
    Ok(Outcome::json(&json!({ "rows": rows, "ok": all }), None, all))
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// An edge of a drawing: endpoints (`None` for a ray) with its label data.
struct Stroke {
    a: Vec<Q>,
    b: Option<Vec<Q>>,
    direction: Vec<i64>,
    multiplicity: i64,
    length: Option<Q>,
}

fn label(s: &Stroke) -> String {
    let len = s.length.as_ref().map_or("inf".to_string(), fmt_q);
    format!("({}), {}, {}", s.direction.iter().map(i64::to_string).collect::<Vec<_>>().join(", "), s.multiplicity, len)
}

fn primitive(sigma: &[i64]) -> (Vec<i64>, i64) {
    let g = sigma.iter().fold(0i64, |g, x| g.gcd(x)).max(1);
    (sigma.iter().map(|x| x / g).collect(), g)
}

fn image_strokes(g: &EmbeddedGraph) -> Vec<Stroke> {
    let mut out = Vec::new();
    for s in &g.segments {
        let (a, b) = (&g.vertices[s.a], &g.vertices[s.b]);
        let (direction, multiplicity) = primitive(&s.sigma);
        let i = s.sigma.iter().position(|x| *x != 0);
        let length = i.map(|i| (&b[i] - &a[i]) / qi(s.sigma[i]));
        out.push(Stroke { a: a.clone(), b: Some(b.clone()), direction, multiplicity, length });
    }
    for r in &g.rays {
        let (direction, multiplicity) = primitive(&r.sigma);
        out.push(Stroke { a: g.vertices[r.a].clone(), b: None, direction, multiplicity, length: None });
    }
    out
}

fn forward_image(cert: &Path) -> Result<EmbeddedGraph, Failure> {
    Ok(match read_certificate(cert)? {
        Certified::Zero(d) => liftzero::forward_trop(&d)?.graph,
        Certified::One(d) => liftone::forward_trop_gimel(&d)?.graph,
    })
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn cmd_export(path: &Path, svg: bool, cert: Option<&Path>) -> Result<String, Failure> {
    let c = read_curve(path)?;
    let coords = c.coordinates()?;
    let overlay = cert.map(forward_image).transpose()?;
    if svg {
        if c.lattice_rank != 2 {
            return Err(Failure::Input(format!("SVG export needs lattice rank 2, found {}", c.lattice_rank)));
        }
        let mut strokes = Vec::new();
        let mut names = Vec::new();
        for e in &c.edges {
            let a = coords[e.from].clone().ok_or_else(|| Failure::Input("edge starts at a boundary vertex".into()))?;
            let b = coords[e.to].clone();
            let length = e.length.finite().cloned();
            strokes.push(Stroke { a, b, direction: e.direction.clone(), multiplicity: e.multiplicity as i64, length });
        }
        for (v, x) in c.vertices.iter().zip(&coords) {
            if let Some(x) = x {
                names.push((v.id.clone(), x.clone()));
            }
        }
        let image = overlay.as_ref().map(image_strokes).unwrap_or_default();
        return Ok(render_svg(&strokes, &names, &image));
    }
    let mut s = String::from("graph troplift {\n  node [shape=circle, fontsize=10];\n  edge [fontsize=9];\n");
    for (v, x) in c.vertices.iter().zip(&coords) {
        match (v.boundary, x) {
            (true, _) => writeln!(s, "  {} [shape=point];", dot_id(&v.id)),
            (false, Some(x)) => writeln!(s, "  {} [label=\"{}\\n({})\"];", dot_id(&v.id), v.id, fmt_vec(x)),
            (false, None) => writeln!(s, "  {};", dot_id(&v.id)),
        }
        .expect("writing to a String");
    }
    for e in &c.edges {
        let len = match &e.length {
            Length::Finite(l) => fmt_q(l),
            Length::Infinite => "inf".to_string(),
        };
        let dir = e.direction.iter().map(i64::to_string).collect::<Vec<_>>().join(", ");
        writeln!(
            s,
            "  {} -- {} [label=\"({dir}), {}, {len}\"];",
            dot_id(&c.vertices[e.from].id),
            dot_id(&c.vertices[e.to].id),
            e.multiplicity
        )
        .expect("writing to a String");
    }
    if let Some(g) = &overlay {
        s.push_str("  subgraph cluster_image {\n    label=\"forward tropicalization\";\n    style=dashed;\n");
        s.push_str("    node [shape=box, style=dashed];\n    edge [style=dashed];\n");
        for (k, x) in g.vertices.iter().enumerate() {
            writeln!(s, "    \"img{k}\" [label=\"({})\"];", fmt_vec(x)).expect("writing to a String");
        }
        let strokes = image_strokes(g);
        for (k, st) in strokes.iter().enumerate() {
            let a = g.vertices.iter().position(|x| *x == st.a).expect("stroke ends are vertices");
            let b = match &st.b {
                Some(b) => format!("\"img{}\"", g.vertices.iter().position(|x| x == b).expect("stroke ends are vertices")),
                None => {
                    writeln!(s, "    \"imgray{k}\" [shape=point, style=solid];").expect("writing to a String");
                    format!("\"imgray{k}\"")
                }
            };
            writeln!(s, "    \"img{a}\" -- {b} [label=\"{}\"];", label(st)).expect("writing to a String");
        }
        s.push_str("  }\n");
    }
    s.push_str("}\n");
    Ok(s)
}

fn to_f(x: &Q) -> f64 {
    x.to_f64().unwrap_or(0.0)
}

fn render_svg(strokes: &[Stroke], names: &[(String, Vec<Q>)], image: &[Stroke]) -> String {
    let pts: Vec<(f64, f64)> = strokes
        .iter()
        .chain(image)
        .flat_map(|s| std::iter::once(&s.a).chain(s.b.as_ref()))
        .map(|p| (to_f(&p[0]), to_f(&p[1])))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (k, &(x, y)) in pts.iter().enumerate() {
        if k == 0 {
            (x0, x1, y0, y1) = (x, x, y, y);
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let ray = 0.35 * span;
    let (x0, y0, span) = (x0 - ray, y0 - ray, span + 2.0 * ray);
    let size = 640.0;
    let px = |x: f64| 20.0 + (x - x0) / span * (size - 40.0);
    let py = |y: f64| size - 20.0 - (y - y0) / span * (size - 40.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    s.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let draw = |st: &Stroke, style: &str, s: &mut String| {
        let (ax, ay) = (to_f(&st.a[0]), to_f(&st.a[1]));
        let (bx, by) = match &st.b {
            Some(b) => (to_f(&b[0]), to_f(&b[1])),
            None => {
                let (dx, dy) = (st.direction[0] as f64, st.direction[1] as f64);
                let norm = (dx * dx + dy * dy).sqrt().max(f64::MIN_POSITIVE);
                (ax + ray * dx / norm, ay + ray * dy / norm)
            }
        };
        let (mx, my) = ((px(ax) + px(bx)) / 2.0, (py(ay) + py(by)) / 2.0);
        writeln!(
            s,
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" {style}/>\n  <text x=\"{mx:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            px(ax),
            py(ay),
            px(bx),
            py(by),
            my - 4.0,
            label(st)
        )
        .expect("writing to a String");
    };
    for st in strokes {
        draw(st, "stroke=\"black\" stroke-width=\"1.5\"", &mut s);
    }
    for st in image {
        draw(st, "stroke=\"crimson\" stroke-width=\"1\" stroke-dasharray=\"5,3\"", &mut s);
    }
    for (id, x) in names {
        let (cx, cy) = (px(to_f(&x[0])), py(to_f(&x[1])));
        writeln!(
            s,
            "  <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"black\"/>\n  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{id} ({})</text>",
            cx + 5.0,
            cy + 12.0,
            fmt_vec(x)
        )
        .expect("writing to a String");
    }
    s.push_str("</svg>\n");
    s
}
