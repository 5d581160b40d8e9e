//! Command dispatch for the `sampled-ioss` tool.
//!
//! [`run`] executes a fully resolved [`RunConfig`] and returns the report
//! plus the text artifact; the binary only parses flags and writes files.

pub mod figure1;

use std::collections::BTreeMap;
use std::hash::{BuildHasher, RandomState};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use sampled_ioss::certify::{
    check_assumption2, check_bound, check_condition11, classify_pair, exp_family_t_beta, falsify, CertForm, Certificate,
    FalsifyConfig, FalsifyTarget, PairSampler, SearchSpace, Verdict,
};
use sampled_ioss::compfn::power_terms;
use sampled_ioss::sampling::{materialize, pathological_periods, scheme_validate, shift_check, SamplingScheme};
use sampled_ioss::synth::{self, SynthesisInput};
use sampled_ioss::sysmodel::{estimate_modulus, simulate_pair, BoxSpec, InputSignal, LinearSpec, MapTag, System};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "SAMPLED_IOSS_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Subcommands with their own options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Command {
    /// Simulate a trajectory pair and export it.
    Simulate(PairArgs),
    /// Check one pair against a certificate or an output condition.
    Check {
        #[command(flatten)]
        #[serde(flatten)]
        pair: PairArgs,
        /// Start index i of the sampling set K_i.
        #[arg(long, default_value_t = 1)]
        #[serde(default = "one")]
        start: u64,
    },
    /// Classify one pair against a pair_iiss certificate.
    Classify(PairArgs),
    /// Empirical check of the uniform violation time T_beta.
    Assumption2 {
        /// PairSampler JSON, or a file holding it. Defaults to a uniform box.
        #[arg(long)]
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sampler: Option<String>,
        #[arg(long)]
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_beta: Option<u64>,
    },
    /// Search for a pair violating a certificate.
    Falsify {
        /// Initial-state box as `lo,hi`, applied to every coordinate.
        #[arg(long, value_delimiter = ',', default_values_t = [-1.0, 1.0], allow_hyphen_values = true)]
        x_box: Vec<f64>,
        /// Input amplitude box as `lo,hi`.
        #[arg(long, value_delimiter = ',', default_values_t = [-1.0, 1.0], allow_hyphen_values = true)]
        w_box: Vec<f64>,
        #[arg(long)]
        #[serde(default)]
        tie_inputs: bool,
        /// Start indices of the sets K_i to check.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
        starts: Vec<u64>,
    },
    /// Build a certificate from others.
    Synth {
        #[arg(long, value_enum)]
        theorem: Theorem,
        /// SynthesisInput JSON, or a file holding it.
        #[arg(long)]
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<String>,
    },
    /// Materialize and audit a sampling scheme.
    Scheme {
        #[arg(long, default_value_t = 1)]
        #[serde(default = "one")]
        start: u64,
        #[arg(long, default_value_t = 1000)]
        probes: u64,
        /// Check the shift property for (j, k) given as `j,k`.
        #[arg(long, value_delimiter = ',')]
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Vec<u64>>,
    },
    /// Sampling periods that lose observability of a linear system.
    Pathological {
        #[arg(long, default_value_t = 20)]
        p_max: u64,
    },
    /// Full versus sampled output maxima of a diverging oscillation.
    Figure1 {
        #[arg(long, default_value_t = 1.04)]
        rho: f64,
        #[arg(long, default_value_t = 25.0)]
        angle_deg: f64,
        #[arg(long, default_value_t = 25)]
        delta_max: u64,
    },
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    Thm1,
    Cor1,
    Thm2,
    Lemma1,
    Thm3,
    Thm4,
}

/// Initial states and inputs of a single pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
pub struct PairArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x01: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x02: Vec<f64>,
    /// InputSignal JSON for the first trajectory, or a file holding it.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<String>,
}

/// Everything a run depends on. Embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    /// SamplingScheme JSON, or a file holding it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    /// Certificate file, or inline JSON.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Destination only; not part of the embedded config.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            system: None,
            scheme: None,
            cert: None,
            horizon: None,
            budget: None,
            trials: None,
            seed: None,
            out: None,
            format: None,
        }
    }

    pub fn command_name(&self) -> &'static str {
        match self.command {
            Command::Simulate(_) => "simulate",
            Command::Check { .. } => "check",
            Command::Classify(_) => "classify",
            Command::Assumption2 { .. } => "assumption2",
            Command::Falsify { .. } => "falsify",
            Command::Synth { .. } => "synth",
            Command::Scheme { .. } => "scheme",
            Command::Pathological { .. } => "pathological",
            Command::Figure1 { .. } => "figure1",
        }
    }

    fn default_horizon(&self) -> usize {
        match self.command {
            Command::Assumption2 { .. } | Command::Falsify { .. } | Command::Scheme { .. } => 100,
            Command::Figure1 { .. } => 150,
            _ => 50,
        }
    }

    fn default_format(&self) -> Format {
        match self.command {
            Command::Simulate(_) | Command::Scheme { .. } | Command::Figure1 { .. } => Format::Csv,
            _ => Format::Json,
        }
    }

    fn default_seed(&self) -> u64 {
        match self.command {
            Command::Figure1 { .. } => 7,
            _ => RandomState::new().hash_one(std::time::SystemTime::now()),
        }
    }

    /// Fills every defaulted field, so the result reruns identically.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        c.horizon.get_or_insert(self.default_horizon());
        c.format.get_or_insert(self.default_format());
        if c.seed.is_none() {
            c.seed = Some(self.default_seed());
        }
        if matches!(c.command, Command::Falsify { .. }) {
            c.budget.get_or_insert(10_000);
        }
        if matches!(c.command, Command::Assumption2 { .. }) {
            c.trials.get_or_insert(1000);
        }
        if let Some(s) = &c.scheme {
            let scheme: SamplingScheme = load_json(s, "scheme")?;
            c.scheme = Some(serde_json::to_string(&scheme)?);
        }
        Ok(c)
    }

    fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| self.default_horizon())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// What a run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// 0 completed, 2 violation found.
    pub exit: i32,
    /// JSON envelope `{version, seed, config, report}`.
    pub report: Value,
    /// Text written to `--out` or stdout in the chosen format.
    pub artifact: String,
}

impl Outcome {
    pub fn violation(&self) -> bool {
        self.exit == 2
    }
}

fn is_inline_json(text: &str) -> bool {
    let t = text.trim_start();
    t.starts_with('{') || t.starts_with('[')
}

/// Converts a deserialization path into a JSON pointer.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let msg = e.inner().to_string();
        let mut at = pointer(e.path());
        // tagged enums buffer their content and lose the path below them
        if let Ok(v) = serde_json::from_str::<Value>(text) {
            let base = if at == "/" { "" } else { at.as_str() };
            if let Some(inner) = v.pointer(base).and_then(|sub| locate(sub, &msg)) {
                at = format!("{base}{inner}");
            }
        }
        anyhow!("invalid {what} at {at}: {msg}")
    })
}

/// Guesses the pointer of the value a serde message complains about, by
/// matching the key or the unexpected value it names.
fn locate(root: &Value, msg: &str) -> Option<String> {
    let quoted = |prefix: &str| {
        let rest = msg.split(prefix).nth(1)?;
        Some(rest.split('`').next()?.to_string())
    };
    let pred: Box<dyn Fn(&str, &Value, &Value) -> bool> = if let Some(k) = quoted("unknown field `") {
        Box::new(move |key, _, _| key == k)
    } else if let Some(k) = quoted("missing field `") {
        return find(root, "", &|_, v, _| v.as_object().is_some_and(|o| !o.is_empty() && !o.contains_key(&k)));
    } else if let Some(name) = quoted("unknown variant `") {
        Box::new(move |_, v, _| v.as_str() == Some(name.as_str()))
    } else if let Some(rest) = msg.strip_prefix("invalid type: ").or_else(|| msg.strip_prefix("invalid value: ")) {
        let unexpected = rest.split(", expected").next()?.to_string();
        Box::new(move |_, v, _| describe(v).is_some_and(|d| d == unexpected))
    } else {
        return None;
    };
    find(root, "", &|k, v, parent| pred(k, v, parent))
}

fn describe(v: &Value) -> Option<String> {
    Some(match v {
        Value::String(s) => format!("string {s:?}"),
        Value::Bool(b) => format!("boolean `{b}`"),
        Value::Number(n) if n.is_f64() => format!("floating point `{}`", n.as_f64()?),
        Value::Number(n) => format!("integer `{n}`"),
        Value::Null => "null".into(),
        Value::Array(_) => "sequence".into(),
        Value::Object(_) => "map".into(),
    })
}

/// Depth-first search returning the pointer of the first match; the
/// predicate sees the key (or index), the value and its parent.
fn find(v: &Value, path: &str, pred: &dyn Fn(&str, &Value, &Value) -> bool) -> Option<String> {
    let children: Vec<(String, &Value)> = match v {
        Value::Object(o) => o.iter().map(|(k, c)| (k.clone(), c)).collect(),
        Value::Array(a) => a.iter().enumerate().map(|(i, c)| (i.to_string(), c)).collect(),
        _ => return None,
    };
    for (k, c) in &children {
        let p = format!("{path}/{}", k.replace('~', "~0").replace('/', "~1"));
        if let Some(hit) = find(c, &p, pred) {
            return Some(hit);
        }
        if pred(k, c, v) {
            return Some(p);
        }
    }
    None
}

/// Inline JSON, or the contents of a file.
pub fn load_json<T: DeserializeOwned>(arg: &str, what: &str) -> Result<T> {
    if is_inline_json(arg) {
        return parse_json(arg, what);
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading {what} from {arg}"))?;
    parse_json(&text, what)
}

/// Loads a certificate, accepting a bare certificate or a report envelope
/// whose `report` is one (as written by `synth`).
pub fn load_certificate(arg: &str) -> Result<Certificate> {
    let value: Value = load_json(arg, "certificate")?;
    let inner = match value.get("report") {
        Some(r) if value.get("version").is_some() => r.clone(),
        _ => value,
    };
    parse_json(&inner.to_string(), "certificate")
}

/// Resolves `--system`: an existing file, a catalog name with optional
/// `:key=value,…` parameters, or inline equations.
pub fn resolve_system(spec: &str) -> Result<System> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("system");
        if is_inline_json(&text) {
            let lin: LinearSpec = parse_json(&text, "linear system")?;
            return Ok(System::from_linear_spec(name, &lin)?);
        }
        return Ok(System::parse(name, &text)?);
    }
    if is_inline_json(spec) {
        let lin: LinearSpec = parse_json(spec, "linear system")?;
        return Ok(System::from_linear_spec("linear", &lin)?);
    }
    let (name, params) = spec.split_once(':').unwrap_or((spec, ""));
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !spec.contains('\'') {
        let mut map = BTreeMap::new();
        for kv in params.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("catalog parameter `{kv}` is not key=value"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("parameter `{k}`"))?;
            map.insert(k.trim().to_string(), v);
        }
        return Ok(System::builtin(name, &map)?);
    }
    Ok(System::parse("inline", spec)?)
}

fn input_signal(arg: &Option<String>) -> Result<InputSignal> {
    match arg {
        None => Ok(InputSignal::Zero),
        Some(s) => load_json(s, "input signal"),
    }
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| anyhow!("{flag} is required for this command"))
}

fn threads() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().unwrap_or_else(|_| {
            log::warn!("ignoring {THREADS_ENV}={v}");
            default_threads()
        }),
        Err(_) => default_threads(),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Fills missing moduli from the system, estimating them on `[-1, 1]` for
/// parsed systems.
fn moduli(sys: &System, seed: u64) -> Result<(sampled_ioss::compfn::ComparisonFunction, sampled_ioss::compfn::ComparisonFunction)> {
    let ah = match &sys.alpha_h {
        Some(f) => f.clone(),
        None => estimate_modulus(sys, MapTag::Output, &BoxSpec::cube(sys.n, -1.0, 1.0), 10_000, seed)?.function,
    };
    let af = match &sys.alpha_f {
        Some(f) => f.clone(),
        None => estimate_modulus(sys, MapTag::Transition, &BoxSpec::cube(sys.n + sys.q, -1.0, 1.0), 10_000, seed)?.function,
    };
    Ok((ah, af))
}

fn csv_header(config: &RunConfig) -> String {
    format!(
        "# sampled-ioss {VERSION}\n# seed: {}\n# config: {}\n",
        config.seed(),
        serde_json::to_string(config).expect("config serializes")
    )
}

fn no_csv(cmd: &str) -> anyhow::Error {
    anyhow!("{cmd} has no CSV output; use --format json")
}

/// Runs a configuration. Unset fields are resolved first.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    let cfg = config.resolve()?;
    let horizon = cfg.horizon();
    let seed = cfg.seed();
    let format = cfg.format.unwrap_or(Format::Json);
    let system = || -> Result<System> { resolve_system(need(&cfg.system, "--system")?) };
    let scheme = || -> Result<SamplingScheme> { load_json(need(&cfg.scheme, "--scheme")?, "scheme") };
    let cert = || -> Result<Certificate> { load_certificate(need(&cfg.cert, "--cert")?) };
    let pair_of = |sys: &System, p: &PairArgs| {
        if p.x01.is_empty() || p.x02.is_empty() {
            bail!("--x01 and --x02 are required for this command");
        }
        Ok(simulate_pair(sys, &p.x01, &p.x02, &input_signal(&p.w1)?, &input_signal(&p.w2)?, horizon)?)
    };

    let (exit, report, csv): (i32, Value, Option<String>) = match &cfg.command {
        Command::Simulate(p) => {
            let sys = system()?;
            let pair = pair_of(&sys, p)?;
            let csv = pair.to_csv();
            (0, serde_json::to_value(&pair)?, Some(csv))
        }
        Command::Check { pair: p, start } => {
            let sys = system()?;
            let pair = pair_of(&sys, p)?;
            let c = cert()?;
            let res = match &c.form {
                CertForm::Condition11 { .. } => {
                    let k = materialize(&scheme()?, *start, horizon as u64)?;
                    check_condition11(&pair, &c, &k, horizon)?
                }
                _ if c.is_sampled() => {
                    let k = materialize(&scheme()?, *start, horizon as u64)?;
                    check_bound(&pair, &c, Some(&k), horizon)?
                }
                _ => check_bound(&pair, &c, None, horizon)?,
            };
            let violated = res.verdict == Verdict::Violated;
            let witness = violated.then(|| {
                json!({"t": res.witness_t, "x01": pair.x01, "x02": pair.x02, "w1": pair.w1, "w2": pair.w2})
            });
            let report = json!({
                "kind": res.kind,
                "verdict": res.verdict,
                "min_margin": res.min_margin,
                "horizon": res.horizon,
                "tolerance": res.tolerance,
                "witness": witness,
                "evaluations": 1,
                "seed": seed,
            });
            (if violated { 2 } else { 0 }, report, Some(res.margins_csv()))
        }
        Command::Classify(p) => {
            let sys = system()?;
            let pair = pair_of(&sys, p)?;
            let cls = classify_pair(&pair, &cert()?, horizon)?;
            (0, serde_json::to_value(cls)?, None)
        }
        Command::Assumption2 { sampler, t_beta } => {
            let sys = system()?;
            let c = cert()?;
            let sampler: PairSampler = match sampler {
                Some(s) => load_json(s, "sampler")?,
                None => PairSampler::UniformBox {
                    x01: BoxSpec::cube(sys.n, -1.0, 1.0),
                    x02: BoxSpec::cube(sys.n, -1.0, 1.0),
                },
            };
            let t_beta = match t_beta {
                Some(t) => *t,
                None => default_t_beta(&sys, &c)?,
            };
            let rep = check_assumption2(&sys, &c, &sampler, t_beta, cfg.trials.unwrap_or(1000), seed, horizon)?;
            let exit = if rep.holds == Some(false) { 2 } else { 0 };
            (exit, serde_json::to_value(rep)?, None)
        }
        Command::Falsify {
            x_box,
            w_box,
            tie_inputs,
            starts,
        } => {
            let sys = system()?;
            let c = cert()?;
            let needs_scheme = c.is_sampled() || matches!(c.form, CertForm::Condition11 { .. });
            let target = FalsifyTarget {
                cert: c,
                scheme: if needs_scheme { Some(scheme()?) } else { None },
                starts: starts.clone(),
            };
            let (&[xlo, xhi], &[wlo, whi]) = (x_box.as_slice(), w_box.as_slice()) else {
                bail!("--x-box and --w-box take exactly two values, lo,hi");
            };
            let xb = BoxSpec::cube(sys.n, xlo, xhi);
            let mut space = SearchSpace::new(xb.clone(), xb, BoxSpec::cube(sys.q, wlo, whi));
            space.tie_inputs = *tie_inputs;
            let fc = FalsifyConfig {
                horizon,
                budget: cfg.budget.unwrap_or(10_000),
                seed,
                threads: threads(),
                tolerance: sampled_ioss::certify::TOLERANCE,
            };
            let res = falsify(&sys, &target, &space, &fc)?;
            let report = json!({
                "verdict": if res.found { Verdict::Violated } else { Verdict::Consistent },
                "found": res.found,
                "min_margin": res.violation_margin,
                "witness": res.found.then(|| serde_json::to_value(&res.witness).expect("witness serializes")),
                "closest": (!res.found).then(|| serde_json::to_value(&res.witness).expect("witness serializes")),
                "evaluations": res.evaluations,
                "phase1_evaluations": res.phase1_evaluations,
                "seed": res.seed,
            });
            (if res.found { 2 } else { 0 }, report, None)
        }
        Command::Synth { theorem, input } => {
            let mut inp: SynthesisInput = match input {
                Some(s) => load_json(s, "synthesis input")?,
                None => SynthesisInput::default(),
            };
            if inp.base.is_none() && cfg.cert.is_some() {
                inp.base = Some(cert()?);
            }
            if (inp.alpha_h.is_none() || inp.alpha_f.is_none()) && cfg.system.is_some() {
                let (ah, af) = moduli(&system()?, seed)?;
                inp.alpha_h.get_or_insert(ah);
                if inp.alpha_tilde_h.is_none() {
                    inp.alpha_f.get_or_insert(af);
                }
            }
            if inp.delta_max.is_none() && cfg.scheme.is_some() {
                inp.delta_max = Some(scheme()?.delta_max());
            }
            let out = match theorem {
                Theorem::Thm1 => synth::thm1_certificate(&inp)?,
                Theorem::Cor1 => synth::cor1_certificate(&inp)?,
                Theorem::Thm2 => synth::thm2_condition(&inp)?,
                Theorem::Lemma1 => synth::lemma1_project(need(&inp.base, "a base certificate")?)?,
                Theorem::Thm3 => synth::thm3_discounted(&inp)?,
                Theorem::Thm4 => synth::thm4_discounted(&inp)?,
            };
            (0, serde_json::to_value(out)?, None)
        }
        Command::Scheme { start, probes, shift } => {
            let sc = scheme()?;
            let set = materialize(&sc, *start, horizon as u64)?;
            let validation = scheme_validate(&sc, *probes)?;
            let shift_ok = match shift {
                Some(jk) => {
                    let &[j, k] = jk.as_slice() else {
                        bail!("--shift takes exactly two values, j,k");
                    };
                    Some(shift_check(&sc, *start, j, k, horizon as u64)?)
                }
                None => None,
            };
            let bad = !validation.ok() || shift_ok == Some(false);
            let csv = set.to_csv();
            let report = json!({"set": set, "validation": validation, "shift_check": shift_ok});
            (if bad { 2 } else { 0 }, report, Some(csv))
        }
        Command::Pathological { p_max } => {
            let sys = system()?;
            let (a, _, c) = sys
                .matrices()
                .ok_or_else(|| anyhow!("pathological periods need a linear system"))?;
            let rep = pathological_periods(a, c, *p_max)?;
            (0, serde_json::to_value(rep)?, None)
        }
        Command::Figure1 {
            rho,
            angle_deg,
            delta_max,
        } => {
            let res = figure1::run(&figure1::Figure1Params {
                rho: *rho,
                angle_deg: *angle_deg,
                delta_max: *delta_max,
                seed,
                horizon,
            })?;
            let csv = format!("# summary: {}\n{}", serde_json::to_string(&res.summary)?, res.to_csv());
            (0, serde_json::to_value(&res)?, Some(csv))
        }
    };

    let envelope = json!({
        "version": VERSION,
        "seed": seed,
        "config": cfg,
        "report": report,
    });
    let artifact = match format {
        Format::Json => serde_json::to_string_pretty(&envelope)? + "\n",
        Format::Csv => {
            let body = csv.ok_or_else(|| no_csv(cfg.command_name()))?;
            csv_header(&cfg) + &body
        }
    };
    Ok(Outcome {
        exit,
        report: envelope,
        artifact,
    })
}

/// `T_β` for `x⁺ = a x` and a single-term `β = c s e^{-λt}`.
fn default_t_beta(sys: &System, cert: &Certificate) -> Result<u64> {
    let a: Option<f64> = sys.metadata.get("a").and_then(|v| v.parse().ok());
    let terms = power_terms(&cert.decay_function()?.node);
    match (a, terms.as_deref()) {
        (Some(a), Some([t])) if t.a == 1.0 && t.lam > 0.0 => Ok(exp_family_t_beta(t.c, a, t.lam)),
        _ => bail!("--t-beta is required unless the system is scalar x+ = a x and beta is c*s*exp(-lam t)"),
    }
}

/// Extracts the embedded config from a JSON report or a CSV artifact.
pub fn embedded_config(artifact: &str) -> Result<RunConfig> {
    if let Some(line) = artifact.lines().find_map(|l| l.strip_prefix("# config: ")) {
        return parse_json(line, "embedded config");
    }
    let v: Value = serde_json::from_str(artifact).context("artifact is neither CSV with a config line nor JSON")?;
    let c = v.get("config").ok_or_else(|| anyhow!("artifact has no config"))?;
    parse_json(&c.to_string(), "embedded config")
}
