//! Runs validation, extension, pricing and the invariant suites on a
//! scenario and renders a text table plus a deterministic JSON document.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{Built, PayoffRef, Scenario, Task, Values, SCHEMA_VERSION};
use crate::dynamic::{
    check_cocycle_and_local, check_composed_extension, extend_system, refine_and_compare, validate_system, ExtendedSystem,
};
use crate::error::{Error, Result};
use crate::extension::{check_extension, verify_representation, PenaltyValue};
use crate::operator::{check_sandwich, PolyhedralOperator};
use crate::prob::{indicator, FilteredSpace};
use crate::report::{CheckKind, ValidationReport};

const DEFAULT_SAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Representation,
    Sandwich,
    Cocycle,
    Refine,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Representation, Suite::Sandwich, Suite::Cocycle, Suite::Refine];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Representation => "representation",
            Suite::Sandwich => "sandwich",
            Suite::Cocycle => "cocycle",
            Suite::Refine => "refine",
        }
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; expected one of representation, sandwich, cocycle, refine"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Validate,
    Extend,
    Price { from: usize, to: usize, payoff: PayoffRef },
    Check(Suite),
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Extend => "extend",
            Command::Price { .. } => "price",
            Command::Check(_) => "check",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Seed for every sampled check.
    pub seed: u64,
    /// Tolerance for price identities and expected values.
    pub tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub document: Value,
    pub json: String,
    pub text: String,
    pub passed: bool,
}

struct Section {
    name: String,
    checks: ValidationReport,
    data: Value,
}

impl Section {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checks: ValidationReport::new(),
            data: Value::Null,
        }
    }
}

/// Rounds to 10 significant digits.
pub(crate) fn sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.9e}").parse().expect("formatted float parses")
}

fn sig_str(x: f64) -> String {
    let r = sig(x) + 0.0;
    if r != 0.0 && !(1e-4..1e10).contains(&r.abs()) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Rewrites every decimal literal inside free text to 10 significant digits.
fn sig_text(s: &str) -> String {
    let b = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < b.len() {
        let starts = b[i].is_ascii_digit() && (i == 0 || !(b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_'));
        if !starts {
            let ch = s[i..].chars().next().expect("char boundary");
            out.push(ch);
            i += ch.len_utf8();
            continue;
        }
        let mut j = i;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        let mut float = false;
        if j + 1 < b.len() && b[j] == b'.' && b[j + 1].is_ascii_digit() {
            float = true;
            j += 1;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
        }
        if float && j < b.len() && (b[j] == b'e' || b[j] == b'E') {
            let mut k = j + 1;
            if k < b.len() && (b[k] == b'-' || b[k] == b'+') {
                k += 1;
            }
            if k < b.len() && b[k].is_ascii_digit() {
                while k < b.len() && b[k].is_ascii_digit() {
                    k += 1;
                }
                j = k;
            }
        }
        let lit = &s[i..j];
        match lit.parse::<f64>() {
            Ok(x) if float => out.push_str(&sig_str(x)),
            _ => out.push_str(lit),
        }
        i = j;
    }
    out
}

fn round_all(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = json!(sig(n.as_f64().expect("f64")));
        }
        Value::String(s) => *s = sig_text(s),
        Value::Array(a) => a.iter_mut().for_each(round_all),
        Value::Object(o) => o.values_mut().for_each(round_all),
        _ => {}
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn pair_name(s: usize, t: usize) -> String {
    format!("x_{{{s},{t}}}")
}

fn declared_ops(b: &Built) -> Vec<(usize, usize, &PolyhedralOperator)> {
    let sys = &b.system;
    let mut out: Vec<_> = sys.grid().windows(2).zip(sys.one_step()).map(|(w, op)| (w[0], w[1], op)).collect();
    out.extend(sys.long_ops().iter().map(|(&(s, t), op)| (s, t, op)));
    out
}

/// The extended system, or the reason it does not exist when a one-step
/// operator violates its sandwich. Other failures are structural.
fn extended(b: &Built) -> Result<std::result::Result<ExtendedSystem, String>> {
    match extend_system(&b.system) {
        Ok(e) => Ok(Ok(e)),
        Err(e @ Error::AtPair { .. }) if matches!(&e, Error::AtPair { source, .. } if matches!(**source, Error::SandwichViolated { .. })) => {
            Ok(Err(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

fn per_block(space: &FilteredSpace, level: usize, f: impl Fn(usize) -> Value) -> Result<Value> {
    Ok(Value::Array(
        space
            .level(level)?
            .blocks()
            .iter()
            .map(|b| json!({"atoms": b, "value": f(b[0])}))
            .collect(),
    ))
}

fn penalty_json(p: &PenaltyValue, w: usize) -> Value {
    match p.at(w).finite() {
        Some(v) => json!(v),
        None => json!("+inf"),
    }
}

fn validate(b: &Built, samples: usize, opts: &RunOptions) -> Result<Section> {
    let mut sec = Section::new("validate");
    sec.checks = validate_system(&b.system, samples, &mut rng(opts.seed, 1))?;
    Ok(sec)
}

fn extend(ext: &std::result::Result<ExtendedSystem, String>, samples: usize, opts: &RunOptions) -> Result<Section> {
    let mut sec = Section::new("extend");
    let ext = match ext {
        Ok(e) => e,
        Err(msg) => {
            sec.checks.push("one-step extensions exist", false, CheckKind::Exact, msg.clone());
            return Ok(sec);
        }
    };
    let space = ext.space();
    let grid = ext.grid();
    let mut r = rng(opts.seed, 2);
    let mut steps = Vec::new();
    for (l, step) in ext.steps().iter().enumerate() {
        let (s, t) = (grid[l], grid[l + 1]);
        sec.checks.absorb(&format!("x̂_{{{s},{t}}}: "), check_extension(step, samples, &mut r)?);
        steps.push(json!({
            "from": s,
            "to": t,
            "pieces": step.base().pieces().len(),
            "domain_dimension": step.base().domain().basis().len(),
            "polytope_blocks": step.polytope().blocks().len(),
            "positivity_guaranteed": step.positivity_guaranteed(),
        }));
    }
    // composed values of level-t indicators for every grid pair
    let mut composed = Vec::new();
    for (i, &s) in grid.iter().enumerate() {
        for &t in &grid[i + 1..] {
            let mut rows = Vec::new();
            for blk in space.level(t)?.blocks() {
                let x = indicator(space, blk, t)?;
                let v = ext.evaluate(s, t, &x)?;
                rows.push(json!({"indicator_of": blk, "value": per_block(space, s, |w| json!(v[w]))?}));
            }
            composed.push(json!({"from": s, "to": t, "indicators": rows}));
        }
    }
    sec.data = json!({"steps": steps, "composed": composed});
    Ok(sec)
}

fn price(
    b: &Built,
    ext: &std::result::Result<ExtendedSystem, String>,
    from: usize,
    to: usize,
    payoff: &PayoffRef,
    expect: Option<&Values>,
    opts: &RunOptions,
) -> Result<Section> {
    let label = match payoff {
        PayoffRef::Named(n) => n.clone(),
        PayoffRef::Inline(_) => "inline".into(),
    };
    let mut sec = Section::new(format!("price {from}->{to} {label}"));
    let ext = match ext {
        Ok(e) => e,
        Err(msg) => {
            sec.checks.push("one-step extensions exist", false, CheckKind::Exact, msg.clone());
            return Ok(sec);
        }
    };
    let space = ext.space();
    let x = b.payoff(payoff)?;
    let p = ext.price(from, to, &x)?;
    let fx: Vec<f64> = p.density.values().iter().zip(x.values()).map(|(f, x)| f * x).collect();
    let e = space.cond_expectation_values(&fx, from)?;
    let gap = (0..space.n_atoms())
        .map(|w| p.penalty.at(w).finite().map_or(f64::INFINITY, |a| (e[w] - a - p.value[w]).abs()))
        .fold(0.0, f64::max);
    sec.checks.push(
        "value = E[f_X X|F_s] - alpha(f_X)",
        gap <= opts.tol,
        CheckKind::Exact,
        format!("max gap {gap:.3e}"),
    );
    if let Some(want) = expect {
        let want = match want {
            Values::Constant(c) => vec![*c; space.n_atoms()],
            Values::PerAtom(v) => v.clone(),
        };
        if want.len() != space.n_atoms() {
            return Err(Error::Scenario {
                path: "tasks.expect".into(),
                message: format!("expected {} values, got {}", space.n_atoms(), want.len()),
            });
        }
        let diff = (0..space.n_atoms()).map(|w| (p.value[w] - want[w]).abs()).fold(0.0, f64::max);
        sec.checks.push("matches expected value", diff <= opts.tol, CheckKind::Exact, format!("max deviation {diff:.3e}"));
    }
    sec.data = json!({
        "from": from,
        "to": to,
        "payoff": x.values(),
        "value": per_block(space, from, |w| json!(p.value[w]))?,
        "density": p.density.values(),
        "factors": p.factors.iter().map(|g| g.values().to_vec()).collect::<Vec<_>>(),
        "penalty": per_block(space, from, |w| penalty_json(&p.penalty, w))?,
    });
    Ok(sec)
}

fn suite(b: &Built, ext: &std::result::Result<ExtendedSystem, String>, which: Suite, sc: &Scenario, samples: usize, opts: &RunOptions) -> Result<Section> {
    let mut sec = Section::new(format!("check {}", which.name()));
    let sys = &b.system;
    let grid = sys.grid();
    let need_ext = |sec: &mut Section| -> Option<()> {
        if let Err(msg) = ext {
            sec.checks.push("one-step extensions exist", false, CheckKind::Exact, msg.clone());
            return None;
        }
        Some(())
    };
    match which {
        Suite::Representation => {
            let mut r = rng(opts.seed, 4);
            for (s, t, op) in declared_ops(b) {
                sec.checks.absorb(&format!("{}: ", pair_name(s, t)), verify_representation(op, samples, &mut r)?);
            }
        }
        Suite::Sandwich => {
            for (s, t, op) in declared_ops(b) {
                let c = check_sandwich(op, &sys.bounds()[&(s, t)])?;
                let detail = match &c.witness {
                    Some(w) => format!("block {}, piece {}: m(Z)+x(X) = {} > M(Y) = {}", w.block, w.piece, w.lhs, w.rhs),
                    None => String::new(),
                };
                sec.checks.push(format!("{}: sandwich", pair_name(s, t)), c.holds, CheckKind::Exact, detail);
            }
            if need_ext(&mut sec).is_some() {
                let ext = ext.as_ref().expect("checked");
                let mut r = rng(opts.seed, 5);
                for (l, step) in ext.steps().iter().enumerate() {
                    sec.checks.absorb(&format!("x̂_{{{},{}}}: ", grid[l], grid[l + 1]), check_extension(step, samples, &mut r)?);
                }
            }
        }
        Suite::Cocycle => {
            if need_ext(&mut sec).is_some() {
                let ext = ext.as_ref().expect("checked");
                let mut r = rng(opts.seed, 6);
                let mut triples = 0;
                for a in 0..grid.len() {
                    for c in a + 2..grid.len() {
                        for bb in a + 1..c {
                            let (rr, s, t) = (grid[a], grid[bb], grid[c]);
                            triples += 1;
                            sec.checks.absorb(&format!("({rr},{s},{t}) "), check_cocycle_and_local(ext, rr, s, t, samples, &mut r)?);
                        }
                    }
                }
                if triples == 0 {
                    sec.checks.push("cocycle", true, CheckKind::Structural, "no grid triple; vacuous");
                }
                for a in 0..grid.len() {
                    for c in a + 1..grid.len() {
                        let (s, t) = (grid[a], grid[c]);
                        sec.checks.absorb(&format!("({s},{t}) "), check_composed_extension(ext, s, t, samples.div_ceil(2), &mut r)?);
                    }
                }
            }
        }
        Suite::Refine => {
            let coarse_grid = match &sc.refine {
                Some(r) => r.coarse_grid.clone(),
                None => vec![grid[0], *grid.last().expect("grid")],
            };
            let coarse = sys.coarsen(&coarse_grid).map_err(|e| Error::Scenario {
                path: "refine.coarse_grid".into(),
                message: e.to_string(),
            })?;
            match refine_and_compare(&coarse, sys, samples, &mut rng(opts.seed, 7)) {
                Ok(out) => {
                    sec.checks.absorb("", out.report);
                    let witness = match out.strict {
                        Some(w) => json!({
                            "from": w.s,
                            "to": w.t,
                            "payoff": w.x.values(),
                            "atom": w.atom,
                            "fine": w.fine[w.atom],
                            "coarse": w.coarse[w.atom],
                        }),
                        None => Value::Null,
                    };
                    sec.data = json!({"coarse_grid": coarse_grid, "fine_grid": grid, "strict_decrease": witness});
                }
                Err(e @ Error::AtPair { .. }) => {
                    sec.checks.push("coarse and fine extensions exist", false, CheckKind::Exact, e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(sec)
}

/// Runs `cmd` on the scenario. Structural problems are errors; failed checks
/// are reported through [`RunOutput::passed`].
pub fn run(sc: &Scenario, cmd: &Command, opts: &RunOptions) -> Result<RunOutput> {
    let b = sc.build()?;
    let samples = sc.samples.unwrap_or(DEFAULT_SAMPLES);
    let mut sections = Vec::new();
    match cmd {
        Command::Validate => sections.push(validate(&b, samples, opts)?),
        Command::Extend => sections.push(extend(&extended(&b)?, samples, opts)?),
        Command::Price { from, to, payoff } => sections.push(price(&b, &extended(&b)?, *from, *to, payoff, None, opts)?),
        Command::Check(s) => {
            let ext = if *s == Suite::Representation || *s == Suite::Refine { Err(String::new()) } else { extended(&b)? };
            sections.push(suite(&b, &ext, *s, sc, samples, opts)?);
        }
        Command::Report => {
            let ext = extended(&b)?;
            sections.push(validate(&b, samples, opts)?);
            sections.push(extend(&ext, samples, opts)?);
            for t in &sc.tasks {
                let Task::Price { from, to, payoff, expect } = t;
                sections.push(price(&b, &ext, *from, *to, payoff, expect.as_ref(), opts)?);
            }
            for s in Suite::ALL {
                sections.push(suite(&b, &ext, s, sc, samples, opts)?);
            }
        }
    }
    for sec in &mut sections {
        for e in &mut sec.checks.entries {
            e.detail = sig_text(&e.detail);
        }
    }
    let passed = sections.iter().all(|s| s.checks.all_passed());
    let mut document = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cmd.name(),
        "seed": opts.seed,
        "tol": opts.tol,
        "samples": samples,
        "passed": passed,
        "sections": sections.iter().map(|s| json!({
            "name": s.name,
            "passed": s.checks.all_passed(),
            "checks": s.checks.entries,
            "data": s.data,
        })).collect::<Vec<_>>(),
    });
    round_all(&mut document);
    // the echo keeps full precision so that it re-validates identically
    document["scenario"] = serde_json::to_value(sc).expect("scenario serialises");
    let json = serde_json::to_string_pretty(&document).expect("report serialises") + "\n";
    let text = render(sc, &sections, passed);
    Ok(RunOutput {
        document,
        json,
        text,
        passed,
    })
}

fn render(sc: &Scenario, sections: &[Section], passed: bool) -> String {
    let mut out = String::new();
    if let Some(n) = &sc.name {
        let _ = writeln!(out, "scenario: {n}");
    }
    let (mut total, mut failed) = (0, 0);
    for sec in sections {
        let _ = writeln!(out, "\n== {} ==", sec.name);
        let width = sec.checks.entries.iter().map(|e| e.name.chars().count()).max().unwrap_or(0);
        for e in &sec.checks.entries {
            total += 1;
            failed += usize::from(!e.passed);
            let kind = match e.kind {
                CheckKind::Exact => "exact",
                CheckKind::Structural => "structural",
                CheckKind::Sampled => "sampled",
            };
            let pad = width - e.name.chars().count();
            let _ = writeln!(
                out,
                "{}  {kind:<10}  {}{}  {}",
                if e.passed { "PASS" } else { "FAIL" },
                e.name,
                " ".repeat(pad),
                e.detail
            );
        }
        render_data(&mut out, &sec.data);
    }
    let _ = writeln!(out, "\n{total} checks, {failed} failed: {}", if passed { "PASS" } else { "FAIL" });
    out
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), sig_str),
        Value::Array(a) => format!("[{}]", a.iter().map(fmt_value).collect::<Vec<_>>().join(", ")),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn render_data(out: &mut String, data: &Value) {
    let Some(obj) = data.as_object() else { return };
    if let (Some(value), Some(pen)) = (obj.get("value"), obj.get("penalty")) {
        for (v, p) in value.as_array().into_iter().flatten().zip(pen.as_array().into_iter().flatten()) {
            let _ = writeln!(out, "  block {}: value {}  penalty {}", fmt_value(&v["atoms"]), fmt_value(&v["value"]), fmt_value(&p["value"]));
        }
        let _ = writeln!(out, "  attaining density {}", fmt_value(&obj["density"]));
    }
    if let Some(steps) = obj.get("steps").and_then(Value::as_array) {
        for s in steps {
            let _ = writeln!(
                out,
                "  step ({}, {}): {} pieces, dim L = {}, strictly positive densities guaranteed: {}",
                s["from"], s["to"], s["pieces"], s["domain_dimension"], s["positivity_guaranteed"]
            );
        }
    }
    if let Some(w) = obj.get("strict_decrease") {
        if w.is_null() {
            let _ = writeln!(out, "  no strict decrease observed");
        } else {
            let _ = writeln!(
                out,
                "  strict decrease on ({}, {}) at atom {}: fine {} < coarse {} for X = {}",
                w["from"],
                w["to"],
                w["atom"],
                fmt_value(&w["fine"]),
                fmt_value(&w["coarse"]),
                fmt_value(&w["payoff"])
            );
        }
    }
}
