use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use splitkit::analysis::{gamma_of_pair, leading_defect, order_residuals_to, DEFAULT_DEGREE};
use splitkit::burgers::{
    adaptive_shock_run, derived_pair, halving_steps, local_order_study, plot_script,
    snapshot_csv, trace_csv, Burgers, BurgersConfig, BurgersError, HAT_HEIGHT,
};
use splitkit::integrator::{IntegrateError, StepController};
use splitkit::optimizer::{derive_milne_partner, optimize_scheme, restore_precision, OptimizeSpec};
use splitkit::oracle::{empirical_gamma, empirical_order, make_problem};
use splitkit::schemes::{
    load_pair, registry_get, MilnePair, RegistryEntry, SchemeTable, REGISTRY_NAMES,
};

use crate::run::Run;
use crate::{BurgersArgs, OptimizeArgs, Outcome, VerifyArgs};

/// Allowed distance between fitted slope and order + 1.
const SLOPE_TOL: f64 = 0.15;
/// Allowed distance between algebraic and empirical γ.
const GAMMA_TOL: f64 = 1e-3;
/// Order window of the Burgers study.
const STUDY_ORDER_RANGE: (f64, f64) = (2.8, 3.05);
/// Seed of [`derived_pair`].
const DERIVED_PAIR_SEED: u64 = 0;

/// A registry name, or a scheme or pair file.
fn load_entry(spec: &str) -> Result<RegistryEntry> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        return Ok(if text.contains("[basic]") {
            RegistryEntry::Pair(MilnePair::from_text(&text)?)
        } else {
            RegistryEntry::Scheme(SchemeTable::from_text(&text)?)
        });
    }
    Ok(registry_get(spec)?)
}

fn load_scheme_arg(spec: &str) -> Result<SchemeTable> {
    match load_entry(spec)? {
        RegistryEntry::Scheme(s) => Ok(s),
        RegistryEntry::Pair(_) => bail!("`{spec}` is a pair"),
    }
}

/// `derived`, a pair file, or a registry pair.
fn load_pair_arg(spec: &str, run: &mut Run) -> Result<MilnePair> {
    if spec == "derived" {
        run.seeds.push(DERIVED_PAIR_SEED);
        return Ok(derived_pair()?);
    }
    if Path::new(spec).is_file() {
        return Ok(load_pair(spec)?);
    }
    match registry_get(spec)? {
        RegistryEntry::Pair(p) => Ok(p),
        RegistryEntry::Scheme(_) => bail!("`{spec}` is a single scheme, not a pair"),
    }
}

pub fn schemes_list() -> Result<Outcome> {
    let mut names = Vec::new();
    for name in REGISTRY_NAMES {
        match registry_get(name) {
            Ok(RegistryEntry::Scheme(s)) => {
                let lem = leading_defect(&s).map(|d| format!("{:.6}", d.lem()));
                let tags: Vec<&str> = s.tags().iter().map(|t| t.as_str()).collect();
                println!(
                    "{name:<16} ops {} stages {} order {} LEM {} [{}]",
                    s.n_ops(),
                    s.stages(),
                    s.order(),
                    lem.unwrap_or_else(|e| format!("n/a ({e})")),
                    tags.join(", ")
                );
            }
            Ok(RegistryEntry::Pair(p)) => {
                println!("{name:<16} pair, gamma {}", p.gamma);
            }
            Err(e) => println!("{name:<16} unavailable: {e}"),
        }
        names.push(*name);
    }
    Ok(Outcome {
        ok: true,
        summary: json!({ "schemes": names }),
    })
}

pub fn schemes_show(name: &str) -> Result<Outcome> {
    match load_entry(name)? {
        RegistryEntry::Scheme(s) => print!("{}", s.to_text()),
        RegistryEntry::Pair(p) => print!("{}", p.to_text()),
    }
    Ok(Outcome {
        ok: true,
        summary: json!({ "name": name }),
    })
}

/// Prints the check report of one scheme and returns whether its declared
/// order is verified.
fn check_one(s: &SchemeTable) -> Result<(bool, serde_json::Value)> {
    println!("{}: {} operators, {} stages", s.name(), s.n_ops(), s.stages());
    for (op, sum) in s.row_sums().iter().enumerate() {
        println!("  operator {} sum {sum:.12}", op + 1);
    }
    let degree = (s.order() + 1).max(DEFAULT_DEGREE);
    let report = order_residuals_to(s, degree)?;
    for d in 1..=degree {
        println!(
            "  degree {d} residual {:.3e} (non-Lie {:.1e})",
            report.residual(d),
            report.lie_residual_by_degree[d - 1]
        );
    }
    let verified = report.verified_order >= s.order();
    let lem = leading_defect(s).ok().map(|d| d.lem());
    let lem_text = lem.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    if verified {
        println!("  order {} verified, LEM {lem_text}", s.order());
    } else {
        println!(
            "  order {} NOT verified (residuals vanish through order {})",
            s.order(),
            report.verified_order
        );
    }
    let mut negatives = Vec::new();
    for op in 1..=s.n_ops() {
        for st in 1..=s.stages() {
            if s.coeff(op, st).is_negative() {
                negatives.push(format!("a[{op}][{st}] = {}", s.value(op, st)));
            }
        }
    }
    if negatives.is_empty() {
        println!("  no negative entries");
    } else {
        println!("  negative entries present: {}", negatives.join(", "));
    }
    println!("  palindromic: {}", s.is_palindromic());
    Ok((
        verified,
        json!({
            "name": s.name(),
            "declared_order": s.order(),
            "verified_order": report.verified_order,
            "lem": lem,
            "negative_entries": !negatives.is_empty(),
            "palindromic": s.is_palindromic(),
        }),
    ))
}

pub fn schemes_check(name: &str) -> Result<Outcome> {
    match load_entry(name)? {
        RegistryEntry::Scheme(s) => {
            let (ok, summary) = check_one(&s)?;
            Ok(Outcome { ok, summary })
        }
        RegistryEntry::Pair(p) => {
            let (ok_b, b) = check_one(&p.basic)?;
            let (ok_p, q) = check_one(&p.partner)?;
            let fit = gamma_of_pair(&p.basic, &p.partner)?;
            println!(
                "pair: stored gamma {}, algebraic gamma {:.9}, parallelism defect {:.2e}",
                p.gamma, fit.gamma, fit.parallelism_defect
            );
            Ok(Outcome {
                ok: ok_b && ok_p && fit.is_milne_pair(),
                summary: json!({
                    "basic": b,
                    "partner": q,
                    "gamma": fit.gamma,
                    "parallelism_defect": fit.parallelism_defect,
                }),
            })
        }
    }
}

/// Halvings of `hmax` down to `hmin`.
fn step_list(hmin: f64, hmax: f64) -> Result<Vec<f64>> {
    if !(hmin > 0.0 && hmin < hmax) {
        bail!("need 0 < hmin < hmax");
    }
    let mut steps = Vec::new();
    let mut h = hmax;
    while h >= hmin * (1.0 - 1e-12) {
        steps.push(h);
        h /= 2.0;
    }
    Ok(steps)
}

/// Unless `raw`, restores the trailing digits of a published table.
fn prepare(s: SchemeTable, raw: bool) -> (SchemeTable, bool) {
    if raw {
        return (s, false);
    }
    match restore_precision(&s) {
        Ok(r) => {
            let changed = r != s;
            (r, changed)
        }
        Err(_) => (s, false),
    }
}

pub fn verify(a: &VerifyArgs, run: &mut Run) -> Result<Outcome> {
    if let Some(d) = &a.out_dir {
        run.set_out_dir(d);
    }
    let (dim, seed) = a.oracle;
    run.seeds.push(seed);
    run.config = json!({
        "scheme": a.scheme, "pair": a.pair, "order": a.order, "dim": dim, "seed": seed,
        "hmin": a.hmin, "hmax": a.hmax, "gamma": a.gamma, "raw": a.raw,
    });
    let steps = step_list(a.hmin, a.hmax)?;
    let mut csv = String::new();
    let outcome = if let Some(name) = &a.scheme {
        let (s, restored) = prepare(load_scheme_arg(name)?, a.raw);
        let order = a.order.unwrap_or(s.order());
        let p = make_problem(s.n_ops(), dim, seed)?;
        let fit = empirical_order(&s, &p, &steps)?;
        csv.push_str("h,error,constant\n");
        for ((h, e), c) in fit.steps.iter().zip(&fit.errors).zip(fit.constants(order as i32 + 1)) {
            let _ = writeln!(csv, "{h:.16e},{e:.16e},{c:.16e}");
        }
        let expected = (order + 1) as f64;
        let ok = (fit.slope - expected).abs() <= SLOPE_TOL;
        eprintln!(
            "{}: slope {:.4}, expected {expected} ± {SLOPE_TOL}: {}",
            s.name(),
            fit.slope,
            if ok { "pass" } else { "FAIL" }
        );
        Outcome {
            ok,
            summary: json!({
                "scheme": s.name(), "slope": fit.slope, "expected_slope": expected,
                "restored": restored,
            }),
        }
    } else {
        let spec = a.pair.as_deref().context("--scheme or --pair required")?;
        let pair = load_pair_arg(spec, run)?;
        let (basic, rb) = prepare(pair.basic.clone(), a.raw);
        let (partner, rp) = prepare(pair.partner.clone(), a.raw);
        let pair = MilnePair::new(basic, partner, pair.gamma)?;
        let order = a.order.unwrap_or(pair.order());
        let expected = (order + 1) as f64;
        let p = make_problem(pair.basic.n_ops(), dim, seed)?;
        let fb = empirical_order(&pair.basic, &p, &steps)?;
        let fp = empirical_order(&pair.partner, &p, &steps)?;
        let g = empirical_gamma(&pair, &p, &steps)?;
        csv.push_str("h,err_basic,err_partner,ratio\n");
        for (i, h) in steps.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{h:.16e},{:.16e},{:.16e},{:.16e}",
                fb.errors[i], fp.errors[i], g.ratios[i]
            );
        }
        let mut ok = (fb.slope - expected).abs() <= SLOPE_TOL
            && (fp.slope - expected).abs() <= SLOPE_TOL;
        eprintln!(
            "basic slope {:.4}, partner slope {:.4}, expected {expected}",
            fb.slope, fp.slope
        );
        eprintln!("empirical gamma {:.9} (drifting: {})", g.gamma, g.drifting);
        let mut algebraic = None;
        if a.gamma {
            let fit = gamma_of_pair(&pair.basic, &pair.partner)?;
            let agree = (fit.gamma - g.gamma).abs() <= GAMMA_TOL;
            eprintln!(
                "algebraic gamma {:.9}, difference {:.2e}: {}",
                fit.gamma,
                (fit.gamma - g.gamma).abs(),
                if agree { "pass" } else { "FAIL" }
            );
            ok &= agree;
            algebraic = Some(fit.gamma);
        }
        Outcome {
            ok,
            summary: json!({
                "basic_slope": fb.slope, "partner_slope": fp.slope, "expected_slope": expected,
                "empirical_gamma": g.gamma, "algebraic_gamma": algebraic,
                "restored": rb || rp,
            }),
        }
    };
    if run.has_out_dir() {
        run.write("verify.csv", &csv)?;
    } else {
        print!("{csv}");
    }
    Ok(outcome)
}

pub fn optimize(a: &OptimizeArgs, run: &mut Run) -> Result<Outcome> {
    run.set_out_file(&a.out);
    run.seeds.push(a.seed);
    run.config = json!({
        "ops": a.ops, "stages": a.stages, "nonneg": a.nonneg, "milne_of": a.milne_of,
        "budget": a.budget, "iters": a.iters, "seed": a.seed,
    });
    if let Some(name) = &a.milne_of {
        let basic = load_scheme_arg(name)?;
        if basic.n_ops() != a.ops {
            bail!("--ops {} does not match `{name}` ({} operators)", a.ops, basic.n_ops());
        }
        let res = derive_milne_partner(&basic, a.stages, a.nonneg, a.budget, a.seed)?;
        run.write_path(&a.out, &res.pair.to_text())?;
        eprintln!(
            "gamma = {:.12}, partner LEM {:.6}, parallelism defect {:.2e}",
            res.fit.gamma, res.partner_lem, res.fit.parallelism_defect
        );
        return Ok(Outcome {
            ok: true,
            summary: json!({
                "gamma": res.fit.gamma, "partner_lem": res.partner_lem,
                "parallelism_defect": res.fit.parallelism_defect,
                "out": a.out.display().to_string(),
            }),
        });
    }
    let spec = OptimizeSpec::new(a.ops, a.stages)
        .nonnegative(a.nonneg)
        .budget(a.budget, a.iters)
        .seed(a.seed);
    let res = optimize_scheme(&spec)?;
    let verified = order_residuals_to(&res.scheme, DEFAULT_DEGREE)?.verified_order;
    run.write_path(&a.out, &res.scheme.to_text())?;
    eprintln!(
        "LEM {:.6}, order residual {:.2e}, verified order {verified}, best start {}",
        res.lem, res.residual, res.best_start
    );
    Ok(Outcome {
        ok: verified >= 2,
        summary: json!({
            "lem": res.lem, "residual": res.residual, "verified_order": verified,
            "best_start": res.best_start, "out": a.out.display().to_string(),
        }),
    })
}

fn burgers_setup(
    c: &BurgersArgs,
    preset: BurgersConfig,
    default_dir: &str,
    run: &mut Run,
) -> Result<(Burgers, MilnePair)> {
    run.set_out_dir(&c.out_dir.clone().unwrap_or_else(|| PathBuf::from(default_dir)));
    let cfg = BurgersConfig {
        n: c.n,
        length: c.domain,
        viscosity: c.viscosity.unwrap_or(preset.viscosity),
        kappa: c.kappa.unwrap_or(preset.kappa),
        ..preset
    };
    run.config = json!({
        "n": cfg.n, "domain": cfg.length, "viscosity": cfg.viscosity, "kappa": cfg.kappa,
        "cfl_safety": cfg.cfl_safety, "pair": c.pair,
    });
    let b = Burgers::new(cfg)?;
    let pair = load_pair_arg(&c.pair, run)?;
    Ok((b, pair))
}

pub fn burgers_converge(c: &BurgersArgs, h0: f64, rows: usize, run: &mut Run) -> Result<Outcome> {
    let (b, pair) = burgers_setup(c, BurgersConfig::default(), "burgers-converge", run)?;
    if let serde_json::Value::Object(m) = &mut run.config {
        m.insert("h0".into(), json!(h0));
        m.insert("rows".into(), json!(rows));
    }
    let u0 = b.init_bump()?;
    let study = local_order_study(&b, &pair, &u0, &halving_steps(h0, rows))?;
    run.write("study.csv", &study.to_csv())?;
    let (lo, hi) = STUDY_ORDER_RANGE;
    let orders: Vec<f64> = study
        .rows
        .iter()
        .flat_map(|r| [r.order_basic, r.order_partner])
        .flatten()
        .collect();
    for r in &study.rows {
        let o = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        eprintln!(
            "h {:.4e}  basic {:.3e} {:>6}  partner {:.3e} {:>6}  est/true {:.4}",
            r.h,
            r.err_basic,
            o(r.order_basic),
            r.err_partner,
            o(r.order_partner),
            r.estimate_ratio
        );
    }
    let ok = orders.iter().all(|o| (lo..=hi).contains(o));
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let max = orders.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Outcome {
        ok,
        summary: json!({
            "min_order": min, "max_order": max, "order_range": [lo, hi],
            "estimate_ratio": study.rows.last().map(|r| r.estimate_ratio),
        }),
    })
}

pub struct AdaptiveSettings {
    pub tol: f64,
    pub tend: f64,
    pub half_width: f64,
    pub hmin: f64,
    pub hmax: f64,
}

pub fn burgers_adaptive(c: &BurgersArgs, s: &AdaptiveSettings, run: &mut Run) -> Result<Outcome> {
    let (b, pair) = burgers_setup(c, BurgersConfig::shock(), "burgers-adaptive", run)?;
    if let serde_json::Value::Object(m) = &mut run.config {
        m.insert("tol".into(), json!(s.tol));
        m.insert("tend".into(), json!(s.tend));
        m.insert("half_width".into(), json!(s.half_width));
        m.insert("hat_height".into(), json!(HAT_HEIGHT));
        m.insert("hmin".into(), json!(s.hmin));
        m.insert("hmax".into(), json!(s.hmax));
    }
    let controller = StepController::new(s.tol).with_bounds(s.hmin, s.hmax);
    let (u0, out) = match adaptive_shock_run(&b, &pair, &controller, s.half_width, s.tend) {
        Ok(r) => r,
        Err(BurgersError::Integrate(e)) => {
            if let IntegrateError::Step { trace, .. } | IntegrateError::TooManyAttempts { trace, .. } =
                &e
            {
                run.write("trace.csv", &trace_csv(trace))?;
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let cfg = b.config();
    run.write("trace.csv", &trace_csv(&out.trace))?;
    run.write("initial.csv", &snapshot_csv(cfg, &u0))?;
    run.write("final.csv", &snapshot_csv(cfg, &out.state))?;
    run.write(
        "plot.gp",
        &plot_script("trace.csv", "initial.csv", "final.csv", s.tend),
    )?;
    let accepted: Vec<f64> = out.trace.accepted_steps().map(|r| r.h).collect();
    let h_max = accepted.iter().copied().fold(0.0, f64::max);
    let h_initial = accepted.first().copied();
    let h_final = accepted.last().copied();
    eprintln!(
        "accepted {}, rejected {}, floor hit {}, h initial {:.3e}, max {h_max:.3e}, final {:.3e}",
        out.trace.accepted,
        out.trace.rejected,
        out.trace.floor_hit,
        h_initial.unwrap_or(f64::NAN),
        h_final.unwrap_or(f64::NAN)
    );
    Ok(Outcome {
        ok: true,
        summary: json!({
            "accepted": out.trace.accepted, "rejected": out.trace.rejected,
            "floor_hit": out.trace.floor_hit, "h_initial": h_initial, "h_max": h_max,
            "h_final": h_final,
        }),
    })
}
