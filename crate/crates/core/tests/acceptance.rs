//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the
//! lines always appear in `cargo test` output.

use std::f64::consts::PI;
use std::time::Instant;

use dwl_core::diagnostics::{ConvergenceTable, Verdict};
use dwl_core::harness::{
    builtin, builtin_experiments, max_residual, run_convergence, run_decay, run_modal, run_steady, DecayOptions,
    RESIDUAL_TOL,
};
use dwl_core::mesh::Rectangle;
use dwl_core::sparse::STEP_RTOL;
use dwl_core::stepper::{BackendHandles, BackendKind};

const PAPER: [&str; 4] = ["ex1", "ex2", "ex3i", "ex3ii"];

type Outcome = Result<String, String>;

fn ok_if(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn in_window(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|r| (lo..=hi).contains(&r))
}

fn fmt_rates(rates: &[Option<f64>]) -> String {
    rates
        .iter()
        .map(|r| r.map_or("-".into(), |v| format!("{v:.4}")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Window checks on the last three rates; returns failures.
fn rate_windows(name: &str, t: &ConvergenceTable, h1_special: bool) -> Vec<String> {
    let tail = &t.rows[t.rows.len() - 3..];
    let mut bad = Vec::new();
    let l2: Vec<_> = tail.iter().map(|r| r.rate_l2).collect();
    let linf: Vec<_> = tail.iter().map(|r| r.rate_linf).collect();
    let h1: Vec<_> = tail.iter().map(|r| r.rate_h1).collect();
    if !l2.iter().all(|r| in_window(*r, 1.85, 2.2)) {
        bad.push(format!("{name} L2 rates {}", fmt_rates(&l2)));
    }
    if !linf.iter().all(|r| in_window(*r, 1.85, 2.2)) {
        bad.push(format!("{name} Linf rates {}", fmt_rates(&linf)));
    }
    if h1_special {
        let (prev, last) = (h1[1], h1[2]);
        if !matches!((prev, last), (Some(p), Some(l)) if l <= p + 0.05) {
            bad.push(format!("{name} H1 rates not approaching 1: {}", fmt_rates(&h1)));
        }
    } else if !h1.iter().all(|r| in_window(*r, 0.85, 1.2)) {
        bad.push(format!("{name} H1 rates {}", fmt_rates(&h1)));
    }
    bad
}

fn summary(name: &str, t: &ConvergenceTable) -> String {
    let tail = &t.rows[t.rows.len() - 3..];
    format!(
        "{name}: L2 {} | Linf {} | H1 {}",
        fmt_rates(&tail.iter().map(|r| r.rate_l2).collect::<Vec<_>>()),
        fmt_rates(&tail.iter().map(|r| r.rate_linf).collect::<Vec<_>>()),
        fmt_rates(&tail.iter().map(|r| r.rate_h1).collect::<Vec<_>>()),
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let exp = builtin("ex1").map_err(|e| e.to_string())?;
    let t = run_convergence(&exp).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut bad = rate_windows("ex1", &t, false);
    let l2 = t.rows.last().expect("rows").l2;
    let ratio = l2 / 2.3671e-4;
    if !(1.0 / 3.0..=3.0).contains(&ratio) {
        bad.push(format!("L2 at N=30 is {l2:.4e}, ratio {ratio:.3} to the reference value"));
    }
    if secs > 180.0 {
        bad.push(format!("runtime {secs:.1}s"));
    }
    let detail = format!("{}; L2(30) = {l2:.4e} (x{ratio:.3}); {secs:.1}s", summary("ex1", &t));
    ok_if(bad.is_empty(), if bad.is_empty() { detail } else { format!("{detail}; {}", bad.join("; ")) })
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for name in ["ex2", "ex3i", "ex3ii"] {
        let exp = builtin(name).map_err(|e| e.to_string())?;
        let t = run_convergence(&exp).map_err(|e| e.to_string())?;
        bad.extend(rate_windows(name, &t, name == "ex3ii"));
        parts.push(summary(name, &t));
    }
    let detail = parts.join("; ");
    ok_if(bad.is_empty(), if bad.is_empty() { detail } else { format!("{detail}; {}", bad.join("; ")) })
}

fn reference_decay(n: usize) -> Result<Vec<(String, dwl_core::harness::DecayReport)>, String> {
    PAPER
        .iter()
        .map(|name| {
            let exp = builtin(name).map_err(|e| e.to_string())?;
            let r = run_decay(&exp, n, &DecayOptions::default()).map_err(|e| e.to_string())?;
            Ok((name.to_string(), r))
        })
        .collect()
}

fn criterion_3(reports: &[(String, dwl_core::harness::DecayReport)]) -> Outcome {
    // every built-in constant-coefficient experiment without forcing
    let homogeneous: Vec<String> = builtin_experiments()
        .into_iter()
        .filter(|e| e.is_homogeneous_constant())
        .map(|e| e.name)
        .collect();
    let mut bad = Vec::new();
    for (name, r) in reports {
        if !r.dissipation.passed() {
            bad.push(format!("{name}: {:?}", r.dissipation));
        }
    }
    let covered: Vec<&String> = reports.iter().map(|(n, _)| n).collect();
    if homogeneous.iter().any(|h| !covered.contains(&h)) {
        bad.push(format!("uncovered experiments among {homogeneous:?}"));
    }
    let steps: usize = reports.iter().map(|(_, r)| r.trace.rows.len()).sum();
    ok_if(bad.is_empty(), format!("{} experiments, {steps} energies checked {}", reports.len(), bad.join("; ")))
}

fn criterion_4(reports: &[(String, dwl_core::harness::DecayReport)]) -> Outcome {
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for (name, r) in reports {
        parts.push(format!("{name} delta={:.4}", r.delta.unwrap_or(f64::NAN)));
        if !r.sandwich.passed() {
            bad.push(format!("{name}: {:?}", r.sandwich));
        }
    }
    ok_if(bad.is_empty(), format!("{} {}", parts.join(", "), bad.join("; ")))
}

fn criterion_5(reports: &[(String, dwl_core::harness::DecayReport)]) -> Outcome {
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for (name, r) in reports {
        let dk = r.delta.unwrap_or(f64::NAN) * r.trace.meta.k;
        parts.push(format!("{name} delta*k={dk:.2e}"));
        if !r.decay_bound.passed() {
            bad.push(format!("{name}: {:?}", r.decay_bound));
        }
    }
    ok_if(bad.is_empty(), format!("{} {}", parts.join(", "), bad.join("; ")))
}

fn criterion_6() -> Outcome {
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for name in ["ex1", "ex3i"] {
        let exp = builtin(name).map_err(|e| e.to_string())?;
        let opts = DecayOptions {
            window: Some((0.2, 0.8)),
            ..Default::default()
        };
        let r = run_decay(&exp, 32, &opts).map_err(|e| e.to_string())?;
        let fit = r.fit.as_ref().map_err(|e| format!("{name}: {e}"))?;
        let rel = (fit.delta - PI).abs() / PI;
        parts.push(format!("{name} delta_fit={:.5} ({:.2}%)", fit.delta, 100.0 * rel));
        if rel > 0.05 {
            bad.push(name.to_string());
        }
    }
    ok_if(bad.is_empty(), parts.join(", "))
}

fn criterion_7() -> Outcome {
    let unit = Rectangle::unit();
    let fd = BackendHandles::build(BackendKind::Fd, unit, 16).map_err(|e| e.to_string())?;
    let h = fd.h();
    let closed = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    let lam = fd.lambda1(1e-12).map_err(|e| e.to_string())?;
    let fd_rel = (lam - closed).abs() / closed;
    let target = 2.0 * PI * PI;
    let mut errs = Vec::new();
    for n in [8, 16, 32] {
        let b = BackendHandles::build(BackendKind::Fem, unit, n).map_err(|e| e.to_string())?;
        errs.push(b.lambda1(1e-12).map_err(|e| e.to_string())? - target);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).ln() / 2f64.ln()).collect();
    let pass = fd_rel <= 1e-8 && errs.iter().all(|e| *e > 0.0) && orders.iter().all(|o| *o >= 1.9);
    ok_if(
        pass,
        format!(
            "fd rel err {fd_rel:.2e}; fem errors {} orders {}",
            errs.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>().join(" "),
            orders.iter().map(|o| format!("{o:.4}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let m = 16;
    let h = 1.0 / m as f64;
    let k = 2.0 * h * h;
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (p, q) in [(1, 1), (2, 3)] {
        let r = run_modal(Rectangle::unit(), m, &[(p, q, 1.0)], PI, 1.0 / PI, k, 500).map_err(|e| e.to_string())?;
        parts.push(format!("({p},{q}) max rel dev {:.2e} over {} steps", r.max_rel_dev, r.rows.len()));
        worst = worst.max(r.max_rel_dev);
    }
    ok_if(worst <= 1e-8, parts.join(", "))
}

fn criterion_9() -> Outcome {
    let exp = builtin("forced").map_err(|e| e.to_string())?;
    let r = run_steady(&exp, 16, None, Some(30.0), STEP_RTOL).map_err(|e| e.to_string())?;
    let last = r.distances.last().expect("distances");
    let describe = |v: &Verdict| match v {
        Verdict::Violated { detail, t, .. } => format!("FAIL ({detail} at t = {t:.4})"),
        other => other.label().to_string(),
    };
    let detail = format!(
        "{} states, below 1e-6 at t = {}, monotone until then: {}; full run: {}, final relative distance {:.2e}",
        r.distances.len(),
        r.reached.map_or("never".into(), |t| format!("{t:.3}")),
        describe(&r.monotone),
        describe(&r.monotone_full),
        last.1 / r.distances[0].1,
    );
    ok_if(r.monotone.passed() && r.reached.is_some_and(|t| t <= 30.0), detail)
}

fn criterion_10() -> Outcome {
    let exp = builtin("ex1").map_err(|e| e.to_string())?;
    let r = run_decay(&exp, 32, &DecayOptions::default()).map_err(|e| e.to_string())?;
    let e0 = r.trace.initial_energy().ok_or("empty trace")?;
    let target = 3.0 * PI * PI / 8.0;
    let rel = (e0 - target).abs() / target;
    ok_if(rel <= 0.02, format!("E0 = {e0:.6}, 3pi^2/8 = {target:.6}, rel {:.3}%", 100.0 * rel))
}

fn criterion_11() -> Outcome {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for e in builtin_experiments().iter().filter(|e| e.exact.is_some()) {
        let r = max_residual(e, 100).map_err(|err| format!("{}: {err}", e.name))?;
        worst = worst.max(r);
        parts.push(format!("{} {r:.1e}", e.name));
    }
    ok_if(worst <= RESIDUAL_TOL, parts.join(", "))
}

fn main() {
    let decay16 = reference_decay(16);
    let with_reports = |f: fn(&[(String, dwl_core::harness::DecayReport)]) -> Outcome| -> Outcome {
        match &decay16 {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "convergence rates, example 1", criterion_1()),
        (2, "convergence rates, examples 2, 3(i), 3(ii)", criterion_2()),
        (3, "energy dissipation at every step", with_reports(criterion_3)),
        (4, "extended-energy sandwich", with_reports(criterion_4)),
        (5, "fully discrete decay bound", with_reports(criterion_5)),
        (6, "fitted decay rate", criterion_6()),
        (7, "smallest eigenvalue", criterion_7()),
        (8, "modal oracle equivalence", criterion_8()),
        (9, "steady-state decay", criterion_9()),
        (10, "initial energy", criterion_10()),
        (11, "PDE residual guard", criterion_11()),
    ];
    let mut failed = 0;
    for (id, title, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {title}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {title}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
