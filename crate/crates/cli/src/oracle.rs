use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use otlab_core::conjugate::ConjugatePair;
use otlab_core::oracle::{
    duality_report, parse_instance, plan_convergence_curve, random_instance, write_instance, ConvergenceCurve,
    DualityReport, Instance, UotOptions,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::OracleArgs;
use crate::report;

pub const CURVE_FILE: &str = "curve.json";
pub const INSTANCE_FILE: &str = "instance.txt";

/// Allowed slack when checking the plan-distance curve for monotonicity.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// Additive tolerance of the marginal-divergence bound.
pub const BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config_hash: String,
    pub source: String,
    pub pair: ConjugatePair,
    pub tau: f64,
    pub options: UotOptions,
    pub curve: ConvergenceCurve,
    pub monotone: bool,
    pub duality: DualityReport,
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<PathBuf> {
    let (inst, source) = match &args.instance {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let inst = parse_instance(&text).with_context(|| format!("{}", p.display()))?;
            (inst, p.display().to_string())
        }
        None => {
            let (mu, nu) = random_instance(args.atoms, args.atoms, args.dim, args.seed)?;
            (
                Instance { mu, nu },
                format!("random atoms={} dim={} seed={}", args.atoms, args.dim, args.seed),
            )
        }
    };
    let text = write_instance(&inst);
    let pair: ConjugatePair = args.pair.into();
    let opts = UotOptions {
        tol: args.tol,
        ..UotOptions::default()
    };
    let hash = hex::encode(Sha256::digest(
        format!("{text}\n{pair:?} tau={:?} alphas={:?} tol={:?}", args.tau, args.alphas, args.tol).as_bytes(),
    ));
    let dir = crate::output_dir(args.out.as_deref(), None, &format!("oracle_{}", &hash[..8]));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(INSTANCE_FILE), &text)?;

    let curve = plan_convergence_curve(&inst.mu, &inst.nu, args.tau, pair, pair, &args.alphas, &opts, BOUND_TOL)?;
    let duality = duality_report(&inst.mu, &inst.nu, args.tau, args.random_potentials, args.seed)?;
    let report = OracleReport {
        config_hash: hash,
        source,
        pair,
        tau: args.tau,
        options: opts,
        monotone: curve.is_non_increasing(MONOTONE_SLACK),
        curve,
        duality,
    };
    std::fs::write(dir.join(CURVE_FILE), serde_json::to_string_pretty(&report)?)?;
    report::plot_oracle(&dir)?;

    let c = &report.curve;
    println!("OT objective {:.10}; unique OT plan: {}", c.ot_objective, c.unique_ot_plan);
    println!("{:>10} {:>12} {:>12} {:>12} {:>12} {:>6}", "alpha", "TV", "KKT", "bound lhs", "bound rhs", "holds");
    for p in &c.points {
        println!(
            "{:>10} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>6}",
            p.alpha, p.tv_distance, p.report.kkt_residual, p.bound.lhs, p.bound.rhs, p.bound.holds
        );
    }
    let d = &report.duality;
    println!(
        "duality gap at LP potentials {:.3e}; weak-duality violations {}/{}",
        d.gap, d.weak_duality_violations, d.random_potentials
    );
    println!("outputs in {}", dir.display());

    let mut problems = Vec::new();
    if !c.unique_ot_plan {
        problems.push("the OT plan is not certified unique, so no convergence curve was computed".to_string());
    }
    for p in c.points.iter().filter(|p| !p.report.converged) {
        problems.push(format!(
            "alpha {}: solver did not converge (KKT residual {:.3e} after {} iterations)",
            p.alpha, p.report.kkt_residual, p.report.iterations
        ));
    }
    for p in c.points.iter().filter(|p| !p.bound.holds) {
        problems.push(format!("alpha {}: bound violated ({:e} > {:e})", p.alpha, p.bound.lhs, p.bound.rhs));
    }
    if !report.monotone {
        problems.push("plan distance is not non-increasing in alpha".into());
    }
    if d.weak_duality_violations > 0 {
        problems.push(format!("{} weak-duality violations", d.weak_duality_violations));
    }
    if !problems.is_empty() {
        bail!("oracle checks failed:\n  - {}", problems.join("\n  - "));
    }
    Ok(dir)
}
