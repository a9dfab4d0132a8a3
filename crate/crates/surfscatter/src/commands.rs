//! Subcommands.  Each renders its artifacts in memory and reports whether
//! its own checks held.

use std::fmt::Write as _;

use surfscatter_core::horseshoe::{ConeConfig, HorseshoeConfig, MapConfig, ShadowConfig};
use surfscatter_core::inner::{inner_constants, InnerConfig, InnerProblem};
use surfscatter_core::integrate::IntegratorConfig;
use surfscatter_core::manifolds::{fit_scaling, measure_splitting, splitting_run, GlobalizeConfig, HjConfig, SplittingSample};
use surfscatter_core::separatrix::{melnikov_coeff_closed, melnikov_coeff_quadrature};

use crate::acceptance::{HorseshoeContext, Suite};
use crate::config::ExperimentSpec;
use crate::output::{svg_polyline, Artifact, Cell, Csv};

/// Artifacts of a finished run and whether its checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub pass: bool,
    /// Lines printed to stdout.
    pub log: Vec<String>,
}

pub type CommandResult = Result<RunOutput, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn melnikov(spec: &ExperimentSpec) -> CommandResult {
    let series = &spec.physical.corrugation;
    let mut csv = Csv::new(&["k", "nuI0", "closed_re", "closed_im", "quad_re", "quad_im", "rel_err"]);
    let mut worst: f64 = 0.0;
    for k in 1..=spec.kmax as i64 {
        for &nu_i0 in &spec.nu_i0 {
            let c = melnikov_coeff_closed(k, nu_i0, series).value;
            let q = melnikov_coeff_quadrature(k, nu_i0, series, spec.tol).map_err(err)?.value;
            let e = (c - q).norm() / c.norm();
            worst = worst.max(e);
            csv.row(&[Cell::I(k), Cell::F(nu_i0), Cell::F(c.re), Cell::F(c.im), Cell::F(q.re), Cell::F(q.im), Cell::F(e)]);
        }
    }
    Ok(RunOutput { artifacts: vec![csv.finish("melnikov.csv")], pass: true, log: vec![format!("largest closed/quadrature relative difference {worst:.3e}")] })
}

fn manifold_configs(spec: &ExperimentSpec) -> (HjConfig, GlobalizeConfig) {
    (HjConfig { modes: spec.modes, tol: spec.tol, ..HjConfig::default() }, GlobalizeConfig::default())
}

fn samples(spec: &ExperimentSpec, nu_i0: f64, epsilon: f64) -> Result<Vec<SplittingSample>, String> {
    let params = spec.params(nu_i0, epsilon).map_err(err)?;
    let (hj, glob) = manifold_configs(spec);
    let run = splitting_run(&params, &[1.0], &hj, &glob).map_err(err)?;
    (1..=spec.kmax).map(|k| measure_splitting(&run.unstable, &run.stable, 1.0, k, epsilon).map_err(err)).collect()
}

pub fn splitting(spec: &ExperimentSpec) -> CommandResult {
    let mut csv = Csv::new(&["nuI0", "epsilon", "u", "k", "ampJ", "phaseJ", "ampP", "phaseP", "noise_floor"]);
    for &nu_i0 in &spec.nu_i0 {
        for &eps in &spec.epsilon {
            for s in samples(spec, nu_i0, eps)? {
                csv.row(&[
                    Cell::F(nu_i0),
                    Cell::F(s.epsilon),
                    Cell::F(s.u),
                    Cell::I(s.k as i64),
                    Cell::F(s.amp_j),
                    Cell::F(s.phase_j),
                    Cell::F(s.amp_p),
                    Cell::F(s.phase_p),
                    Cell::F(s.noise_floor),
                ]);
            }
        }
    }
    Ok(RunOutput { artifacts: vec![csv.finish("splitting.csv")], pass: true, log: vec![] })
}

pub fn sweep(spec: &ExperimentSpec) -> CommandResult {
    let eps = spec.epsilon[0];
    let mut first = Vec::with_capacity(spec.nu_i0.len());
    for &nu_i0 in &spec.nu_i0 {
        let s = samples(&ExperimentSpec { kmax: 1, ..spec.clone() }, nu_i0, eps)?;
        // Report the requested νI₀ rather than its round trip through I₀.
        first.push(SplittingSample { nu_i0, ..s[0] });
    }
    let fit = fit_scaling(&first).ok_or("the scaling fit needs at least 4 distinct nuI0 values")?;
    let mut csv = Csv::new(&["nuI0", "amp", "rho_fit", "sigma_fit"]);
    for s in &first {
        csv.row(&[Cell::F(s.nu_i0), Cell::F(s.amp_j), Cell::F(fit.rho), Cell::F(fit.sigma)]);
    }
    let log = vec![format!("rho = {:.6} ± {:.2e}, sigma = {:.6} ± {:.2e}", fit.rho, fit.rho_err, fit.sigma, fit.sigma_err)];
    Ok(RunOutput { artifacts: vec![csv.finish("sweep.csv")], pass: true, log })
}

pub fn inner(spec: &ExperimentSpec) -> CommandResult {
    let cfg = InnerConfig { modes: spec.modes.max(spec.kmax), ..InnerConfig::default() };
    let nu = spec.physical.nu();
    let mut csv = Csv::new(&["epsilon", "k", "f_re", "f_im", "err_est", "theta_V", "residual"]);
    let mut log = Vec::new();
    for &eps in &spec.epsilon {
        let d = inner_constants(&InnerProblem::new(nu, spec.physical.corrugation.scaled(eps)), &cfg, spec.kmax as i64).map_err(err)?;
        for e in &d.estimates {
            csv.row(&[Cell::F(eps), Cell::I(e.k), Cell::F(e.value.re), Cell::F(e.value.im), Cell::F(e.err), Cell::F(d.theta_v), Cell::F(d.residual)]);
            if !e.converged {
                log.push(format!("epsilon={eps:e}: f_{} did not settle over the depths", e.k));
            }
        }
    }
    Ok(RunOutput { artifacts: vec![csv.finish("inner.csv")], pass: true, log })
}

fn horseshoe_config(spec: &ExperimentSpec) -> Result<HorseshoeConfig, String> {
    let integrator = IntegratorConfig::new(spec.tol, 1e-15).map_err(err)?.with_max_step(0.5);
    Ok(HorseshoeConfig { candidates: spec.nu_i0.clone(), map: MapConfig { integrator, ..MapConfig::default() }, ..HorseshoeConfig::default() })
}

pub fn horseshoe(spec: &ExperimentSpec) -> CommandResult {
    let ctx = HorseshoeContext::build(spec.physical.clone(), &horseshoe_config(spec)?, 4).map_err(err)?;
    let cones = ctx.hs.verify_cones(&ctx.family, &ConeConfig::default()).map_err(err)?;
    let it = ctx.hs.shadow_orbit(&ctx.family, &[2, 3, 2], &ShadowConfig::default()).map_err(err)?;
    let op = &ctx.op;
    let f = &ctx.family;

    let mut report = String::new();
    let _ = writeln!(report, "operating point nuI0 = {}", op.nu_i0);
    let _ = writeln!(report, "splitting amplitude = {:.6e}, noise = {:.3e}, ratio = {:.3e}", op.amplitude, op.noise, op.ratio);
    let _ = writeln!(report, "delta/amplitude = {:.4}, edge expansion = {:.4e}", op.delta_ratio, op.edge_expansion);
    for (nu, why) in &op.rejected {
        let _ = writeln!(report, "rejected nuI0 = {nu}: {why:?}");
    }
    let _ = writeln!(report, "strips = {}, base count = {}, disjoint = {}, monotone = {}", f.strips.len(), f.base_count, f.disjoint, f.monotone);
    let _ = writeln!(report, "mu_h = {:.4e}, mu_v = {:.4e}, mu_h*mu_v = {:.4e}", f.mu_h, f.mu_v, f.mu_h * f.mu_v);
    let _ = writeln!(
        report,
        "cones: eta_u = {}, eta_s = {}, kappa = {:.4e}, pass rate = {:.4} over {} samples, richardson max = {:.3e}, expansion min = {:.4e}",
        cones.eta_u,
        cones.eta_s,
        cones.kappa,
        cones.pass_rate,
        cones.samples.len(),
        cones.richardson_max,
        cones.expansion_min
    );
    for (eta, rate) in &cones.eta_scan {
        let _ = writeln!(report, "  eta = {eta}: pass rate {rate:.4}");
    }
    let _ = writeln!(report, "itinerary requested {:?}, achieved {:?}, counts {:?}", it.requested, it.achieved, it.counts);
    let pass = f.disjoint && cones.passes(0.95) && it.exact();
    let _ = writeln!(report, "result = {}", if pass { "PASS" } else { "FAIL" });

    let mut cone_csv = Csv::new(&["symbol", "xi", "tau", "j11", "j12", "j21", "j22", "richardson", "expansion", "pass"]);
    for s in &cones.samples {
        let j = s.jacobian;
        cone_csv.row(&[
            Cell::I(s.symbol as i64),
            Cell::F(s.xi),
            Cell::F(s.tau),
            Cell::F(j[0][0]),
            Cell::F(j[0][1]),
            Cell::F(j[1][0]),
            Cell::F(j[1][1]),
            Cell::F(s.richardson),
            Cell::F(s.expansion),
            Cell::I(s.pass as i64),
        ]);
    }
    let mut strip_csv = Csv::new(&["symbol", "count", "xi", "tau_low", "tau_high"]);
    for s in &f.strips {
        for &(xi, lo, hi) in &s.vertical {
            strip_csv.row(&[Cell::I(s.symbol as i64), Cell::I(s.count), Cell::F(xi), Cell::F(lo), Cell::F(hi)]);
        }
    }
    let log = report.lines().map(String::from).collect();
    Ok(RunOutput { artifacts: vec![Artifact::new("report.txt", report), cone_csv.finish("cones.csv"), strip_csv.finish("strips.csv")], pass, log })
}

pub fn oscillate(spec: &ExperimentSpec) -> CommandResult {
    // Symbols 1..=k need a window of at least k strips.
    let ctx = HorseshoeContext::build(spec.physical.clone(), &horseshoe_config(spec)?, spec.k.max(4)).map_err(err)?;
    let r = ctx.oscillation(spec.k, spec.z_return).map_err(err)?;
    let mut csv = Csv::new(&["t", "x", "z", "px", "pz"]);
    for (t, c) in &r.samples {
        csv.row(&[Cell::F(*t), Cell::F(c.x), Cell::F(c.z), Cell::F(c.px), Cell::F(c.pz)]);
    }
    let z: Vec<(f64, f64)> = r.samples.iter().map(|(t, c)| (*t, c.z)).collect();
    let svg = svg_polyline(&z, "t", "z");
    let maxima: Vec<String> = r.maxima.iter().map(|m| format!("{:.4}", m.1)).collect();
    let log = vec![
        format!("operating point nuI0 = {}", ctx.op.nu_i0),
        format!("z maxima: {}", maxima.join(", ")),
        format!("increasing = {}, returns below zret = {} after each maximum: {}", r.increasing, spec.z_return, r.returns),
    ];
    Ok(RunOutput { artifacts: vec![csv.finish("orbit.csv"), Artifact::new("orbit.svg", svg)], pass: r.passes(spec.k), log })
}

pub fn verify_all(_spec: &ExperimentSpec) -> CommandResult {
    let suite = Suite::new();
    let mut text = String::new();
    let outcomes = suite.run_all(|o| {
        println!("{}", o.line());
        let _ = writeln!(text, "{}", o.line());
    });
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let _ = writeln!(text, "{passed}/{} criteria passed", outcomes.len());
    Ok(RunOutput { artifacts: vec![Artifact::new("acceptance.txt", text)], pass: passed == outcomes.len(), log: vec![format!("{passed}/{} criteria passed", outcomes.len())] })
}

pub fn dispatch(spec: &ExperimentSpec) -> CommandResult {
    match spec.command.as_str() {
        "melnikov" => melnikov(spec),
        "splitting" => splitting(spec),
        "sweep" => sweep(spec),
        "inner" => inner(spec),
        "horseshoe" => horseshoe(spec),
        "oscillate" => oscillate(spec),
        "verify-all" => verify_all(spec),
        other => Err(format!("unknown subcommand {other}")),
    }
}
