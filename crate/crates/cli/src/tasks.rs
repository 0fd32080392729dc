//! Task runners. Each returns the files to write and a list of checks.

use std::fmt::Write as _;

use anyhow::{Context, Result};

use relent_core::ctmc::{
    entropy_loss_generator_form, entropy_loss_phi_form, evolve, relative_entropy, stationarity_residual, stationary, ExtReal, ProbVector,
};
use relent_core::dynamics::{
    assemble_generator, beta_tail, check_rate_conditions, detailed_balance_residual, make_cyclic, make_heat_bath,
    max_oscillation_residual, max_rate_difference, max_switching_residual, mix, reversal_regularity, time_reversal, RateFamily,
};
use relent_core::entropy::{
    boundary_constant, bulk_functionals, corrected_sequence, g_n, g_tilde_n, volume_correction, MarginalSource, MarkovSource,
    ProductSource, RatioOrientation, TruncationScheme,
};
use relent_core::gibbs::{dlr_residual, exact_gibbs, MarkovChain1d, Potential, Specification, TorusMeasure};
use relent_core::lattice::{cube_offsets, decode_into, encode, state_count, Configuration, Torus, Window};
use relent_core::montecarlo::{
    attractor_residual, ensemble_csv, ensemble_window_marginals, events_csv, gillespie_run, replica_independence_chi2, InitialLaw,
    SimulationRun,
};

use crate::config::{ConfigError, ExperimentConfig, FamilyKind, LawSpec, PotentialSource, Reference, TaskKind};

/// Largest state space on which enumerating checks run.
pub const MAX_CHECK_STATES: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// Informational rows do not affect the overall verdict.
    pub required: bool,
    pub passed: bool,
    pub value: f64,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self { name: name.into(), required: true, passed: value <= tol, value, tolerance: Some(tol), detail: String::new() }
    }

    fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), required: true, passed, value: f64::NAN, tolerance: None, detail: detail.into() }
    }

    fn info(name: &str, value: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), required: false, passed: true, value, tolerance: None, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

pub struct Model {
    pub torus: Torus,
    pub potential: Potential,
    pub spec: Specification,
    pub rates: RateFamily,
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<Model> {
    let m = &cfg.model;
    let dim = m.dims.len();
    let mut pot = match &m.potential {
        PotentialSource::File(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let p = Potential::from_json(&text).map_err(|e| ConfigError::field("model.potential", e.to_string()))?;
            if p.q != m.q || p.dim != dim {
                return Err(ConfigError::field(
                    "model.potential",
                    format!("file has q = {}, dim = {} but the model asks for q = {}, dim = {dim}", p.q, p.dim, m.q),
                )
                .into());
            }
            p
        }
        PotentialSource::Zero => Potential::zero(m.q, dim),
        PotentialSource::Ising { j, h } => Potential::ising(dim, *j, *h, 1.0),
        PotentialSource::Potts { j } => Potential::potts(m.q, dim, *j, 1.0),
    };
    if let Some(beta) = m.beta {
        pot = pot.with_beta(beta);
    }
    let torus = Torus::new(&m.dims)?;
    let spec = Specification::new(&pot, &torus)?;
    let mut rates: Option<RateFamily> = None;
    for (i, f) in cfg.dynamics.iter().enumerate() {
        let r = match &f.kind {
            FamilyKind::HeatBath => make_heat_bath(&spec)?,
            FamilyKind::Cyclic { kappa } => make_cyclic(&spec, *kappa)?,
            FamilyKind::File(path) => {
                let field = format!("dynamics.families[{i}].file");
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let r = RateFamily::from_json(&text).map_err(|e| ConfigError::field(&field, e.to_string()))?;
                if r.q != m.q || r.dim != dim {
                    return Err(ConfigError::field(&field, format!("rates have q = {}, dim = {}", r.q, r.dim)).into());
                }
                r
            }
        };
        rates = Some(match rates {
            None => mix(f.weight, &r, 0.0, &r)?,
            Some(acc) => mix(1.0, &acc, f.weight, &r)?,
        });
    }
    let rates = rates.expect("validated config has a family");
    for (k, rule) in rates.rules.iter().enumerate() {
        if let Some(i) = rule.table.iter().position(|&v| v < 0.0) {
            return Err(relent_core::Error::Contract(format!("rule {k}: negative rate {} at entry {i}", rule.table[i])).into());
        }
    }
    Ok(Model { torus, potential: pot, spec, rates })
}

pub fn run(kind: TaskKind, model: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    match kind {
        TaskKind::Check => check(model, cfg),
        TaskKind::Evolve => evolve_task(model, cfg),
        TaskKind::Entropy => entropy_task(model, cfg),
        TaskKind::Reverse => reverse_task(model, cfg),
        TaskKind::Simulate => simulate_task(model, cfg),
    }
}

fn n_states(model: &Model) -> Result<u64> {
    Ok(state_count(model.rates.q, model.torus.n_sites())?)
}

fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("check,required,passed,value,tolerance,detail\n");
    for c in checks {
        let tol = c.tolerance.map(num).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{tol},{}", c.name, c.required, c.passed, num(c.value), csv_text(&c.detail));
    }
    out
}

/// Indicator tables used by the switching check: f = 1{eta_0 = 0},
/// g = 1{sum of spins even}.
fn indicator_pair(q: usize, n: usize, states: usize) -> (Vec<f64>, Vec<f64>) {
    let mut spins = vec![0u8; n];
    let mut f = Vec::with_capacity(states);
    let mut g = Vec::with_capacity(states);
    for i in 0..states {
        decode_into(i as u64, q, &mut spins);
        f.push((spins[0] == 0) as u8 as f64);
        g.push((spins.iter().map(|&s| s as u64).sum::<u64>() % 2 == 0) as u8 as f64);
    }
    (f, g)
}

fn check(m: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let report = check_rate_conditions(&m.rates, &m.spec, &m.torus)?;
    for c in &report.conditions {
        let value = c.witness.as_ref().map_or(f64::NAN, |w| w.value);
        checks.push(Check { name: format!("condition_{}", c.name), required: true, passed: c.passed, value, tolerance: None, detail: c.detail.clone() });
    }
    let rhat = time_reversal(&m.rates, &m.spec)?;
    let twice = time_reversal(&rhat, &m.spec)?;
    checks.push(Check::at_most("reversal_involution", max_rate_difference(&m.rates, &twice)?, tol.reversal));
    let reg = reversal_regularity(&m.rates, &rhat, m.spec.delta());
    checks.push(Check::flag("reversal_regularity", reg.iter().all(|c| c.holds), format!("{} rules", reg.len())));
    let range = m.rates.range().max(rhat.range());
    checks.push(Check::at_most("beta_tail_beyond_range", beta_tail(&m.rates, &rhat, range + 1), 0.0));

    let states = n_states(m)?;
    if states <= MAX_CHECK_STATES {
        let mu = exact_gibbs(&m.potential, &m.torus)?;
        let gen = assemble_generator(&m.rates, &m.torus)?;
        checks.push(Check::at_most("gibbs_stationarity", stationarity_residual(mu.probs(), &gen)?, tol.stationarity));
        let db = detailed_balance_residual(&gen, &mu)?;
        let kind = if db <= tol.stationarity { "reversible" } else { "irreversible" };
        checks.push(Check::info("detailed_balance_residual", db, kind));
        checks.push(Check::at_most("oscillation_residual", max_oscillation_residual(&m.rates, &rhat, &m.torus)?, tol.oscillation));
        let (f, g) = indicator_pair(m.rates.q, m.torus.n_sites(), states as usize);
        checks.push(Check::at_most("switching_residual", max_switching_residual(&m.rates, &m.spec, &mu, &f, &g)?, tol.switching));
        let center = Window::new(&m.torus, vec![m.torus.center()])?;
        checks.push(Check::at_most("dlr_residual", dlr_residual(&mu, &m.spec, &center)?, tol.dlr));
    } else {
        checks.push(Check::info("enumerated_checks", states as f64, format!("skipped: {states} states exceed {MAX_CHECK_STATES}")));
    }
    Ok(TaskOutput { files: vec![("check.csv".into(), checks_csv(&checks))], checks })
}

fn torus_law(law: &LawSpec, m: &Model) -> Result<ProbVector> {
    let states = n_states(m)?;
    let q = m.rates.q;
    Ok(match law {
        LawSpec::Uniform => ProbVector::uniform(states as usize),
        LawSpec::Product(p) => TorusMeasure::product(&m.torus, p)?.probs().clone(),
        LawSpec::Gibbs { beta } => exact_gibbs(&m.potential.with_beta(*beta), &m.torus)?.probs().clone(),
        LawSpec::Point(spins) => ProbVector::point(states as usize, encode(spins, q)? as usize),
        LawSpec::Markov(_) => unreachable!("rejected by validation"),
    })
}

fn ext(x: ExtReal) -> String {
    match x {
        ExtReal::Finite(v) => num(v),
        other => other.to_string(),
    }
}

fn evolve_task(m: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    let tol = &cfg.tolerances;
    let gen = assemble_generator(&m.rates, &m.torus)?;
    let gibbs = exact_gibbs(&m.potential, &m.torus)?;
    let mut checks = Vec::new();
    let mu = if stationarity_residual(gibbs.probs(), &gen)? <= tol.stationarity {
        checks.push(Check::info("reference", 0.0, "Gibbs measure of the specification"));
        gibbs.probs().clone()
    } else {
        checks.push(Check::info("reference", 1.0, "Gibbs measure not stationary; using the generator's stationary law"));
        stationary(&gen)?
    };
    let mut nu = torus_law(&cfg.task.initial, m)?;
    let mut now = 0.0;
    let mut csv = String::from("t,relative_entropy,loss_generator,loss_phi,l1_to_mu\n");
    let (mut worst_step, mut worst_loss, mut worst_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut last: Option<f64> = None;
    for &t in &cfg.task.times {
        nu = evolve(&nu, &gen, t - now)?;
        now = t;
        let h = relative_entropy(&nu, &mu)?;
        let a = entropy_loss_generator_form(&nu, &mu, &gen)?;
        let b = entropy_loss_phi_form(&nu, &mu, &gen)?;
        let _ = writeln!(csv, "{},{},{},{},{}", num(t), ext(h), ext(a), ext(b), num(nu.l1_distance(&mu)));
        let hv = h.to_f64();
        if let Some(prev) = last {
            worst_step = worst_step.max(hv - prev);
        }
        last = Some(hv);
        if let (ExtReal::Finite(x), ExtReal::Finite(y)) = (a, b) {
            worst_loss = worst_loss.max(x);
            let scale = (tol.lyapunov_rel * x.abs().max(y.abs())).max(tol.lyapunov_abs);
            worst_gap = worst_gap.max((x - y).abs() / scale);
        } else if a != b {
            worst_gap = f64::INFINITY;
        }
    }
    if cfg.task.times.len() > 1 {
        checks.push(Check::at_most("entropy_nonincreasing", worst_step, tol.monotone));
    }
    if worst_loss > f64::NEG_INFINITY {
        checks.push(Check::at_most("loss_nonpositive", worst_loss, tol.identity));
    }
    checks.push(Check { detail: "scaled by max(rel * |g|, abs)".into(), ..Check::at_most("loss_forms_agree", worst_gap, 1.0) });
    Ok(TaskOutput { files: vec![("evolve.csv".into(), csv)], checks })
}

fn entropy_task(m: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    let tol = &cfg.tolerances;
    let q = m.rates.q;
    let d = m.torus.dim();
    let exact = match cfg.task.reference {
        Reference::Exact => true,
        Reference::Markov => false,
        Reference::Auto => n_states(m).is_ok_and(|s| s <= MAX_CHECK_STATES),
    };
    let chain = |pot: &Potential| -> Result<MarkovSource> { Ok(MarkovSource::new(MarkovChain1d::from_potential(pot)?, &m.torus)?) };
    let mu: Box<dyn MarginalSource> = if exact { Box::new(exact_gibbs(&m.potential, &m.torus)?) } else { Box::new(chain(&m.potential)?) };
    let nu: Box<dyn MarginalSource> = match cfg.task.nu.as_ref().expect("validated") {
        LawSpec::Uniform => Box::new(ProductSource::new(vec![1.0 / q as f64; q])?),
        LawSpec::Product(p) => Box::new(ProductSource::new(p.clone())?),
        LawSpec::Gibbs { beta } if exact => Box::new(exact_gibbs(&m.potential.with_beta(*beta), &m.torus)?),
        LawSpec::Gibbs { beta } => Box::new(chain(&m.potential.with_beta(*beta))?),
        LawSpec::Markov(p) => Box::new(MarkovSource::new(MarkovChain1d::from_transition(q, p.clone())?, &m.torus)?),
        LawSpec::Point(_) => unreachable!("rejected by validation"),
    };
    let scheme = TruncationScheme::new(&m.torus);
    let c = match (mu.single_site_delta(), nu.single_site_delta()) {
        (Some(a), Some(b)) => Some(boundary_constant(&m.rates, a, b)),
        _ => None,
    };
    let mut csv = String::from("n,lambda,lambda_tilde,boundary,g,g_tilde,s,big_s,key_residual,s_max_term,boundary_bound,volume_correction\n");
    let mut s_values = Vec::new();
    let mut ledger = Vec::new();
    let (mut boundary_ok, mut max_term, mut max_s) = (true, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for n in 1..=cfg.task.n_max {
        let lam = scheme.lambda(n)?.len();
        let lam_t = scheme.lambda_tilde(n)?.len();
        let boundary = scheme.boundary_size(n)?;
        let g = g_n(&m.rates, nu.as_ref(), mu.as_ref(), &scheme, n)?;
        let gt = g_tilde_n(&m.rates, nu.as_ref(), mu.as_ref(), &scheme, n)?;
        let bulk = bulk_functionals(&m.rates, &m.spec, nu.as_ref(), mu.as_ref(), &scheme, n, RatioOrientation::KeyEquality)?;
        let bound = c.map_or(f64::NAN, |c| c * boundary as f64);
        if let (ExtReal::Finite(a), ExtReal::Finite(b)) = (g, gt) {
            boundary_ok &= (a - b).abs() <= bound || bound.is_nan();
        }
        max_term = max_term.max(bulk.s.max_term);
        max_s = max_s.max(bulk.s.value.to_f64());
        ledger.push((gt.to_f64() - bulk.big_s.value.to_f64()).abs() / lam as f64);
        let _ = writeln!(
            csv,
            "{n},{lam},{lam_t},{boundary},{},{},{},{},{},{},{},{}",
            ext(g),
            ext(gt),
            ext(bulk.s.value),
            ext(bulk.big_s.value),
            num(bulk.key_residual),
            num(bulk.s.max_term),
            num(bound),
            num(volume_correction(n, d))
        );
        s_values.push(bulk.s.value);
    }
    let mut checks = vec![
        Check::at_most("s_nonpositive", max_s, tol.identity),
        Check::at_most("s_termwise_nonpositive", max_term, tol.identity),
        Check::flag("boundary_order", boundary_ok, c.map_or("no non-nullness constant".into(), |c| format!("C = {}", num(c)))),
    ];
    let mut files = vec![("entropy.csv".to_string(), csv)];
    if s_values.len() >= 2 {
        let cs = corrected_sequence(&s_values, 1, d, tol.sequence)?;
        let mut seq_csv = String::from("n,volume_correction,corrected_per_site\n");
        for (k, (g, v)) in cs.g.iter().zip(&cs.values).enumerate() {
            let _ = writeln!(seq_csv, "{},{},{}", k + cs.first_n, num(*g), num(*v));
        }
        checks.push(Check::flag("corrected_nonincreasing", cs.nonincreasing, ""));
        files.push(("corrected.csv".into(), seq_csv));
    }
    if d == 1 {
        let v: Vec<f64> = s_values.iter().map(|x| x.to_f64()).collect();
        let ok = v.windows(2).all(|w| w[1] <= 2.0 * w[0] + tol.sequence);
        checks.push(Check::flag("growth_bound", ok, "s_n <= 2 s_(n-1)"));
    }
    let ledger_ok = ledger.windows(2).all(|w| w[1] <= w[0] + tol.sequence);
    checks.push(Check::info("ledger_nonincreasing", ledger.last().copied().unwrap_or(0.0), if ledger_ok { "yes" } else { "no" }));
    Ok(TaskOutput { files, checks })
}

fn reverse_task(m: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    let tol = &cfg.tolerances;
    let rhat = time_reversal(&m.rates, &m.spec)?;
    let json = rhat.to_json()?;
    let reloaded = RateFamily::from_json(&json)?;
    let mut checks = vec![Check::flag("json_roundtrip", reloaded == rhat, "")];
    let twice = time_reversal(&reloaded, &m.spec)?;
    checks.push(Check::at_most("reversal_involution", max_rate_difference(&m.rates, &twice)?, tol.reversal));
    let reg = reversal_regularity(&m.rates, &rhat, m.spec.delta());
    let mut reg_csv = String::from("rule,chat_norm,bound,holds\n");
    for c in &reg {
        let _ = writeln!(reg_csv, "{},{},{},{}", c.rule, num(c.chat_norm), num(c.bound), c.holds);
    }
    checks.push(Check::flag("reversal_regularity", reg.iter().all(|c| c.holds), ""));
    let range = m.rates.range().max(rhat.range());
    let mut tail_csv = String::from("n,beta_tail\n");
    for n in 0..=range + 2 {
        let _ = writeln!(tail_csv, "{n},{}", num(beta_tail(&m.rates, &rhat, n)));
    }
    checks.push(Check::at_most("beta_tail_beyond_range", beta_tail(&m.rates, &rhat, range + 1), 0.0));
    if n_states(m)? <= MAX_CHECK_STATES {
        let mu = exact_gibbs(&m.potential, &m.torus)?;
        let gen = assemble_generator(&rhat, &m.torus)?;
        checks.push(Check::at_most("reversed_stationarity", stationarity_residual(mu.probs(), &gen)?, tol.stationarity));
    }
    Ok(TaskOutput {
        files: vec![("reversed.json".into(), json), ("regularity.csv".into(), reg_csv), ("beta_tail.csv".into(), tail_csv)],
        checks,
    })
}

fn simulate_task(m: &Model, cfg: &ExperimentConfig) -> Result<TaskOutput> {
    let t = &cfg.task;
    let d = m.torus.dim();
    let q = m.rates.q;
    let initial = match &t.initial {
        LawSpec::Uniform => InitialLaw::Product(vec![1.0 / q as f64; q]),
        LawSpec::Product(p) => InitialLaw::Product(p.clone()),
        LawSpec::Gibbs { beta } => InitialLaw::Exact(exact_gibbs(&m.potential.with_beta(*beta), &m.torus)?.probs().clone()),
        LawSpec::Point(s) => InitialLaw::Point(Configuration::new(s.clone(), q)?),
        LawSpec::Markov(_) => unreachable!("rejected by validation"),
    };
    let run = SimulationRun {
        rates: m.rates.clone(),
        torus: m.torus.clone(),
        initial,
        horizon: t.horizon,
        replicas: t.replicas,
        seed: cfg.seed,
        log_events: t.log_events,
    };
    let window = if t.window.is_empty() { cube_offsets(d, 1) } else { t.window.clone() };
    let anchor = t.anchor.unwrap_or_else(|| m.torus.center());
    let ens = ensemble_window_marginals(&run, &window, anchor, &t.times, t.pool)?;
    let mut csv = String::from("t,samples,residual\n");
    let mut res = Vec::new();
    for mg in &ens.marginals {
        let r = attractor_residual(mg, &m.spec).unwrap_or(f64::NAN);
        let _ = writeln!(csv, "{},{},{}", num(mg.t), mg.samples(), num(r));
        res.push(r);
    }
    let mut checks = vec![Check::info("absorbed_replicas", ens.absorbed as f64, "")];
    if res.len() >= 2 && res[0] > 0.0 && res.iter().all(|r| r.is_finite()) {
        checks.push(Check::at_most("attractor_ratio", res[res.len() - 1] / res[0], cfg.tolerances.attractor_ratio));
    } else {
        checks.push(Check::info("attractor_ratio", f64::NAN, "not enough data for a ratio"));
    }
    if let Ok(chi2) = replica_independence_chi2(&ens.events) {
        checks.push(Check::at_most("replica_independence_chi2", chi2, 6.635));
    }
    let mut files = vec![("attractor.csv".into(), csv), ("marginals.csv".into(), ensemble_csv(&ens.marginals))];
    if t.log_events {
        let eta0 = run.initial.sample(&run.torus, q, &mut run.replica_rng(0))?;
        let traj = gillespie_run(&run, &eta0)?;
        files.push(("events.csv".into(), events_csv(traj.events.as_deref().unwrap_or(&[]))));
    }
    Ok(TaskOutput { files, checks })
}
