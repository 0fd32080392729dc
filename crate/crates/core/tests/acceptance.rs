//! Acceptance suite. One test per criterion; each prints a single
//! `criterion N: PASS|FAIL ...` line and then asserts.
//!
//! Run with `cargo test -p relent-core --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relent_core::ctmc::{
    entropy_loss_generator_form, entropy_loss_phi_form, evolve, relative_entropy, stationarity_residual, stationary, ExtReal, ProbVector,
};
use relent_core::dynamics::{
    assemble_generator, beta_tail, detailed_balance_residual, make_cyclic, make_heat_bath, max_oscillation_residual, max_rate_difference,
    max_switching_residual, mix, modulate_speed, time_reversal, RateFamily, SparseGenerator,
};
use relent_core::entropy::{
    boundary_constant, bulk_functionals, corrected_sequence, g_n, g_tilde_n, one_sided_boundary_constant, MarginalSource, MarkovSource,
    ProductSource, RatioOrientation, TruncationScheme,
};
use relent_core::gibbs::{
    beta_mixing_bound, dlr_residual, exact_gibbs, log_ratio_bound_check, MarkovChain1d, Potential, Specification, Term, TorusMeasure,
};
use relent_core::lattice::{decode_into, Configuration, Torus, Window};
use relent_core::montecarlo::{attractor_residual, ensemble_window_marginals, replica_independence_chi2, InitialLaw, SimulationRun, Simulator};

// criterion 1
const LYAP_SIGN_TOL: f64 = 1e-12;
const LYAP_REL_TOL: f64 = 1e-10;
const LYAP_ABS_FLOOR: f64 = 1e-13;
const LYAP_ZERO: f64 = 1e-9;
const LYAP_L1: f64 = 1e-4;
// criterion 2
const EXPM_TOL: f64 = 1e-8;
const SEMIGROUP_TOL: f64 = 1e-10;
// criterion 3
const MONOTONE_TOL: f64 = 1e-10;
// criterion 4
const STATIONARY_TOL: f64 = 1e-10;
const IRREVERSIBLE_MIN: f64 = 1e-2;
// criterion 5
const SWITCHING_TOL: f64 = 1e-10;
// criterion 6
const REVERSAL_TOL: f64 = 1e-12;
// criterion 7
const OSCILLATION_TOL: f64 = 1e-10;
const OSCILLATION_CONTROL_MIN: f64 = 1e-3;
// criterion 8
const IDENTITY_TOL: f64 = 1e-12;
const TERM_TOL: f64 = 1e-14;
const SEQUENCE_TOL: f64 = 1e-12;
// criterion 9
const LEDGER_TOL: f64 = 1e-12;
// criterion 10
const ZERO_LOSS_GAP: f64 = 1e-4;
// criterion 11
const ATTRACTOR_RATIO: f64 = 0.2;
const TREND_SLACK: f64 = 0.10;
const CHI2_CRIT: f64 = 6.635;
const OCCUPATION_TV: f64 = 0.02;
// criterion 12
const DLR_TOL: f64 = 1e-12;
const MIXING_TOL: f64 = 1e-15;

fn report(n: usize, pass: bool, detail: &str, started: Instant, budget: Duration) {
    let took = started.elapsed();
    let pass = pass && took <= budget;
    println!(
        "criterion {n}: {} {detail} [{:.2}s / {}s]",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

fn ising_line(beta: f64, n: usize) -> (Torus, Specification, Potential) {
    let t = Torus::line(n).unwrap();
    let pot = Potential::ising(1, 1.0, 0.0, beta);
    (t.clone(), Specification::new(&pot, &t).unwrap(), pot)
}

fn potts_line(beta: f64, n: usize) -> (Torus, Specification, Potential) {
    let t = Torus::line(n).unwrap();
    let pot = Potential::potts(3, 1, 1.0, beta);
    (t.clone(), Specification::new(&pot, &t).unwrap(), pot)
}

fn next_nearest(beta: f64) -> Potential {
    Potential::new(
        2,
        1,
        beta,
        vec![
            Term { shape: vec![vec![0], vec![1]], table: vec![-1.0, 1.0, 1.0, -1.0] },
            Term { shape: vec![vec![0], vec![2]], table: vec![0.6, -0.6, -0.6, 0.6] },
        ],
    )
    .unwrap()
}

fn random_law(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0f64).powi(2)).collect();
    ProbVector::from_weights(w).unwrap()
}

fn close(a: ExtReal, b: ExtReal) -> bool {
    match (a, b) {
        (ExtReal::Finite(x), ExtReal::Finite(y)) => (x - y).abs() <= (LYAP_REL_TOL * x.abs().max(y.abs())).max(LYAP_ABS_FLOOR),
        (x, y) => x == y,
    }
}

fn random_irreducible(rng: &mut ChaCha8Rng, n: usize) -> SparseGenerator {
    loop {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.6) {
                    m[i * n + j] = rng.gen_range(0.1..2.0);
                }
            }
        }
        let g = SparseGenerator::from_dense(n, &m).unwrap();
        if g.is_irreducible() {
            return g;
        }
    }
}

#[test]
fn criterion_01_lyapunov_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_sign, mut mismatches, mut implication_fail, mut neg_inf) = (f64::NEG_INFINITY, 0usize, 0usize, 0usize);
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let gen = random_irreducible(&mut rng, n);
        let mu = stationary(&gen).unwrap();
        for k in 0..100 {
            let nu = match k % 10 {
                0 => mu.clone(),
                1..=3 => {
                    let eps = [1e-2, 1e-5, 1e-8][k % 10 - 1];
                    let w: Vec<f64> = mu.as_slice().iter().map(|&m| m * (1.0 + eps * rng.gen_range(-1.0..1.0))).collect();
                    ProbVector::from_weights(w).unwrap()
                }
                4 => {
                    let mut w = random_law(&mut rng, n).into_vec();
                    w[rng.gen_range(0..n)] = 0.0;
                    ProbVector::from_weights(w).unwrap()
                }
                _ => random_law(&mut rng, n),
            };
            let a = entropy_loss_generator_form(&nu, &mu, &gen).unwrap();
            let b = entropy_loss_phi_form(&nu, &mu, &gen).unwrap();
            if !close(a, b) {
                mismatches += 1;
            }
            match a {
                ExtReal::Finite(g) => {
                    worst_sign = worst_sign.max(g);
                    if g.abs() < LYAP_ZERO && nu.l1_distance(&mu) >= LYAP_L1 {
                        implication_fail += 1;
                    }
                }
                ExtReal::NegInf => neg_inf += 1,
                ExtReal::PosInf => worst_sign = f64::INFINITY,
            }
        }
    }
    let pass = worst_sign <= LYAP_SIGN_TOL && mismatches == 0 && implication_fail == 0;
    report(
        1,
        pass,
        &format!("max g = {worst_sign:.3e}, form mismatches = {mismatches}, zero-loss violations = {implication_fail}, -inf cases = {neg_inf}"),
        start,
        Duration::from_secs(10),
    );
}

fn dense_evolve(nu: &ProbVector, gen: &SparseGenerator, t: f64) -> Vec<f64> {
    let n = gen.dim();
    let l = DMatrix::from_row_slice(n, n, &gen.to_dense());
    let p = (l * t).exp();
    let v = DVector::from_column_slice(nu.as_slice());
    (p.transpose() * v).iter().copied().collect()
}

#[test]
fn criterion_02_evolution_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gens: Vec<SparseGenerator> = [2usize, 3, 5, 8, 17, 40, 100].iter().map(|&n| random_irreducible(&mut rng, n)).collect();
    let (t9, s9, _) = ising_line(0.5, 9);
    gens.push(assemble_generator(&make_heat_bath(&s9).unwrap(), &t9).unwrap());
    let (t5, s5, _) = potts_line(0.5, 5);
    gens.push(assemble_generator(&mix(1.0, &make_heat_bath(&s5).unwrap(), 1.0, &make_cyclic(&s5, 1.0).unwrap()).unwrap(), &t5).unwrap());
    let (mut expm_err, mut semi_err) = (0.0f64, 0.0f64);
    for gen in &gens {
        let nu = random_law(&mut rng, gen.dim());
        for &t in &[0.05, 0.7, 3.0] {
            let a = evolve(&nu, gen, t).unwrap();
            let b = dense_evolve(&nu, gen, t);
            expm_err = expm_err.max(a.as_slice().iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
        let (s, t) = (0.4, 1.1);
        let two = evolve(&evolve(&nu, gen, s).unwrap(), gen, t).unwrap();
        let one = evolve(&nu, gen, s + t).unwrap();
        semi_err = semi_err.max(two.l1_distance(&one));
    }
    let sizes: Vec<usize> = gens.iter().map(|g| g.dim()).collect();
    report(
        2,
        expm_err < EXPM_TOL && semi_err < SEMIGROUP_TOL,
        &format!("sizes {sizes:?}: max |uniformization - expm| = {expm_err:.3e}, semigroup L1 = {semi_err:.3e}"),
        start,
        Duration::from_secs(30),
    );
}

fn entropy_path(rates: &RateFamily, torus: &Torus, mu: &TorusMeasure, nu0: ProbVector, dt: f64, points: usize) -> Vec<f64> {
    let gen = assemble_generator(rates, torus).unwrap();
    let mut nu = nu0;
    let mut h = Vec::with_capacity(points);
    for k in 0..points {
        if k > 0 {
            nu = evolve(&nu, &gen, dt).unwrap();
        }
        h.push(relative_entropy(&nu, mu.probs()).unwrap().to_f64());
    }
    h
}

#[test]
fn criterion_03_entropy_monotonicity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t1, s1, p1) = ising_line(0.6, 10);
    let mu1 = exact_gibbs(&p1, &t1).unwrap();
    let h1 = entropy_path(&make_heat_bath(&s1).unwrap(), &t1, &mu1, random_law(&mut rng, 1 << 10), 0.1, 50);
    let (t2, s2, p2) = potts_line(0.7, 6);
    let mu2 = exact_gibbs(&p2, &t2).unwrap();
    let h2 = entropy_path(&make_cyclic(&s2, 1.0).unwrap(), &t2, &mu2, random_law(&mut rng, 729), 0.1, 50);
    let worst = |h: &[f64]| h.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let (w1, w2) = (worst(&h1), worst(&h2));
    report(
        3,
        w1 <= MONOTONE_TOL && w2 <= MONOTONE_TOL && h1.iter().chain(&h2).all(|v| v.is_finite()),
        &format!(
            "heat-bath h {:.4} -> {:.4} (max step {w1:.2e}); cyclic h {:.4} -> {:.4} (max step {w2:.2e})",
            h1[0], h1[49], h2[0], h2[49]
        ),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_04_stationary_irreversible() {
    let start = Instant::now();
    let (t, s, p) = potts_line(0.5, 5);
    let mu = exact_gibbs(&p, &t).unwrap();
    let gen = assemble_generator(&make_cyclic(&s, 1.0).unwrap(), &t).unwrap();
    let st = stationarity_residual(mu.probs(), &gen).unwrap();
    let db = detailed_balance_residual(&gen, &mu).unwrap();
    report(
        4,
        st < STATIONARY_TOL && db > IRREVERSIBLE_MIN,
        &format!("stationarity residual {st:.3e}, detailed-balance residual {db:.3e}"),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_05_switching_lemma() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, s, p) = potts_line(0.5, 5);
    let mu = exact_gibbs(&p, &t).unwrap();
    let cyc = make_cyclic(&s, 1.0).unwrap();
    let mixed = mix(1.0, &make_heat_bath(&s).unwrap(), 0.7, &cyc).unwrap();
    let states = mu.n_states();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f: Vec<f64> = (0..states).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        let g: Vec<f64> = (0..states).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
        for rates in [&cyc, &mixed] {
            worst = worst.max(max_switching_residual(rates, &s, &mu, &f, &g).unwrap());
        }
    }
    report(
        5,
        worst < SWITCHING_TOL,
        &format!("max switching residual {worst:.3e} over 50 indicator pairs, cyclic and mixture"),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_06_reversal_algebra() {
    let start = Instant::now();
    let mut worst_fixed = 0.0f64;
    let (_, s1, _) = ising_line(0.8, 7);
    let hb1 = make_heat_bath(&s1).unwrap();
    worst_fixed = worst_fixed.max(max_rate_difference(&time_reversal(&hb1, &s1).unwrap(), &hb1).unwrap());
    let t2 = Torus::new(&[4, 4]).unwrap();
    let s2 = Specification::new(&Potential::ising(2, 1.0, 0.2, 0.4), &t2).unwrap();
    let hb2 = make_heat_bath(&s2).unwrap();
    worst_fixed = worst_fixed.max(max_rate_difference(&time_reversal(&hb2, &s2).unwrap(), &hb2).unwrap());
    let s3 = Specification::new(&next_nearest(0.5), &Torus::line(9).unwrap()).unwrap();
    let hb3 = make_heat_bath(&s3).unwrap();
    worst_fixed = worst_fixed.max(max_rate_difference(&time_reversal(&hb3, &s3).unwrap(), &hb3).unwrap());

    let kappa = 0.8;
    let (_, s, _) = potts_line(1.0, 5);
    let cyc = make_cyclic(&s, kappa).unwrap();
    let hb = make_heat_bath(&s).unwrap();
    let mixed = mix(1.0, &hb, 2.0, &cyc).unwrap();
    let modulated = modulate_speed(&hb, &[vec![-1], vec![1]], &(0..9).map(|k| 1.0 + k as f64 * 0.25).collect::<Vec<_>>()).unwrap();
    let mut worst_inv = 0.0f64;
    for r in [&cyc, &mixed, &modulated, &hb1] {
        let sp = if std::ptr::eq(r, &hb1) { &s1 } else { &s };
        let twice = time_reversal(&time_reversal(r, sp).unwrap(), sp).unwrap();
        worst_inv = worst_inv.max(max_rate_difference(r, &twice).unwrap());
    }

    let rev = time_reversal(&cyc, &s).unwrap();
    let rule = &rev.rules[0];
    let mut vals = vec![0u8; rule.deps.len()];
    let mut worst_cycle = 0.0f64;
    for d in 0..rule.table.len() / 3 {
        decode_into(d as u64, 3, &mut vals);
        let spins = s.embed(0, &rule.deps, &vals);
        let cur = vals[0] as usize;
        let gamma = s.cond_prob(&[0], &spins);
        worst_cycle = worst_cycle.max((rule.rate(3, d, (cur + 2) % 3) - kappa / gamma).abs());
        worst_cycle = worst_cycle.max(rule.rate(3, d, (cur + 1) % 3).abs());
    }
    report(
        6,
        worst_fixed < REVERSAL_TOL && worst_inv < REVERSAL_TOL && worst_cycle < REVERSAL_TOL,
        &format!("heat-bath fixed point {worst_fixed:.3e}, involution {worst_inv:.3e}, backward cycle {worst_cycle:.3e}"),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_07_oscillation_equations() {
    let start = Instant::now();
    let (t, s, _) = potts_line(0.5, 4);
    let cyc = make_cyclic(&s, 1.0).unwrap();
    let good = max_oscillation_residual(&cyc, &time_reversal(&cyc, &s).unwrap(), &t).unwrap();
    let (_, s_bad, _) = potts_line(0.5 * 1.5, 4);
    let bad = max_oscillation_residual(&cyc, &time_reversal(&cyc, &s_bad).unwrap(), &t).unwrap();
    let mixed = mix(1.0, &make_heat_bath(&s).unwrap(), 1.0, &cyc).unwrap();
    let good_mix = max_oscillation_residual(&mixed, &time_reversal(&mixed, &s).unwrap(), &t).unwrap();
    report(
        7,
        good < OSCILLATION_TOL && good_mix < OSCILLATION_TOL && bad > OSCILLATION_CONTROL_MIN,
        &format!("cyclic residual {good:.3e}, mixture residual {good_mix:.3e}, beta-perturbed control {bad:.3e}"),
        start,
        Duration::from_secs(120),
    );
}

struct MarkovSetup {
    spec: Specification,
    scheme: TruncationScheme,
    mu: MarkovSource,
    torus: Torus,
}

fn markov_setup(pot: &Potential, side: usize) -> MarkovSetup {
    let torus = Torus::line(side).unwrap();
    MarkovSetup {
        spec: Specification::new(pot, &torus).unwrap(),
        scheme: TruncationScheme::new(&torus),
        mu: MarkovSource::new(MarkovChain1d::from_potential(pot).unwrap(), &torus).unwrap(),
        torus,
    }
}

fn markov_nu(m: &MarkovSetup, q: usize, p: Vec<f64>) -> MarkovSource {
    MarkovSource::new(MarkovChain1d::from_transition(q, p).unwrap(), &m.torus).unwrap()
}

#[test]
fn criterion_08_functional_identities() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let ising = Potential::ising(1, 1.0, 0.0, 0.4);
    let m = markov_setup(&ising, 31);
    let hb = make_heat_bath(&m.spec).unwrap();

    // s_n(mu|mu) and S_n(mu|mu)
    let mut worst_s = 0.0f64;
    let mut big_s_exact = true;
    let potts = Potential::potts(3, 1, 1.0, 0.5);
    let mp = markov_setup(&potts, 31);
    let cyc = make_cyclic(&mp.spec, 1.0).unwrap();
    let tn = Torus::line(15).unwrap();
    let snnn = Specification::new(&next_nearest(0.5), &tn).unwrap();
    let mu_nnn = exact_gibbs(&next_nearest(0.5), &tn).unwrap();
    let hb_nnn = make_heat_bath(&snnn).unwrap();
    let sc_nnn = TruncationScheme::new(&tn);
    let cases: Vec<(&RateFamily, &Specification, &dyn MarginalSource, &TruncationScheme, usize)> = vec![
        (&hb, &m.spec, &m.mu, &m.scheme, 3),
        (&cyc, &mp.spec, &mp.mu, &mp.scheme, 2),
        (&hb_nnn, &snnn, &mu_nnn, &sc_nnn, 3),
    ];
    for (rates, spec, mu, scheme, max_n) in cases {
        for n in 1..=max_n {
            let r = bulk_functionals(rates, spec, mu, mu, scheme, n, RatioOrientation::KeyEquality).unwrap();
            worst_s = worst_s.max(r.s.value.to_f64().abs());
            big_s_exact &= r.big_s.value == ExtReal::Finite(0.0);
        }
    }
    if worst_s > IDENTITY_TOL || !big_s_exact {
        fails.push("identity at mu");
    }

    // product nu
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut max_s, mut max_term) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let a = rng.gen_range(0.05..0.95);
        let nu = ProductSource::new(vec![a, 1.0 - a]).unwrap();
        for n in 1..=3 {
            let r = bulk_functionals(&hb, &m.spec, &nu, &m.mu, &m.scheme, n, RatioOrientation::KeyEquality).unwrap();
            max_s = max_s.max(r.s.value.to_f64());
            max_term = max_term.max(r.s.max_term);
        }
    }
    if max_s > 0.0 || max_term > TERM_TOL {
        fails.push("product nonpositivity");
    }

    // growth bound and corrected sequence for Markov nu
    let chains = [vec![0.7, 0.3, 0.4, 0.6], vec![0.9, 0.1, 0.2, 0.8], vec![0.5, 0.5, 0.5, 0.5], vec![0.2, 0.8, 0.6, 0.4]];
    let mut growth_ok = true;
    let mut monotone_ok = true;
    let mut first = Vec::new();
    for p in chains {
        let nu = markov_nu(&m, 2, p);
        let s: Vec<ExtReal> = (1..=3)
            .map(|n| bulk_functionals(&hb, &m.spec, &nu, &m.mu, &m.scheme, n, RatioOrientation::KeyEquality).unwrap().s.value)
            .collect();
        let v: Vec<f64> = s.iter().map(|x| x.to_f64()).collect();
        growth_ok &= v[1] <= 2.0 * v[0] + SEQUENCE_TOL && v[2] <= 2.0 * v[1] + SEQUENCE_TOL;
        let cs = corrected_sequence(&s, 1, 1, SEQUENCE_TOL).unwrap();
        monotone_ok &= cs.nonincreasing && cs.all_nonpositive;
        if first.is_empty() {
            first = v;
        }
    }
    if !growth_ok {
        fails.push("growth bound");
    }
    if !monotone_ok {
        fails.push("corrected sequence");
    }
    report(
        8,
        fails.is_empty(),
        &format!(
            "|s_n(mu|mu)| <= {worst_s:.3e}, S_n(mu|mu) exactly 0: {big_s_exact}; product nu max s = {max_s:.3e}, max term = {max_term:.3e}; \
             Markov nu s_1..3 = {first:.4?}; failed: {fails:?}"
        ),
        start,
        Duration::from_secs(300),
    );
}

fn ledger_row(
    rates: &RateFamily,
    spec: &Specification,
    nu: &dyn MarginalSource,
    mu: &dyn MarginalSource,
    scheme: &TruncationScheme,
    n: usize,
) -> (f64, f64, f64) {
    let g = g_n(rates, nu, mu, scheme, n).unwrap().to_f64();
    let gt = g_tilde_n(rates, nu, mu, scheme, n).unwrap().to_f64();
    let big_s = bulk_functionals(rates, spec, nu, mu, scheme, n, RatioOrientation::KeyEquality).unwrap().big_s.value.to_f64();
    let lam = scheme.lambda(n).unwrap().len() as f64;
    (g, gt, (gt - big_s).abs() / lam)
}

#[test]
fn criterion_09_boundary_order() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut one_sided_holds = true;

    let ising = Potential::ising(1, 1.0, 0.0, 0.4);
    let m = markov_setup(&ising, 31);
    let hb = make_heat_bath(&m.spec).unwrap();
    let cyc_m = markov_setup(&Potential::potts(3, 1, 1.0, 0.5), 31);
    let cyc = make_cyclic(&cyc_m.spec, 1.0).unwrap();
    let nus = [markov_nu(&m, 2, vec![0.7, 0.3, 0.4, 0.6]), markov_nu(&m, 2, vec![0.85, 0.15, 0.25, 0.75])];
    let cyc_nu = markov_nu(&cyc_m, 3, vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5]);

    let tn = Torus::line(15).unwrap();
    let snnn = Specification::new(&next_nearest(0.5), &tn).unwrap();
    let mu_nnn = exact_gibbs(&next_nearest(0.5), &tn).unwrap();
    let nu_nnn_gibbs = exact_gibbs(&next_nearest(0.9), &tn).unwrap();
    let nu_nnn_prod = ProductSource::new(vec![0.3, 0.7]).unwrap();
    let hb_nnn = make_heat_bath(&snnn).unwrap();
    let sc_nnn = TruncationScheme::new(&tn);

    let cases: Vec<(&str, &RateFamily, &Specification, &dyn MarginalSource, &dyn MarginalSource, &TruncationScheme, usize)> = vec![
        ("ising heat-bath, Markov nu a", &hb, &m.spec, &nus[0], &m.mu, &m.scheme, 3),
        ("ising heat-bath, Markov nu b", &hb, &m.spec, &nus[1], &m.mu, &m.scheme, 3),
        ("potts cyclic, Markov nu", &cyc, &cyc_m.spec, &cyc_nu, &cyc_m.mu, &cyc_m.scheme, 2),
        ("next-nearest heat-bath, Gibbs nu", &hb_nnn, &snnn, &nu_nnn_gibbs, &mu_nnn, &sc_nnn, 3),
        ("next-nearest heat-bath, product nu", &hb_nnn, &snnn, &nu_nnn_prod, &mu_nnn, &sc_nnn, 3),
    ];
    for (name, rates, spec, nu, mu, scheme, max_n) in cases {
        let (dm, dn) = (mu.single_site_delta().unwrap(), nu.single_site_delta().unwrap());
        let c = boundary_constant(rates, dm, dn);
        let c1 = one_sided_boundary_constant(rates, dm);
        let mut per_site = Vec::new();
        let mut gaps = Vec::new();
        for n in 1..=max_n {
            let (g, gt, d) = ledger_row(rates, spec, nu, mu, scheme, n);
            let boundary = scheme.boundary_size(n).unwrap() as f64;
            pass &= (g - gt).abs() <= c * boundary;
            one_sided_holds &= (g - gt).abs() <= c1 * boundary;
            gaps.push((g - gt).abs() / boundary);
            per_site.push(d);
        }
        pass &= per_site.windows(2).all(|w| w[1] <= w[0] + LEDGER_TOL);
        lines.push(format!("{name}: C = {c:.3}, |g-g~|/|boundary| = {}, |g~-S|/|Lambda| = {}", sci(&gaps), sci(&per_site)));
    }
    report(
        9,
        pass,
        &format!("{}; one-sided constant also holds: {one_sided_holds}", lines.join("; ")),
        start,
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_10_zero_loss_gibbs() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let setups = [
        (Potential::ising(1, 1.0, 0.0, 0.4), 0.9, false),
        (Potential::ising(1, 1.0, 0.0, 0.4), 0.2, false),
        (Potential::potts(3, 1, 1.0, 0.5), 0.9, true),
    ];
    for (pot, beta2, cyclic) in setups {
        let m = markov_setup(&pot, 31);
        let rates = if cyclic { make_cyclic(&m.spec, 1.0).unwrap() } else { make_heat_bath(&m.spec).unwrap() };
        let nu = MarkovSource::new(MarkovChain1d::from_potential(&pot.with_beta(beta2)).unwrap(), &m.torus).unwrap();
        let lam = m.scheme.lambda(2).unwrap().len() as f64;
        let off = bulk_functionals(&rates, &m.spec, &nu, &m.mu, &m.scheme, 2, RatioOrientation::KeyEquality).unwrap().s.value.to_f64() / lam;
        let on = bulk_functionals(&rates, &m.spec, &m.mu, &m.mu, &m.scheme, 2, RatioOrientation::KeyEquality).unwrap().s.value.to_f64() / lam;
        pass &= off < -ZERO_LOSS_GAP && on.abs() <= IDENTITY_TOL;
        lines.push(format!("{} beta {} vs {beta2}: s_2/|Lambda| = {off:.4e}, at mu {on:.1e}", rates.name, pot.beta));
    }
    report(10, pass, &lines.join("; "), start, Duration::from_secs(60));
}

#[test]
fn criterion_11_attractor_and_occupation() {
    let start = Instant::now();
    let (t, s, _) = potts_line(0.5, 64);
    let rates = mix(1.0, &make_heat_bath(&s).unwrap(), 1.0, &make_cyclic(&s, 1.0).unwrap()).unwrap();
    let run = SimulationRun {
        rates,
        torus: t,
        initial: InitialLaw::Product(vec![1.0 / 3.0; 3]),
        horizon: 20.0,
        replicas: 10_000,
        seed: 2024,
        log_events: false,
    };
    let offs = vec![vec![-1], vec![0], vec![1]];
    let times = [0.0, 2.0, 5.0, 10.0, 20.0];
    let ens = ensemble_window_marginals(&run, &offs, 32, &times, false).unwrap();
    let res: Vec<f64> = ens.marginals.iter().map(|m| attractor_residual(m, &s).unwrap()).collect();
    let ratio = res[res.len() - 1] / res[0];
    let violations: Vec<f64> = res.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    let trend_ok = violations.len() <= 1 && violations.iter().all(|&v| v <= TREND_SLACK);
    let chi2 = replica_independence_chi2(&ens.events).unwrap();
    let pooled = ensemble_window_marginals(&run, &offs, 32, &[0.0, 20.0], true).unwrap();
    let pres: Vec<f64> = pooled.marginals.iter().map(|m| attractor_residual(m, &s).unwrap()).collect();

    let mut tvs = Vec::new();
    for (q, n) in [(2usize, 8usize), (3, 5)] {
        let t = Torus::line(n).unwrap();
        let pot = if q == 2 { Potential::ising(1, 1.0, 0.0, 0.5) } else { Potential::potts(3, 1, 1.0, 0.5) };
        let spec = Specification::new(&pot, &t).unwrap();
        let hb = make_heat_bath(&spec).unwrap();
        let rates = if q == 2 { hb } else { mix(1.0, &hb, 1.0, &make_cyclic(&spec, 1.0).unwrap()).unwrap() };
        let mu = exact_gibbs(&pot, &t).unwrap();
        let gen = assemble_generator(&rates, &t).unwrap();
        let mean_exit: f64 = mu.probs().as_slice().iter().enumerate().map(|(i, p)| p * gen.exit_rate(i)).sum();
        let horizon = 1e6 / mean_exit;
        let sim = Simulator::new(&rates, &t).unwrap();
        let mut avg = vec![0.0; mu.n_states()];
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
            let (occ, _) = sim.occupation(&Configuration::zeros(n, q), horizon, &mut rng).unwrap();
            for (a, o) in avg.iter_mut().zip(occ.as_slice()) {
                *a += o / 5.0;
            }
        }
        tvs.push(ProbVector::new(avg).unwrap().total_variation(mu.probs()));
    }
    let pass = ratio <= ATTRACTOR_RATIO && trend_ok && chi2 < CHI2_CRIT && tvs.iter().all(|&v| v < OCCUPATION_TV);
    report(
        11,
        pass,
        &format!(
            "residuals {res:.4?} (ratio {ratio:.3}, trend violations {violations:.3?}), pooled {pres:.4?}, chi2 {chi2:.3}; occupation TV q=2 N=8 {:.4}, q=3 N=5 {:.4}",
            tvs[0], tvs[1]
        ),
        start,
        Duration::from_secs(900),
    );
}

#[test]
fn criterion_12_structural_suites() {
    let start = Instant::now();
    let mut fails = Vec::new();

    // DLR
    let mut worst_dlr = 0.0f64;
    let t2 = Torus::new(&[3, 3]).unwrap();
    let models: Vec<(Potential, Torus)> = vec![
        (Potential::ising(1, 1.0, 0.3, 0.7), Torus::line(8).unwrap()),
        (Potential::potts(3, 1, 1.0, 0.5), Torus::line(6).unwrap()),
        (next_nearest(0.8), Torus::line(10).unwrap()),
        (Potential::ising(2, -1.0, 0.1, 0.4), t2),
    ];
    for (pot, t) in &models {
        let spec = Specification::new(pot, t).unwrap();
        let mu = exact_gibbs(pot, t).unwrap();
        let n = t.n_sites();
        for w in [vec![0], vec![n / 2], vec![0, 1], vec![1, 3, 4]] {
            worst_dlr = worst_dlr.max(dlr_residual(&mu, &spec, &Window::new(t, w).unwrap()).unwrap());
        }
    }
    if worst_dlr >= DLR_TOL {
        fails.push("dlr");
    }

    // beta mixing
    let t = Torus::line(10).unwrap();
    let lam = Window::new(&t, vec![t.center()]).unwrap();
    let prod = TorusMeasure::product(&t, &[0.2, 0.8]).unwrap();
    let prod_max = (0..5).map(|n| beta_mixing_bound(&prod, &lam, n).unwrap()).fold(0.0, f64::max);
    let gibbs = exact_gibbs(&Potential::ising(1, 1.0, 0.0, 0.6), &t).unwrap();
    let mixing: Vec<f64> = (0..5).map(|n| beta_mixing_bound(&gibbs, &lam, n).unwrap()).collect();
    let monotone = mixing.windows(2).all(|w| w[1] <= w[0] + MIXING_TOL);
    if prod_max > MIXING_TOL || !monotone {
        fails.push("beta mixing");
    }

    // log-ratio bound, exhaustive
    let mut log_ratio_ok = true;
    let mut worst_frac = 0.0f64;
    for (pot, n) in [(Potential::ising(1, 1.0, 0.2, 0.8), 16usize), (Potential::potts(4, 1, 1.0, 0.6), 8)] {
        let t = Torus::line(n).unwrap();
        let mu = exact_gibbs(&pot, &t).unwrap();
        let lam = Window::new(&t, (2..6).collect()).unwrap();
        for d in [vec![3], vec![2, 3], vec![3, 4, 5], (2..6).collect()] {
            let c = log_ratio_bound_check(&mu, &Window::new(&t, d).unwrap(), &lam).unwrap();
            log_ratio_ok &= c.holds;
            worst_frac = worst_frac.max(c.worst / c.bound);
        }
    }
    if !log_ratio_ok {
        fails.push("log-ratio bound");
    }

    // beta(n) tail
    let mut tail_max = 0.0f64;
    let (_, s, _) = potts_line(0.5, 7);
    let cyc = make_cyclic(&s, 1.0).unwrap();
    let hb = make_heat_bath(&s).unwrap();
    let mixed = mix(1.0, &hb, 1.0, &cyc).unwrap();
    let snnn = Specification::new(&next_nearest(0.5), &Torus::line(9).unwrap()).unwrap();
    let hb_nnn = make_heat_bath(&snnn).unwrap();
    let fams: [(&RateFamily, &Specification); 4] = [(&hb, &s), (&cyc, &s), (&mixed, &s), (&hb_nnn, &snnn)];
    for (r, sp) in fams {
        let rh = time_reversal(r, sp).unwrap();
        let range = r.range().max(rh.range());
        for n in range + 1..range + 4 {
            tail_max = tail_max.max(beta_tail(r, &rh, n));
        }
    }
    if tail_max != 0.0 {
        fails.push("beta tail");
    }

    report(
        12,
        fails.is_empty(),
        &format!(
            "DLR {worst_dlr:.3e}; product mixing {prod_max:.1e}, Gibbs mixing {}; log-ratio worst/bound {worst_frac:.3}; tail beyond range {tail_max:e}; failed: {fails:?}",
            sci(&mixing)
        ),
        start,
        Duration::from_secs(120),
    );
}
