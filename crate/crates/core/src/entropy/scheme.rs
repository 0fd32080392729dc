use crate::ctmc::EntropyValue;
use crate::error::{Error, Result};
use crate::lattice::{cube_offsets, Configuration, Offset, Torus, Window};

/// Nested windows Lambda_n (radius 2^n - 1) and Lambda~_n (radius
/// 2^n - n - 1) about the torus center; truncation balls B_{n-1}(x(Delta))
/// are centered at the rule anchor.
#[derive(Clone, Debug)]
pub struct TruncationScheme {
    torus: Torus,
    center: usize,
}

impl TruncationScheme {
    pub fn new(torus: &Torus) -> Self {
        Self { torus: torus.clone(), center: torus.center() }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Largest n whose outer window fits the torus.
    pub fn max_n(&self) -> usize {
        let s = self.torus.min_side();
        (1..).take_while(|&n| (1usize << (n + 1)) - 1 <= s).last().unwrap_or(0)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Domain("window index starts at 1".into()));
        }
        if n >= usize::BITS as usize - 1 || (1usize << (n + 1)) - 1 > self.torus.min_side() {
            return Err(Error::Geometry(format!("window Lambda_{n} does not fit a torus of side {}", self.torus.min_side())));
        }
        Ok(())
    }

    pub fn outer_radius(n: usize) -> usize {
        (1 << n) - 1
    }

    pub fn inner_radius(n: usize) -> usize {
        (1 << n) - n - 1
    }

    pub fn lambda(&self, n: usize) -> Result<Window> {
        self.check(n)?;
        self.torus.cube(self.center, Self::outer_radius(n))
    }

    pub fn lambda_tilde(&self, n: usize) -> Result<Window> {
        self.check(n)?;
        self.torus.cube(self.center, Self::inner_radius(n))
    }

    /// |Lambda_n \ Lambda~_n|.
    pub fn boundary_size(&self, n: usize) -> Result<usize> {
        Ok(self.lambda(n)?.len() - self.lambda_tilde(n)?.len())
    }

    /// Offsets of the ball B_r about a rule anchor.
    pub fn ball_offsets(&self, r: usize) -> Vec<Offset> {
        cube_offsets(self.torus.dim(), r as i64)
    }
}

/// r_n: spins in the window kept, 0 elsewhere.
pub fn fill_configuration(torus: &Torus, q: usize, window: &Window, eta_window: &[u8]) -> Result<Configuration> {
    if eta_window.len() != window.len() {
        return Err(Error::Domain("window values do not match window".into()));
    }
    let mut spins = vec![0u8; torus.n_sites()];
    for (&s, &v) in window.sites().iter().zip(eta_window) {
        if s >= spins.len() {
            return Err(Error::Geometry(format!("site {s} outside torus")));
        }
        spins[s] = v;
    }
    Configuration::new(spins, q)
}

/// G_n = prod_{k >= n} ((2^{k+2} - 2) / (2^{k+2} - 1))^d, tail truncated
/// once the remaining log-factor drops below 1e-17.
pub fn volume_correction(n: usize, d: usize) -> f64 {
    let mut log = 0.0f64;
    let mut k = n;
    loop {
        let m = 2f64.powi(k as i32 + 2);
        let term = d as f64 * (-1.0 / (m - 1.0)).ln_1p();
        log += term;
        // remaining tail is bounded by twice the current term
        if term.abs() < 1e-17 * log.abs().max(1e-300) || k > 1100 {
            break;
        }
        k += 1;
    }
    log.exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedSequence {
    pub first_n: usize,
    pub g: Vec<f64>,
    pub values: Vec<f64>,
    pub nonincreasing: bool,
    pub all_nonpositive: bool,
}

/// G_n s_n / |Lambda_n| for n = first_n, first_n + 1, ...
pub fn corrected_sequence(s: &[EntropyValue], first_n: usize, d: usize, tol: f64) -> Result<CorrectedSequence> {
    if s.len() < 2 {
        return Err(Error::Domain("corrected sequence needs at least two values".into()));
    }
    if first_n == 0 {
        return Err(Error::Domain("window index starts at 1".into()));
    }
    let mut g = Vec::with_capacity(s.len());
    let mut values = Vec::with_capacity(s.len());
    for (k, v) in s.iter().enumerate() {
        let n = first_n + k;
        let gn = volume_correction(n, d);
        let vol = ((1u64 << (n + 1)) - 1).pow(d as u32) as f64;
        g.push(gn);
        values.push(gn * v.to_f64() / vol);
    }
    let nonincreasing = values.windows(2).all(|w| w[1] <= w[0] + tol || w[0] == f64::NEG_INFINITY);
    let all_nonpositive = values.iter().all(|&v| v <= tol);
    Ok(CorrectedSequence { first_n, g, values, nonincreasing, all_nonpositive })
}
