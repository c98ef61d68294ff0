//! Double-well potential with singular logarithmic part, the concave
//! coupling function g, endpoint safeguards, and the assumption auditor.

use crate::error::{Error, Result};

/// Coupling function g on [0, 1]; nonnegative with nonpositive curvature.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    /// g(r) = g0
    Constant { g0: f64 },
    /// g(r) = g0 + g1 r
    Affine { g0: f64, g1: f64 },
    /// g(r) = a r (2 - r) + b
    SmoothConcave { a: f64, b: f64 },
}

/// Evaluation result carrying the safeguard flag.
#[derive(Debug, Clone, Copy)]
pub struct Eval {
    pub value: f64,
    pub clamped: bool,
}

/// Potential specification: F = F1 + F2 with F1 either the logarithmic
/// part `c_hat (r log r + (1-r) log(1-r))` or, in smooth mode, a convex
/// quartic with the same curvature at r = 1/2. F2 is a polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub c_hat: f64,
    /// Ascending coefficients of the smooth part F2.
    pub f2: Vec<f64>,
    pub g: CouplingKind,
    /// Safeguard clip distance from the endpoints of (0, 1).
    pub eps_clip: f64,
    /// Replace the logarithmic F1 by a smooth convex quartic; used where
    /// machine-scale differentiability matters more than the singular wall.
    pub smooth_f1: bool,
}

impl PotentialSpec {
    /// Logarithmic potential with the default double-well completion
    /// F2(r) = -2 c_hat (r - 1/2)^2 and the default concave coupling.
    pub fn standard(c_hat: f64) -> Self {
        let c2 = 2.0 * c_hat;
        Self {
            c_hat,
            f2: vec![-c2 / 4.0, c2, -c2],
            g: CouplingKind::SmoothConcave { a: 1.0, b: 0.0 },
            eps_clip: 1e-6,
            smooth_f1: false,
        }
    }

    /// Smooth-mode variant of [`standard`](Self::standard).
    pub fn smooth(c_hat: f64) -> Self {
        Self {
            smooth_f1: true,
            ..Self::standard(c_hat)
        }
    }

    pub fn with_coupling(mut self, g: CouplingKind) -> Self {
        self.g = g;
        self
    }

    pub fn with_f2(mut self, f2: Vec<f64>) -> Self {
        self.f2 = f2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_hat > 0.0) || !self.c_hat.is_finite() {
            return Err(Error::InvalidSpec(format!("c_hat must be > 0, got {}", self.c_hat)));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.05) {
            return Err(Error::InvalidSpec(format!(
                "eps_clip must lie in (0, 0.05), got {}",
                self.eps_clip
            )));
        }
        if self.f2.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpec("F2 coefficients must be finite".into()));
        }
        let report = self.audit();
        if !report.pass() {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.name)
                .collect();
            return Err(Error::InvalidSpec(format!(
                "assumption audit failed: {}",
                failed.join(", ")
            )));
        }
        Ok(())
    }

    fn clip(&self, rho: f64) -> (f64, bool) {
        assert!(!rho.is_nan(), "NaN argument to potential evaluation");
        if self.smooth_f1 {
            return (rho, false);
        }
        let lo = self.eps_clip;
        let hi = 1.0 - self.eps_clip;
        if rho < lo {
            (lo, true)
        } else if rho > hi {
            (hi, true)
        } else {
            (rho, false)
        }
    }

    fn f1_eval(&self, r: f64) -> f64 {
        if self.smooth_f1 {
            let s = r - 0.5;
            self.c_hat * (4.0 * s.powi(4) + 2.0 * s * s)
        } else {
            self.c_hat * (r * r.ln() + (1.0 - r) * (1.0 - r).ln())
        }
    }

    fn f1_prime(&self, r: f64) -> f64 {
        if self.smooth_f1 {
            let s = r - 0.5;
            self.c_hat * (16.0 * s.powi(3) + 4.0 * s)
        } else {
            self.c_hat * (r / (1.0 - r)).ln()
        }
    }

    fn f1_second(&self, r: f64) -> f64 {
        if self.smooth_f1 {
            let s = r - 0.5;
            self.c_hat * (48.0 * s * s + 4.0)
        } else {
            self.c_hat * (1.0 / r + 1.0 / (1.0 - r))
        }
    }

    fn f1_third(&self, r: f64) -> f64 {
        if self.smooth_f1 {
            self.c_hat * 96.0 * (r - 0.5)
        } else {
            self.c_hat * (-1.0 / (r * r) + 1.0 / ((1.0 - r) * (1.0 - r)))
        }
    }

    fn poly(&self, r: f64, derivative: usize) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.f2.iter().enumerate() {
            if k < derivative {
                continue;
            }
            let mut factor = 1.0;
            for j in 0..derivative {
                factor *= (k - j) as f64;
            }
            acc += c * factor * r.powi((k - derivative) as i32);
        }
        acc
    }

    pub fn f_eval(&self, rho: f64) -> Eval {
        let (r, clamped) = self.clip(rho);
        Eval {
            value: self.f1_eval(r) + self.poly(r, 0),
            clamped,
        }
    }

    pub fn f_prime(&self, rho: f64) -> Eval {
        let (r, clamped) = self.clip(rho);
        Eval {
            value: self.f1_prime(r) + self.poly(r, 1),
            clamped,
        }
    }

    pub fn f_second(&self, rho: f64) -> Eval {
        let (r, clamped) = self.clip(rho);
        Eval {
            value: self.f1_second(r) + self.poly(r, 2),
            clamped,
        }
    }

    pub fn f_third(&self, rho: f64) -> Eval {
        let (r, clamped) = self.clip(rho);
        Eval {
            value: self.f1_third(r) + self.poly(r, 3),
            clamped,
        }
    }

    pub fn g_eval(&self, rho: f64) -> f64 {
        match self.g {
            CouplingKind::Constant { g0 } => g0,
            CouplingKind::Affine { g0, g1 } => g0 + g1 * rho,
            CouplingKind::SmoothConcave { a, b } => a * rho * (2.0 - rho) + b,
        }
    }

    pub fn g_prime(&self, rho: f64) -> f64 {
        match self.g {
            CouplingKind::Constant { .. } => 0.0,
            CouplingKind::Affine { g1, .. } => g1,
            CouplingKind::SmoothConcave { a, .. } => a * (2.0 - 2.0 * rho),
        }
    }

    pub fn g_second(&self, _rho: f64) -> f64 {
        match self.g {
            CouplingKind::Constant { .. } | CouplingKind::Affine { .. } => 0.0,
            CouplingKind::SmoothConcave { a, .. } => -2.0 * a,
        }
    }

    /// Sampled audit of the structural assumptions on F1 and g.
    /// Failures are data, not errors.
    pub fn audit(&self) -> AuditReport {
        const SAMPLES: usize = 1001;
        let mut checks = Vec::new();

        let mut g_nonneg = AuditCheck::passing("g_nonnegative");
        let mut g_concave = AuditCheck::passing("g_second_nonpositive");
        for k in 0..SAMPLES {
            let r = k as f64 / (SAMPLES - 1) as f64;
            if self.g_eval(r) < 0.0 && g_nonneg.pass {
                g_nonneg = AuditCheck::failing("g_nonnegative", r, self.g_eval(r));
            }
            if self.g_second(r) > 0.0 && g_concave.pass {
                g_concave = AuditCheck::failing("g_second_nonpositive", r, self.g_second(r));
            }
        }
        checks.push(g_nonneg);
        checks.push(g_concave);

        // Convexity of F1 on the safeguarded interior.
        let mut f1_convex = AuditCheck::passing("f1_convex");
        let lo = self.eps_clip;
        let hi = 1.0 - self.eps_clip;
        for k in 0..SAMPLES {
            let r = lo + (hi - lo) * k as f64 / (SAMPLES - 1) as f64;
            if self.f1_second(r) < 0.0 && f1_convex.pass {
                f1_convex = AuditCheck::failing("f1_convex", r, self.f1_second(r));
            }
        }
        checks.push(f1_convex);

        // Endpoint blow-up of F1' (only meaningful for the singular kind).
        if !self.smooth_f1 {
            let down = self.f1_prime(self.eps_clip);
            let up = self.f1_prime(1.0 - self.eps_clip);
            let pass = down < -1.0 && up > 1.0;
            checks.push(AuditCheck {
                name: "f1_prime_blowup",
                pass,
                witness: if pass { None } else { Some(self.eps_clip) },
                measured: down,
            });
        }

        AuditReport { checks }
    }
}

#[derive(Debug, Clone)]
pub struct AuditCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Sampled argument witnessing a failure.
    pub witness: Option<f64>,
    pub measured: f64,
}

impl AuditCheck {
    fn passing(name: &'static str) -> Self {
        Self {
            name,
            pass: true,
            witness: None,
            measured: 0.0,
        }
    }

    fn failing(name: &'static str, witness: f64, measured: f64) -> Self {
        Self {
            name,
            pass: false,
            witness: Some(witness),
            measured,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
