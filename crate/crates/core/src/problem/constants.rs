use crate::error::invalid;
use crate::Result;

/// Where a constant came from. Bounds built on estimated constants are only
/// indicative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn analytic(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Analytic,
        }
    }

    pub fn estimated(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Estimated,
        }
    }

    pub fn is_estimated(&self) -> bool {
        self.provenance == Provenance::Estimated
    }
}

impl Default for Constant {
    fn default() -> Self {
        Self::analytic(0.0)
    }
}

/// The constants entering the mean-square-error analysis at a fixed `λ`.
///
/// | field          | meaning                                                        |
/// |----------------|----------------------------------------------------------------|
/// | `q`            | contraction modulus of `Φ(·, λ)`                               |
/// | `l_e`          | Lipschitz constant of `E(·, λ)`                                |
/// | `nu1`, `nu2`   | Lipschitz constants of `∂₁Φ(·, λ)`, `∂₂Φ(·, λ)`               |
/// | `mu1`, `mu2`   | Lipschitz constants of `∇₁E(·, λ)`, `∇₂E(·, λ)`               |
/// | `l_phi`        | `‖∂₂Φ(w(λ), λ)‖`                                               |
/// | `l_phi_tilde`  | per-sample bound on `‖∂₁Φ̂‖`                                    |
/// | `m2`           | variance bound on `∂₂Φ̂`                                        |
/// | `sigma1_lower`, `sigma2_lower` | variance model `V[Φ̂(w)] ≤ σ₁ + σ₂‖Φ(w) − w‖²`   |
/// | `sigma_lam1`   | `2 V[Φ̂(w(λ), λ, ζ)]`                                           |
/// | `sigma_lam2`   | `2 (L_Φ̃² + q²) / (1 − q)²`                                     |
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProblemConstants {
    pub q: Constant,
    pub l_e: Constant,
    pub nu1: Constant,
    pub nu2: Constant,
    pub mu1: Constant,
    pub mu2: Constant,
    pub l_phi: Constant,
    pub l_phi_tilde: Constant,
    pub m2: Constant,
    pub sigma1_lower: Constant,
    pub sigma2_lower: Constant,
    pub sigma_lam1: Constant,
    pub sigma_lam2: Constant,
}

impl ProblemConstants {
    pub fn fields(&self) -> [(&'static str, Constant); 13] {
        [
            ("q", self.q),
            ("l_e", self.l_e),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("l_phi", self.l_phi),
            ("l_phi_tilde", self.l_phi_tilde),
            ("m2", self.m2),
            ("sigma1_lower", self.sigma1_lower),
            ("sigma2_lower", self.sigma2_lower),
            ("sigma_lam1", self.sigma_lam1),
            ("sigma_lam2", self.sigma_lam2),
        ]
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut Constant> {
        Some(match name {
            "q" => &mut self.q,
            "l_e" => &mut self.l_e,
            "nu1" => &mut self.nu1,
            "nu2" => &mut self.nu2,
            "mu1" => &mut self.mu1,
            "mu2" => &mut self.mu2,
            "l_phi" => &mut self.l_phi,
            "l_phi_tilde" => &mut self.l_phi_tilde,
            "m2" => &mut self.m2,
            "sigma1_lower" => &mut self.sigma1_lower,
            "sigma2_lower" => &mut self.sigma2_lower,
            "sigma_lam1" => &mut self.sigma_lam1,
            "sigma_lam2" => &mut self.sigma_lam2,
            _ => return None,
        })
    }

    pub fn any_estimated(&self) -> bool {
        self.fields().iter().any(|(_, c)| c.is_estimated())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in self.fields() {
            if !c.value.is_finite() || c.value < 0.0 {
                return Err(invalid(format!("constant {name} = {} must be finite and ≥ 0", c.value)));
            }
        }
        if self.q.value >= 1.0 {
            return Err(crate::Error::NotContraction(self.q.value));
        }
        Ok(())
    }

    /// `σ_{λ,2} = 2 (L_Φ̃² + q²) / (1 − q)²` from the other fields.
    pub fn derived_sigma_lam2(&self) -> f64 {
        let q = self.q.value;
        2.0 * (self.l_phi_tilde.value.powi(2) + q * q) / (1.0 - q).powi(2)
    }
}
