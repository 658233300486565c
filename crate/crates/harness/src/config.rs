//! Experiment configuration: a flat JSON object, every key optional.

use sblab_core::{DesignMatrix, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Dimension,
    Recovery,
    Selection,
    NoSuperset,
    Bvm,
    Coverage,
    LassoContrast,
    PredictSubspace,
    Diagnose,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Dimension => "dimension",
            ExperimentKind::Recovery => "recovery",
            ExperimentKind::Selection => "selection",
            ExperimentKind::NoSuperset => "no_superset",
            ExperimentKind::Bvm => "bvm",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::LassoContrast => "lasso_contrast",
            ExperimentKind::PredictSubspace => "predict_subspace",
            ExperimentKind::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Identity,
    ScaledIdentity,
    GaussianIid,
    Equicorrelated,
    ArGram,
    BlockGram,
}

impl DesignKind {
    /// Designs with p = n forced.
    pub fn square(self) -> bool {
        !matches!(self, DesignKind::GaussianIid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Flat,
    Decaying,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Prefix,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Complexity,
    BetaBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabChoice {
    Laplace,
    HeavyTailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Auto,
    Exact,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// ‖X‖/√n clamped to the admissible range.
    Default,
    XNormOverP,
    InvSqrtN,
    #[serde(rename = "sqrt_2_log_n")]
    Sqrt2LogN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Rule(LambdaRule),
}

impl LambdaSpec {
    pub fn resolve(&self, x: &DesignMatrix) -> Result<f64> {
        let v = match *self {
            LambdaSpec::Value(v) => v,
            LambdaSpec::Rule(LambdaRule::Default) => sblab_core::priors::default_lambda(x)?,
            LambdaSpec::Rule(LambdaRule::XNormOverP) => x.x_norm() / x.p() as f64,
            LambdaSpec::Rule(LambdaRule::InvSqrtN) => 1.0 / (x.n() as f64).sqrt(),
            LambdaSpec::Rule(LambdaRule::Sqrt2LogN) => (2.0 * (x.n() as f64).ln()).sqrt(),
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("lambda must be positive and finite (got {v})")));
        }
        Ok(v)
    }
}

const DEFAULT_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub replications: usize,

    pub design: DesignKind,
    /// Rows; square designs may give either n or p.
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub sigma_n: f64,
    pub r: f64,
    pub rho: f64,
    pub block_size: usize,
    /// Number of support columns replaced by combinations of the others.
    pub planted_collinear: usize,
    pub design_file: Option<PathBuf>,
    pub response_file: Option<PathBuf>,

    pub s0: usize,
    pub signal: SignalKind,
    pub amplitude: f64,
    pub placement: Placement,
    pub noiseless: bool,

    pub prior: PriorKind,
    pub prior_a: f64,
    pub prior_c: f64,
    pub prior_u: f64,
    pub slab: SlabChoice,
    pub slab_mu: f64,
    pub lambda: LambdaSpec,

    pub engine: Engine,
    pub s_max: Option<usize>,
    pub enum_budget: f64,
    pub n_draws: usize,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,

    pub level: f64,
    pub neighborhood_m: f64,
    pub tv_draws: usize,
    pub lasso_delta: f64,
    pub ss_radius_factor: f64,
    pub subspace_d: f64,
    pub t_max: usize,
    pub dedup_tol: f64,
    pub subspace_budget: f64,
    pub predict_m: f64,
    pub oracle_r: Vec<f64>,
    pub diag_s_max: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Recovery,
            seed: 1,
            replications: 1,
            design: DesignKind::Identity,
            n: None,
            p: None,
            sigma_n: 1.0,
            r: 0.0,
            rho: 0.0,
            block_size: 1,
            planted_collinear: 0,
            design_file: None,
            response_file: None,
            s0: 5,
            signal: SignalKind::Flat,
            amplitude: 8.0,
            placement: Placement::Prefix,
            noiseless: false,
            prior: PriorKind::Complexity,
            prior_a: 1.0,
            prior_c: 1.0,
            prior_u: 1.5,
            slab: SlabChoice::Laplace,
            slab_mu: 4.0,
            lambda: LambdaSpec::Rule(LambdaRule::Default),
            engine: Engine::Auto,
            s_max: None,
            enum_budget: 2e6,
            n_draws: 2000,
            n_sweeps: 20_000,
            burn_in: 2_000,
            chains: 4,
            level: 0.975,
            neighborhood_m: sblab_core::bvm::DEFAULT_M,
            tv_draws: 20_000,
            lasso_delta: 0.1,
            ss_radius_factor: 5.0,
            subspace_d: 4.0,
            t_max: 3,
            dedup_tol: sblab_core::prediction::DEFAULT_DEDUP_TOL,
            subspace_budget: 1e6,
            predict_m: 10.0,
            oracle_r: vec![1.0, 4.0],
            diag_s_max: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Number of columns: p, else n, else 100.
    pub fn p(&self) -> usize {
        self.p.or(self.n).unwrap_or(DEFAULT_SIZE)
    }

    /// Number of rows: n, else p, else 100.
    pub fn rows(&self) -> usize {
        self.n.or(self.p).unwrap_or(DEFAULT_SIZE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.design_file.is_none() {
            if self.rows() == 0 || self.p() == 0 {
                return bad("n and p must be positive".into());
            }
            if self.design.square() && self.rows() != self.p() {
                return bad(format!("{:?} design needs p = n (n = {}, p = {})", self.design, self.rows(), self.p()));
            }
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.r) || !(0.0..1.0).contains(&self.rho) {
            return bad(format!("r and rho must lie in [0, 1) (r = {}, rho = {})", self.r, self.rho));
        }
        if self.block_size == 0 {
            return bad("block_size must be positive".into());
        }
        if !(self.sigma_n > 0.0) {
            return bad("sigma_n must be positive".into());
        }
        if self.design_file.is_none() && self.s0 > self.p() {
            return bad(format!("s0 = {} exceeds p = {}", self.s0, self.p()));
        }
        if self.planted_collinear > 0 && self.planted_collinear >= self.s0 {
            return bad("planted_collinear must be smaller than s0".into());
        }
        if !(self.amplitude >= 0.0) {
            return bad("amplitude must be nonnegative".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)".into());
        }
        if self.n_draws == 0 || self.chains == 0 || self.burn_in >= self.n_sweeps {
            return bad("n_draws and chains must be positive and burn_in below n_sweeps".into());
        }
        if !(self.subspace_d >= 4.0) {
            return bad(format!("subspace_d must be at least 4 (got {})", self.subspace_d));
        }
        if let LambdaSpec::Value(v) = self.lambda {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("lambda must be positive (got {v})"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn lambda_forms() {
        let c = ExperimentConfig::from_json(r#"{"lambda": 0.25}"#).unwrap();
        assert_eq!(c.lambda, LambdaSpec::Value(0.25));
        let c = ExperimentConfig::from_json(r#"{"lambda": "x_norm_over_p"}"#).unwrap();
        assert_eq!(c.lambda, LambdaSpec::Rule(LambdaRule::XNormOverP));
        assert!(ExperimentConfig::from_json(r#"{"lambda": -1}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"replications": 0}"#,
            r#"{"rho": 1.0}"#,
            r#"{"design": "ar_gram", "n": 10, "p": 12}"#,
            r#"{"unknown_key": 3}"#,
            r#"{"s0": 200, "n": 100, "p": 100}"#,
            r#"{"subspace_d": 3}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn square_designs_take_p() {
        let c = ExperimentConfig::from_json(r#"{"design": "ar_gram", "p": 6}"#).unwrap();
        assert_eq!((c.rows(), c.p()), (6, 6));
        let c = ExperimentConfig::from_json(r#"{"design": "identity", "n": 7}"#).unwrap();
        assert_eq!((c.rows(), c.p()), (7, 7));
        let c = ExperimentConfig::from_json(r#"{"design": "gaussian_iid", "n": 20, "p": 30}"#).unwrap();
        assert_eq!((c.rows(), c.p()), (20, 30));
    }
}
