//! Designs, true coefficients and responses for simulated replications.

use crate::config::{DesignKind, ExperimentConfig, Placement, SignalKind};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use sblab_core::model::{load_design, load_observation, TableFormat};
use sblab_core::{DesignMatrix, Error, Model, Observation, Result, RngHandle, SparseCoef};
use std::path::Path;

/// One replication's data.
#[derive(Debug, Clone)]
pub struct Instance {
    pub x: DesignMatrix,
    pub beta0: SparseCoef,
    pub y: Observation,
}

/// Correlation matrix of a Gram-specified design.
pub fn gram_target(kind: DesignKind, p: usize, r: f64, rho: f64, block: usize) -> Option<DMatrix<f64>> {
    match kind {
        DesignKind::Equicorrelated => Some(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { r })),
        DesignKind::ArGram => Some(DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))),
        DesignKind::BlockGram => Some(DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i / block == j / block {
                r
            } else {
                0.0
            }
        })),
        _ => None,
    }
}

/// √n·C^{1/2} from the symmetric eigendecomposition, so that XᵀX/n = C.
pub fn gram_root_design(c: &DMatrix<f64>) -> Result<DesignMatrix> {
    let n = c.nrows();
    let eig = SymmetricEigen::new(c.clone());
    let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(Error::Config(format!("requested Gram matrix is not positive semidefinite (eigenvalue {bad})")));
    }
    let root = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    let v = &eig.eigenvectors;
    let half = v * DMatrix::from_diagonal(&root) * v.transpose();
    DesignMatrix::new(half * (n as f64).sqrt())
}

fn table_format(path: &Path) -> TableFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => TableFormat::Tsv,
        _ => TableFormat::Csv,
    }
}

pub fn generate_design<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<DesignMatrix> {
    if let Some(path) = &cfg.design_file {
        return load_design(path, table_format(path));
    }
    let (n, p) = (cfg.rows(), cfg.p());
    match cfg.design {
        DesignKind::Identity => Ok(DesignMatrix::identity(n)),
        DesignKind::ScaledIdentity => DesignMatrix::identity(n).scaled(1.0 / cfg.sigma_n),
        DesignKind::GaussianIid => DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))),
        kind => {
            let c = gram_target(kind, p, cfg.r, cfg.rho, cfg.block_size).expect("Gram-specified design");
            gram_root_design(&c)
        }
    }
}

/// The support of β⁰ under the configured placement.
pub fn draw_support<R: Rng + ?Sized>(cfg: &ExperimentConfig, p: usize, rng: &mut R) -> Model {
    let s0 = if cfg.signal == SignalKind::Zero { 0 } else { cfg.s0.min(p) };
    match cfg.placement {
        Placement::Prefix => Model::from_unsorted((0..s0).collect()),
        Placement::Random => Model::from_unsorted(sample(rng, p, s0).into_vec()),
    }
}

/// Replaces the last k support columns by Gaussian combinations of the
/// first s0 − k, so span(X_{S0}) has dimension s0 − k.
pub fn plant_collinearity<R: Rng + ?Sized>(x: &DesignMatrix, support: &Model, k: usize, rng: &mut R) -> Result<DesignMatrix> {
    if k == 0 {
        return Ok(x.clone());
    }
    let idx = support.indices();
    if k >= idx.len() {
        return Err(Error::Config("planted_collinear must be smaller than the support".into()));
    }
    let keep = idx.len() - k;
    let mut m = x.matrix().clone();
    for &j in &idx[keep..] {
        let mut col = DVector::zeros(m.nrows());
        for &i in &idx[..keep] {
            let w: f64 = rng.sample(StandardNormal);
            col += x.matrix().column(i) * w;
        }
        let scale = x.matrix().column(j).norm() / col.norm();
        m.set_column(j, &(col * scale));
    }
    DesignMatrix::new(m)
}

/// Magnitudes A√(log p)/‖X‖ (flat) or that times i^{−1} (decaying), with
/// random signs.
pub fn generate_truth<R: Rng + ?Sized>(cfg: &ExperimentConfig, x: &DesignMatrix, support: &Model, rng: &mut R) -> SparseCoef {
    let p = x.p();
    if cfg.signal == SignalKind::Zero || support.is_empty() {
        return SparseCoef::zero(p);
    }
    let base = cfg.amplitude * (p as f64).ln().sqrt() / x.x_norm();
    let values: Vec<f64> = (0..support.s())
        .map(|i| {
            let mag = match cfg.signal {
                SignalKind::Decaying => base / (i + 1) as f64,
                _ => base,
            };
            if rng.random::<bool>() { mag } else { -mag }
        })
        .collect();
    SparseCoef::from_model_values(support, &values, p)
}

/// y = Xβ⁰ + ε with ε standard normal, or exactly Xβ⁰ when noiseless.
pub fn simulate_observation<R: Rng + ?Sized>(x: &DesignMatrix, beta0: &SparseCoef, noiseless: bool, rng: &mut R) -> Result<Observation> {
    if beta0.p() != x.p() {
        return Err(Error::Dimension(format!("β has p = {}, design has {}", beta0.p(), x.p())));
    }
    let mean = x.matrix() * beta0.dense();
    if noiseless {
        return Ok(Observation::new(mean));
    }
    Ok(Observation::new(DVector::from_fn(x.n(), |i, _| mean[i] + rng.sample::<f64, _>(StandardNormal))))
}

/// Replication data from independent streams: design, support, planted
/// collinearity, truth and noise each take their own child of `handle`.
pub fn generate_instance(cfg: &ExperimentConfig, handle: RngHandle) -> Result<Instance> {
    let x = generate_design(cfg, &mut handle.child(0).rng())?;
    let support = draw_support(cfg, x.p(), &mut handle.child(1).rng());
    let x = plant_collinearity(&x, &support, cfg.planted_collinear, &mut handle.child(2).rng())?;
    let beta0 = generate_truth(cfg, &x, &support, &mut handle.child(3).rng());
    let y = match &cfg.response_file {
        Some(path) => {
            let y = load_observation(path, table_format(path))?;
            if y.len() != x.n() {
                return Err(Error::Dimension(format!("response has {} rows, design has {}", y.len(), x.n())));
            }
            y
        }
        None => simulate_observation(&x, &beta0, cfg.noiseless, &mut handle.child(4).rng())?,
    };
    Ok(Instance { x, beta0, y })
}
