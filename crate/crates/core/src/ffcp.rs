//! CP decomposition of a tensor given in Tucker format. Every gradient term is
//! formed from the core and the projected factors `V^(n) = U^(n)ᵀ A^(n)`, so
//! the full tensor is never reconstructed.

use crate::cp::{
    cp_als, init_factors, run_alternating, CpModel, CpOutcome, GradientSource, Observer,
    PostUpdate, StopRule, UpdateRule,
};
use crate::error::{Result, TensorError};
use crate::matrix::Matrix;
use crate::random::SeedSpec;
use crate::tensor::mttkrp;
use crate::tucker::TuckerModel;

/// Constraint applied to the factor updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Unconstrained ALS.
    None,
    /// Nonnegative factors by multiplicative updates.
    NonnegMu,
    /// Nonnegative factors by HALS.
    NonnegHals,
    /// ALS followed by entrywise soft-thresholding at `c`.
    Sparse { c: f64 },
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::None => "none",
            Constraint::NonnegMu => "nonneg_mu",
            Constraint::NonnegHals => "nonneg_hals",
            Constraint::Sparse { .. } => "sparse",
        }
    }

    /// Parses `none | nonneg_mu | nonneg_hals | sparse`; `c` is only used for
    /// the sparse variant.
    pub fn parse(name: &str, c: f64) -> Result<Self> {
        match name {
            "none" => Ok(Constraint::None),
            "nonneg_mu" => Ok(Constraint::NonnegMu),
            "nonneg_hals" => Ok(Constraint::NonnegHals),
            "sparse" => {
                if !(c >= 0.0) {
                    return Err(TensorError::InvalidArgument(
                        "sparsity threshold must be nonnegative".into(),
                    ));
                }
                Ok(Constraint::Sparse { c })
            }
            other => Err(TensorError::InvalidArgument(format!("unknown constraint '{other}'"))),
        }
    }

    fn rule(&self) -> UpdateRule {
        match self {
            Constraint::None | Constraint::Sparse { .. } => UpdateRule::Als,
            Constraint::NonnegMu => UpdateRule::Mu,
            Constraint::NonnegHals => UpdateRule::Hals { project: true },
        }
    }
}

/// `S_c(x) = sign(x) · max(|x| − c, 0)`, entrywise.
pub fn soft_threshold(m: &mut Matrix, c: f64) {
    for x in m.data_mut() {
        *x = x.signum() * (x.abs() - c).max(0.0);
    }
}

fn validate_input(t: &TuckerModel, factors: &[Matrix]) -> Result<()> {
    if factors.len() != t.order() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} factors for an order-{} Tucker model",
            factors.len(),
            t.order()
        )));
    }
    for (n, (a, u)) in factors.iter().zip(&t.factors).enumerate() {
        if a.rows() != u.rows() {
            return Err(TensorError::DimensionMismatch(format!(
                "factor {n} has {} rows, mode size is {}",
                a.rows(),
                u.rows()
            )));
        }
    }
    Ok(())
}

fn project_factors(t: &TuckerModel, factors: &[Matrix]) -> Result<Vec<Matrix>> {
    t.factors
        .iter()
        .zip(factors)
        .map(|(u, a)| u.t_matmul(a))
        .collect()
}

/// `Ŷ_(n) B^(n)` for `Ŷ = [[G; U]]`, computed as `U^(n) · G_(n) B_V^(n)`
/// where `B_V^(n)` is the Khatri-Rao product of the projected factors.
pub fn ffcp_yb(t: &TuckerModel, factors: &[Matrix], n: usize) -> Result<Matrix> {
    validate_input(t, factors)?;
    if n >= t.order() {
        return Err(TensorError::ModeOutOfRange {
            mode: n,
            order: t.order(),
        });
    }
    let vs = project_factors(t, factors)?;
    t.factors[n].matmul(&mttkrp(&t.core, &vs, n)?)
}

struct Compressed<'a> {
    t: &'a TuckerModel,
    vs: Vec<Matrix>,
    norm_sq: f64,
    clamp: bool,
}

impl GradientSource for Compressed<'_> {
    fn squared_norm(&self) -> f64 {
        self.norm_sq
    }

    fn yb(&mut self, _factors: &[Matrix], n: usize) -> Result<Matrix> {
        let h = mttkrp(&self.t.core, &self.vs, n)?;
        let yb = self.t.factors[n].matmul(&h)?;
        // the compressed tensor may have negative entries even when the
        // data is nonnegative; the multiplicative numerator must not
        Ok(if self.clamp { yb.map(|x| x.max(0.0)) } else { yb })
    }

    fn factor_updated(&mut self, factors: &[Matrix], n: usize) -> Result<()> {
        self.vs[n] = self.t.factors[n].t_matmul(&factors[n])?;
        Ok(())
    }
}

/// CP decomposition of `[[G; U]]` under `constraint`, with an optional
/// per-sweep observer. The reported fits are relative to the Tucker
/// approximation.
pub fn ffcp_observed(
    t: &TuckerModel,
    rank: usize,
    constraint: Constraint,
    stop: StopRule,
    seed: SeedSpec,
    observer: Option<Observer<'_>>,
) -> Result<CpOutcome> {
    if rank == 0 {
        return Err(TensorError::InvalidArgument("CP rank must be at least 1".into()));
    }
    let rule = constraint.rule();
    let init = init_factors(&t.dims(), rank, rule.is_nonnegative(), seed);
    let mut source = Compressed {
        t,
        vs: project_factors(t, &init)?,
        norm_sq: t.squared_norm()?,
        clamp: rule == UpdateRule::Mu,
    };
    let threshold;
    let post: Option<PostUpdate<'_>> = match constraint {
        Constraint::Sparse { c } => {
            threshold = move |m: &mut Matrix| soft_threshold(m, c);
            Some(&threshold)
        }
        _ => None,
    };
    let (factors, trace) = run_alternating(&mut source, init, rule, stop, post, observer)?;
    Ok(CpOutcome {
        model: CpModel::new(factors)?.normalized(),
        trace,
    })
}

pub fn ffcp(
    t: &TuckerModel,
    rank: usize,
    constraint: Constraint,
    stop: StopRule,
    seed: SeedSpec,
) -> Result<CpOutcome> {
    ffcp_observed(t, rank, constraint, stop, seed, None)
}

/// Baseline: CP-ALS on the core tensor, then `A^(n) = U^(n) V^(n)`.
pub fn tucker_cp(t: &TuckerModel, rank: usize, stop: StopRule, seed: SeedSpec) -> Result<CpOutcome> {
    let inner = cp_als(&t.core, rank, stop, seed)?;
    let factors = t
        .factors
        .iter()
        .zip(&inner.model.factors)
        .map(|(u, v)| u.matmul(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(CpOutcome {
        model: CpModel::new(factors)?.normalized(),
        trace: inner.trace,
    })
}
