//! Discrete space-time error norms, mass traces and experimental orders of
//! convergence.

use std::fmt::Write as _;

use thiserror::Error;

use crate::cases::ProblemCase;
use crate::fespace::{evaluate_gradient, FeError, FeFunction, FeSpace};
use crate::geometry::{DomainSlice, GeometryError, RuleSet, ERROR_QUAD_DEGREE};
use crate::par::Exec;
use crate::stepper::SolutionTrace;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("case '{0}' has no exact solution")]
    NoExactSolution(String),
    #[error("error grid entry (Lt={lt}, Lx={lx}) is not positive: {value}")]
    NonPositiveError { lt: usize, lx: usize, value: f64 },
    #[error("error grid is not rectangular")]
    RaggedGrid,
    #[error("empty trace")]
    EmptyTrace,
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `∫_{Ω_h} u dx` over the discrete domain of `slice`.
pub fn domain_integral(
    space: &FeSpace,
    slice: &DomainSlice,
    u: &FeFunction,
    degree: usize,
) -> Result<f64, AnalysisError> {
    let rules = RuleSet::new(degree)?;
    let mesh = space.mesh();
    let (mut pts, mut wts) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for e in slice.domain_elements() {
        pts.clear();
        wts.clear();
        rules.push_volume(mesh, slice, e, &mut pts, &mut wts);
        let v = u.element_values(space, e)?;
        let tri = mesh.triangle_points(e);
        for (p, w) in pts.iter().zip(&wts) {
            let l = crate::fespace::barycentric(&tri, *p);
            total += w * (l[0] * v[0] + l[1] * v[1] + l[2] * v[2]);
        }
    }
    Ok(total)
}

/// `‖u‖_{L²(Ω_h)}` over the discrete domain of `slice`.
pub fn domain_l2_norm(
    space: &FeSpace,
    slice: &DomainSlice,
    u: &FeFunction,
    degree: usize,
) -> Result<f64, AnalysisError> {
    let rules = RuleSet::new(degree)?;
    let mesh = space.mesh();
    let (mut pts, mut wts) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for e in slice.domain_elements() {
        pts.clear();
        wts.clear();
        rules.push_volume(mesh, slice, e, &mut pts, &mut wts);
        let v = u.element_values(space, e)?;
        let tri = mesh.triangle_points(e);
        for (p, w) in pts.iter().zip(&wts) {
            let l = crate::fespace::barycentric(&tri, *p);
            let uh = l[0] * v[0] + l[1] * v[1] + l[2] * v[2];
            total += w * uh * uh;
        }
    }
    Ok(total.sqrt())
}

/// Squared L2 and H1-seminorm errors of `u` against the exact solution at `t`.
fn step_errors(
    space: &FeSpace,
    slice: &DomainSlice,
    u: &FeFunction,
    case: &ProblemCase,
    t: f64,
    rules: &RuleSet,
    exec: Exec,
) -> Result<(f64, f64), AnalysisError> {
    let exact = case
        .exact
        .as_ref()
        .ok_or_else(|| AnalysisError::NoExactSolution(case.name.clone()))?;
    let elements: Vec<usize> = slice.domain_elements().collect();
    let mesh = space.mesh();
    let parts = exec.map_slice(&elements, |&e| -> Result<(f64, f64), AnalysisError> {
        let (mut pts, mut wts) = (Vec::new(), Vec::new());
        rules.push_volume(mesh, slice, e, &mut pts, &mut wts);
        let v = u.element_values(space, e)?;
        let g = evaluate_gradient(space, u, e)?;
        let tri = mesh.triangle_points(e);
        let (mut l2, mut h1) = (0.0, 0.0);
        for (p, w) in pts.iter().zip(&wts) {
            let l = crate::fespace::barycentric(&tri, *p);
            let d = l[0] * v[0] + l[1] * v[1] + l[2] * v[2] - exact.u.at(*p, t);
            let ge = case.exact_grad(*p, t).expect("exact solution present");
            l2 += w * d * d;
            h1 += w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
        }
        Ok((l2, h1))
    });
    parts
        .into_iter()
        .try_fold((0.0, 0.0), |(a, b), r| r.map(|(x, y)| (a + x, b + y)))
}

/// Errors of one simulation in the discrete space-time norms.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub l2l2: f64,
    pub l2h1: f64,
    pub linf_l2: f64,
    /// `‖u_h^n − uᵉ(t_n)‖_{L²(Ω_h^n)}` for n = 0..=N (index 0 is the initial interpolation error).
    pub step_l2: Vec<f64>,
    /// `‖∇(u_h^n − uᵉ(t_n))‖_{L²(Ω_h^n)}` for n = 0..=N.
    pub step_h1: Vec<f64>,
    pub masses: Vec<f64>,
    pub mass_deviation: f64,
}

impl ErrorReport {
    pub fn norm(&self, which: Norm) -> f64 {
        match which {
            Norm::L2L2 => self.l2l2,
            Norm::L2H1 => self.l2h1,
            Norm::LinfL2 => self.linf_l2,
        }
    }
}

/// The three space-time norms reported in convergence tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Norm {
    L2L2,
    L2H1,
    LinfL2,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L2L2, Norm::L2H1, Norm::LinfL2];

    pub fn name(self) -> &'static str {
        match self {
            Norm::L2L2 => "l2l2",
            Norm::L2H1 => "l2h1",
            Norm::LinfL2 => "linfl2",
        }
    }
}

/// Space-time errors; the time sums run over n = 1..=N with the step sizes of the trace.
pub fn error_norms(
    trace: &SolutionTrace,
    case: &ProblemCase,
    exec: Exec,
) -> Result<ErrorReport, AnalysisError> {
    if trace.states.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    if case.exact.is_none() {
        return Err(AnalysisError::NoExactSolution(case.name.clone()));
    }
    let rules = RuleSet::new(ERROR_QUAD_DEGREE)?;
    let mut step_l2 = Vec::with_capacity(trace.states.len());
    let mut step_h1 = Vec::with_capacity(trace.states.len());
    for s in &trace.states {
        let (l2, h1) = step_errors(&trace.space, &s.slice, &s.u, case, s.t, &rules, exec)?;
        step_l2.push(l2.sqrt());
        step_h1.push(h1.sqrt());
    }
    let (mut l2l2, mut l2h1, mut linf) = (0.0, 0.0, 0.0f64);
    for n in 1..trace.states.len() {
        let dt = trace.states[n].t - trace.states[n - 1].t;
        l2l2 += dt * step_l2[n] * step_l2[n];
        l2h1 += dt * step_h1[n] * step_h1[n];
        linf = linf.max(step_l2[n]);
    }
    let mass = mass_trace(trace)?;
    Ok(ErrorReport {
        l2l2: l2l2.sqrt(),
        l2h1: l2h1.sqrt(),
        linf_l2: linf,
        step_l2,
        step_h1,
        masses: mass.masses,
        mass_deviation: mass.deviation,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassTrace {
    pub masses: Vec<f64>,
    /// `max_k |U^k − U^0|`.
    pub deviation: f64,
}

pub fn mass_trace(trace: &SolutionTrace) -> Result<MassTrace, AnalysisError> {
    if trace.states.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let degree = trace.config.quad_degree;
    let masses = trace
        .states
        .iter()
        .map(|s| domain_integral(&trace.space, &s.slice, &s.u, degree))
        .collect::<Result<Vec<_>, _>>()?;
    let deviation = masses
        .iter()
        .map(|m| (m - masses[0]).abs())
        .fold(0.0, f64::max);
    Ok(MassTrace { masses, deviation })
}

/// `log2(coarse / fine)`.
pub fn eoc(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Error grid indexed `[Lt][Lx]` with its convergence margins. Missing runs
/// are `None`; margins touching a missing entry are `None` as well.
#[derive(Clone, Debug, PartialEq)]
pub struct EocTable {
    pub errors: Vec<Vec<Option<f64>>>,
    /// Along the finest time row, indexed by Lx.
    pub eoc_x: Vec<Option<f64>>,
    /// Along the finest space column, indexed by Lt.
    pub eoc_t: Vec<Option<f64>>,
    /// Along the diagonal `e[L][L]`, indexed by L.
    pub eoc_xt: Vec<Option<f64>>,
    /// Along `e[2L][L]`, indexed by L.
    pub eoc_xtt: Vec<Option<f64>>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(eoc(a?, b?))
}

impl EocTable {
    pub fn new(errors: Vec<Vec<Option<f64>>>) -> Result<Self, AnalysisError> {
        let nt = errors.len();
        let nx = errors.first().map_or(0, Vec::len);
        if errors.iter().any(|r| r.len() != nx) {
            return Err(AnalysisError::RaggedGrid);
        }
        for (lt, row) in errors.iter().enumerate() {
            for (lx, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(AnalysisError::NonPositiveError { lt, lx, value: v });
                    }
                }
            }
        }
        let at = |lt: usize, lx: usize| errors.get(lt).and_then(|r| r.get(lx)).copied().flatten();
        let margin = |n: usize, idx: &dyn Fn(usize) -> (usize, usize)| -> Vec<Option<f64>> {
            (0..n)
                .map(|k| {
                    if k == 0 {
                        return None;
                    }
                    let (a, b) = (idx(k - 1), idx(k));
                    ratio(at(a.0, a.1), at(b.0, b.1))
                })
                .collect()
        };
        let (lt_max, lx_max) = (nt.saturating_sub(1), nx.saturating_sub(1));
        let eoc_x = margin(nx, &|k| (lt_max, k));
        let eoc_t = margin(nt, &|k| (k, lx_max));
        let eoc_xt = margin(nt.min(nx), &|k| (k, k));
        let eoc_xtt = margin(nx, &|k| (2 * k, k));
        Ok(EocTable {
            errors,
            eoc_x,
            eoc_t,
            eoc_xt,
            eoc_xtt,
        })
    }

    /// Table from a complete grid.
    pub fn from_dense(errors: &[Vec<f64>]) -> Result<Self, AnalysisError> {
        Self::new(
            errors
                .iter()
                .map(|r| r.iter().map(|&v| Some(v)).collect())
                .collect(),
        )
    }

    pub fn n_lt(&self) -> usize {
        self.errors.len()
    }

    pub fn n_lx(&self) -> usize {
        self.errors.first().map_or(0, Vec::len)
    }

    /// `log2(e[lt][lx-1] / e[lt][lx])` for any row.
    pub fn eoc_x_at(&self, lt: usize, lx: usize) -> Option<f64> {
        if lx == 0 {
            return None;
        }
        ratio(
            *self.errors.get(lt)?.get(lx - 1)?,
            *self.errors.get(lt)?.get(lx)?,
        )
    }

    /// `log2(e[lt-1][lx] / e[lt][lx])` for any column.
    pub fn eoc_t_at(&self, lt: usize, lx: usize) -> Option<f64> {
        if lt == 0 {
            return None;
        }
        ratio(
            *self.errors.get(lt - 1)?.get(lx)?,
            *self.errors.get(lt)?.get(lx)?,
        )
    }

    /// Paper-style layout: rows Lt, columns Lx, an `eoc_t` column and
    /// `eoc_x`, `eoc_xt`, `eoc_xtt` rows. Missing values print as `---`.
    pub fn to_csv(&self) -> String {
        let dash = || "---".to_string();
        let e = |v: Option<f64>| v.map_or_else(dash, format_sci);
        let r = |v: Option<f64>| v.map_or_else(dash, |v| format!("{v:.3}"));
        let mut out = String::from("Lt\\Lx");
        for lx in 0..self.n_lx() {
            let _ = write!(out, ",{lx}");
        }
        out.push_str(",eoc_t\n");
        for (lt, row) in self.errors.iter().enumerate() {
            let _ = write!(out, "{lt}");
            for v in row {
                let _ = write!(out, ",{}", e(*v));
            }
            let _ = writeln!(out, ",{}", r(self.eoc_t[lt]));
        }
        for (label, margin) in [
            ("eoc_x", &self.eoc_x),
            ("eoc_xt", &self.eoc_xt),
            ("eoc_xtt", &self.eoc_xtt),
        ] {
            out.push_str(label);
            for lx in 0..self.n_lx() {
                let _ = write!(out, ",{}", r(margin.get(lx).copied().flatten()));
            }
            out.push_str(",\n");
        }
        out
    }
}

/// Scientific notation with six decimals and a two-digit signed exponent, e.g. `1.574589e-01`.
pub fn format_sci(v: f64) -> String {
    let s = format!("{v:.6e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            format!("{mantissa}e{sign}{digits:0>2}")
        }
        None => s,
    }
}
