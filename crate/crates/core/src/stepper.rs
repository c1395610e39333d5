//! Time loop: per-step geometry, strip width and stabilization weight,
//! assembly and solution of the implicit Euler or BDF2 system, with the
//! optional Lagrange multiplier enforcing discrete mass conservation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::analysis::{domain_integral, AnalysisError};
use crate::assembly::{
    Assembler, AssemblyError, FormVariant, GhostVariant, DEFAULT_NITSCHE_LAMBDA0,
};
use crate::cases::ProblemCase;
use crate::fespace::{interpolate, FeError, FeFunction, FeSpace};
use crate::geometry::{
    classify, interpolate_levelset, DomainSlice, ElementClass, GeometryError, DEFAULT_QUAD_DEGREE,
};
use crate::linalg::{
    estimate_condition, norm2, solve_bordered, solve_with, LinalgError, SolveOptions, SparseMatrix,
};
use crate::mesh::BackgroundMesh;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Scheme {
    #[default]
    ImplicitEuler,
    Bdf2,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ImplicitEuler => "ie",
            Scheme::Bdf2 => "bdf2",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ie" | "euler" => Ok(Scheme::ImplicitEuler),
            "bdf2" => Ok(Scheme::Bdf2),
            o => Err(format!("unknown scheme '{o}' (expected ie|bdf2)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error(
        "step {step}: the domain left the previous active region (inclusion condition violated)"
    )]
    InclusionViolated { step: usize },
    #[error("step {step}: {source}")]
    Linalg { step: usize, source: LinalgError },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub ghost: GhostVariant,
    pub form: FormVariant,
    pub c_gamma: f64,
    pub conservative: bool,
    /// Replaces the strip width derived from the velocity bound.
    pub delta_override: Option<f64>,
    /// Replaces `c_gamma * K` (e.g. zero to switch stabilization off).
    pub gamma_override: Option<f64>,
    pub solver: SolveOptions,
    pub exec: Exec,
    pub quad_degree: usize,
    pub nitsche_lambda0: f64,
    pub estimate_condition: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dt: 0.1,
            scheme: Scheme::ImplicitEuler,
            ghost: GhostVariant::Direct,
            form: FormVariant::Implementation,
            c_gamma: 1.0,
            conservative: false,
            delta_override: None,
            gamma_override: None,
            solver: SolveOptions::default(),
            exec: Exec::default(),
            quad_degree: DEFAULT_QUAD_DEGREE,
            nitsche_lambda0: DEFAULT_NITSCHE_LAMBDA0,
            estimate_condition: false,
        }
    }
}

impl StepConfig {
    fn validate(&self) -> Result<(), StepError> {
        if !(self.dt > 0.0) {
            return Err(StepError::ConfigInvalid(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.c_gamma > 0.0) {
            return Err(StepError::ConfigInvalid(format!(
                "c_gamma must be positive, got {}",
                self.c_gamma
            )));
        }
        if matches!(self.delta_override, Some(d) if !(d >= 0.0)) {
            return Err(StepError::ConfigInvalid(
                "strip width override must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub delta_h: f64,
    pub k_tilde: usize,
    pub gamma_s: f64,
    pub xi_h_dt: f64,
    pub residual: f64,
    pub included: bool,
    pub n_dofs: usize,
    pub condition: Option<f64>,
}

impl fmt::Display for StepDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} t={} delta_h={} K={} gamma_s={} xi_h_dt={} residual={:e} included={}",
            self.step,
            self.t,
            self.delta_h,
            self.k_tilde,
            self.gamma_s,
            self.xi_h_dt,
            self.residual,
            u8::from(self.included)
        )?;
        if let Some(c) = self.condition {
            write!(f, " cond={c:e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TraceState {
    pub t: f64,
    pub slice: DomainSlice,
    pub u: FeFunction,
}

#[derive(Clone, Debug)]
pub struct SolutionTrace {
    pub space: FeSpace,
    pub config: StepConfig,
    pub states: Vec<TraceState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Modelling choices that affect how results compare to reference data.
    pub notes: Vec<String>,
}

/// Strip half-width: `w_inf dt` for implicit Euler, twice that for BDF2.
pub fn compute_strip_width(case: &ProblemCase, dt: f64, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::ImplicitEuler => case.w_inf * dt,
        Scheme::Bdf2 => 2.0 * case.w_inf * dt,
    }
}

/// `K = ceil(delta / h)` (at least 1) and `gamma_s = c_gamma K`.
pub fn stabilization_weight(delta_h: f64, h: f64, c_gamma: f64) -> (usize, f64) {
    assert!(h > 0.0);
    let k = ((delta_h / h).ceil() as usize).max(1);
    (k, c_gamma * k as f64)
}

/// True iff every element touching the new domain was active before.
pub fn check_inclusion(prev: &DomainSlice, curr: &DomainSlice) -> bool {
    curr.class
        .iter()
        .zip(&prev.active)
        .all(|(c, &a)| *c == ElementClass::Outside || a)
}

/// `xi_h dt` for the coercivity bound; the interface term only enters for the
/// skew form, with trace constant 1.
fn xi_h(
    space: &FeSpace,
    slice: &DomainSlice,
    case: &ProblemCase,
    t: f64,
    form: FormVariant,
) -> f64 {
    let mesh = space.mesh();
    let mut div = 0.0f64;
    for e in slice.domain_elements() {
        for p in mesh.triangle_points(e) {
            div = div.max(case.div_w(p, t).abs());
        }
    }
    let mut wn = 0.0f64;
    if form == FormVariant::Skew {
        for e in slice.cut_elements() {
            let c = slice.cut(e).expect("cut data");
            let [a, b] = c.interface;
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let w = case.w(mid, t);
            wn = wn.max((w[0] * c.normal[0] + w[1] * c.normal[1]).abs());
        }
    }
    0.5 * (div + case.alpha + wn * wn / (4.0 * case.alpha))
}

/// Previous time levels consumed by one step.
pub struct History<'a> {
    pub prev: (&'a FeFunction, &'a DomainSlice),
    /// Second previous level; its presence selects the BDF2 stencil.
    pub prev2: Option<(&'a FeFunction, &'a DomainSlice)>,
}

/// Advances one time step onto `slice` at time `t`.
pub fn step(
    space: &FeSpace,
    history: &History<'_>,
    slice: &DomainSlice,
    config: &StepConfig,
    case: &ProblemCase,
    t: f64,
    step_index: usize,
) -> Result<(FeFunction, StepDiagnostics), StepError> {
    config.validate()?;
    let included = check_inclusion(history.prev.1, slice)
        && history.prev2.is_none_or(|(_, s)| check_inclusion(s, slice));
    if !included {
        return Err(StepError::InclusionViolated { step: step_index });
    }
    let dt = config.dt;
    let h = space.mesh().h();
    let (k_tilde, mut gamma_s) = stabilization_weight(slice.delta_h, h, config.c_gamma);
    if let Some(g) = config.gamma_override {
        gamma_s = g;
    }
    let asm = Assembler::with_degree(space, slice, config.quad_degree, config.exec)?;
    let dirichlet = case.dirichlet.is_some();
    let mass = asm.mass();
    let a = asm.diffusion_convection(case, t, config.form, !dirichlet);
    let s = asm.ghost_penalty(config.ghost);
    let read = |u: &FeFunction| {
        asm.mass_times(u).map_err(|e| match e {
            AssemblyError::Fe(FeError::InactiveElement(_)) => {
                StepError::InclusionViolated { step: step_index }
            }
            other => other.into(),
        })
    };
    let m1 = read(history.prev.0)?;
    let (c0, mut rhs) = match history.prev2 {
        None => (1.0, m1.iter().map(|v| v / dt).collect::<Vec<_>>()),
        Some((u2, _)) => {
            let m2 = read(u2)?;
            (
                1.5,
                m1.iter()
                    .zip(&m2)
                    .map(|(a, b)| (4.0 * a - b) / (2.0 * dt))
                    .collect(),
            )
        }
    };
    if let Some(f) = &case.source {
        let b = asm.source(|x| f.at(x, t))?;
        rhs.iter_mut().zip(&b).for_each(|(r, v)| *r += v);
    }
    let mut terms: Vec<(&SparseMatrix, f64)> = vec![(&mass, c0 / dt), (&a, 1.0), (&s, gamma_s)];
    let nitsche;
    if dirichlet {
        let (n, g) = asm.nitsche(case, t, config.nitsche_lambda0)?;
        nitsche = n;
        terms.push((&nitsche, 1.0));
        rhs.iter_mut().zip(&g).for_each(|(r, v)| *r += v);
    }
    let k = SparseMatrix::linear_combination(&terms);
    let lin = |source| StepError::Linalg {
        step: step_index,
        source,
    };
    let rel_residual = |x: &[f64], shift: &dyn Fn(usize) -> f64| {
        let r = k.matvec(x);
        let num: Vec<f64> = r
            .iter()
            .zip(&rhs)
            .enumerate()
            .map(|(i, (a, b))| a + shift(i) - b)
            .collect();
        norm2(&num) / norm2(&rhs).max(f64::MIN_POSITIVE)
    };
    let (x, residual) = if config.conservative {
        let c = asm.constraint_vector();
        let g = domain_integral(space, history.prev.1, history.prev.0, config.quad_degree)?;
        let (x, l) = solve_bordered(&k, &c, &rhs, g, &config.solver).map_err(lin)?;
        let r = rel_residual(&x, &|i| l * c[i]);
        (x, r)
    } else {
        let x = solve_with(&k, &rhs, &config.solver).map_err(lin)?;
        let r = rel_residual(&x, &|_| 0.0);
        (x, r)
    };
    let condition = if config.estimate_condition {
        Some(estimate_condition(&k).map_err(lin)?)
    } else {
        None
    };
    let xi_dt = xi_h(space, slice, case, t, config.form) * dt;
    if xi_dt >= 1.0 {
        log::warn!("step {step_index}: time step restriction violated (xi_h dt = {xi_dt:.3} >= 1)");
    }
    let u = FeFunction::from_local(asm.dofs(), &x);
    let diag = StepDiagnostics {
        step: step_index,
        t,
        delta_h: slice.delta_h,
        k_tilde,
        gamma_s,
        xi_h_dt: xi_dt,
        residual,
        included,
        n_dofs: asm.n(),
        condition,
    };
    Ok((u, diag))
}

/// Number of uniform steps of size `dt` covering `[0, t_final]`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize, StepError> {
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-12 * t_final.max(f64::MIN_POSITIVE) {
        return Err(StepError::ConfigInvalid(format!(
            "T = {t_final} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// Runs the full time loop from the interpolated initial datum.
pub fn run(
    case: &ProblemCase,
    mesh: Arc<BackgroundMesh>,
    config: &StepConfig,
) -> Result<SolutionTrace, StepError> {
    config.validate()?;
    let n_steps = step_count(case.t_final, config.dt)?;
    let space = FeSpace::p1(mesh);
    let delta = config
        .delta_override
        .unwrap_or_else(|| compute_strip_width(case, config.dt, config.scheme));
    let make_slice = |t: f64| -> Result<DomainSlice, StepError> {
        let ls = interpolate_levelset(case, space.mesh(), t)?;
        Ok(classify(space.mesh(), &ls, delta, config.exec))
    };
    let slice0 = make_slice(0.0)?;
    let u0 = interpolate(&space, &slice0, |p| case.u0.at(p, 0.0))?;
    let mut notes = case.notes.clone();
    if config.scheme == Scheme::Bdf2 {
        notes.push("BDF2 started with one implicit Euler step".into());
        if config.conservative {
            notes.push("conservative BDF2 enforces the mass of the previous level".into());
        }
    }
    notes.push(format!(
        "quadrature exactness degree {}",
        config.quad_degree
    ));
    let mut trace = SolutionTrace {
        space: space.clone(),
        config: config.clone(),
        states: vec![TraceState {
            t: 0.0,
            slice: slice0,
            u: u0,
        }],
        diagnostics: Vec::with_capacity(n_steps),
        notes,
    };
    for n in 1..=n_steps {
        let t = n as f64 * config.dt;
        let slice = make_slice(t)?;
        let last = trace.states.len() - 1;
        let prev = &trace.states[last];
        let prev2 = (config.scheme == Scheme::Bdf2 && n >= 2).then(|| {
            let s = &trace.states[last - 1];
            (&s.u, &s.slice)
        });
        let history = History {
            prev: (&prev.u, &prev.slice),
            prev2,
        };
        let (u, diag) = step(&space, &history, &slice, config, case, t, n)?;
        log::info!(target: "cutmove::diagnostics", "{diag}");
        trace.diagnostics.push(diag);
        trace.states.push(TraceState { t, slice, u });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{builtin_case, Field};
    use crate::mesh::{build_structured_mesh, Rect};

    #[test]
    fn strip_width_rule() {
        let mut case = builtin_case("example2_grow").unwrap();
        assert!((compute_strip_width(&case, 0.1, Scheme::ImplicitEuler) - 0.1).abs() < 1e-16);
        assert!((compute_strip_width(&case, 0.1, Scheme::Bdf2) - 0.2).abs() < 1e-16);
        case.w_inf = 0.0;
        assert_eq!(compute_strip_width(&case, 0.1, Scheme::Bdf2), 0.0);
    }

    #[test]
    fn stabilization_weight_rule() {
        assert_eq!(stabilization_weight(0.1, 0.2, 1.0), (1, 1.0));
        assert_eq!(stabilization_weight(0.5, 0.1, 1.0), (5, 5.0));
        assert_eq!(stabilization_weight(0.0, 0.1, 2.5), (1, 2.5));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("bdf2".parse::<Scheme>().unwrap(), Scheme::Bdf2);
        assert_eq!(Scheme::ImplicitEuler.to_string(), "ie");
        assert!("rk4".parse::<Scheme>().is_err());
    }

    fn disk_case(t_final: f64) -> ProblemCase {
        ProblemCase::stationary(
            "disk",
            Rect::new(-1.0, 1.0, -1.0, 1.0),
            t_final,
            1.0,
            Field::parse("sqrt(x^2 + y^2) - 0.7").unwrap(),
            Field::constant(3.0),
        )
    }

    #[test]
    fn zero_steps_gives_initial_state() {
        let case = disk_case(0.0);
        let mesh = Arc::new(build_structured_mesh(case.domain_box, 4, 4, None).unwrap());
        let cfg = StepConfig {
            dt: 1.0,
            ..Default::default()
        };
        let trace = run(&case, mesh, &cfg).unwrap();
        assert_eq!(trace.states.len(), 1);
        assert!(trace.diagnostics.is_empty());
    }

    #[test]
    fn incommensurate_step_rejected() {
        let case = disk_case(1.0);
        let mesh = Arc::new(build_structured_mesh(case.domain_box, 4, 4, None).unwrap());
        let cfg = StepConfig {
            dt: 0.3,
            ..Default::default()
        };
        assert!(matches!(
            run(&case, mesh, &cfg),
            Err(StepError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn constants_preserved_on_stationary_domain() {
        let case = disk_case(1.0);
        let mesh = Arc::new(build_structured_mesh(case.domain_box, 12, 12, None).unwrap());
        let cfg = StepConfig {
            dt: 0.1,
            ..Default::default()
        };
        let trace = run(&case, mesh, &cfg).unwrap();
        assert_eq!(trace.states.len(), 11);
        for s in &trace.states {
            for (i, &c) in s.u.coefficients().iter().enumerate() {
                if s.u.is_active(i) {
                    assert!((c - 3.0).abs() < 1e-10);
                }
            }
        }
        assert!(trace
            .diagnostics
            .iter()
            .all(|d| d.included && d.residual < 1e-10));
    }

    #[test]
    fn inclusion_detects_jumps() {
        let mesh = build_structured_mesh(Rect::new(-1.0, 1.0, -1.0, 1.0), 10, 10, None).unwrap();
        let slice_at = |cx: f64| {
            let c = ProblemCase::stationary(
                "c",
                Rect::unit(),
                1.0,
                1.0,
                Field::parse(&format!("sqrt((x-{cx})^2 + y^2) - 0.4")).unwrap(),
                Field::constant(0.0),
            );
            classify(
                &mesh,
                &interpolate_levelset(&c, &mesh, 0.0).unwrap(),
                0.0,
                Exec::Sequential,
            )
        };
        let a = slice_at(0.0);
        assert!(check_inclusion(&a, &a));
        assert!(!check_inclusion(&a, &slice_at(0.5)));
    }

    #[test]
    fn bdf2_and_conservative_runs_keep_constants() {
        let case = disk_case(0.4);
        let mesh = Arc::new(build_structured_mesh(case.domain_box, 10, 10, None).unwrap());
        for (scheme, conservative) in [
            (Scheme::Bdf2, false),
            (Scheme::ImplicitEuler, true),
            (Scheme::Bdf2, true),
        ] {
            let cfg = StepConfig {
                dt: 0.1,
                scheme,
                conservative,
                ..Default::default()
            };
            let trace = run(&case, mesh.clone(), &cfg).unwrap();
            let last = trace.states.last().unwrap();
            let v = last
                .u
                .coefficients()
                .iter()
                .zip(last.u.mask())
                .filter(|(_, m)| **m)
                .map(|(c, _)| *c);
            assert!(
                v.into_iter().all(|c| (c - 3.0).abs() < 1e-9),
                "{scheme} {conservative}"
            );
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let case = builtin_case("example1_travel").unwrap();
        let mesh = Arc::new(build_structured_mesh(case.domain_box, 12, 10, None).unwrap());
        let cfg = StepConfig {
            dt: 0.05,
            ..Default::default()
        };
        let a = run(&case, mesh.clone(), &cfg).unwrap();
        let b = run(
            &case,
            mesh,
            &StepConfig {
                exec: Exec::Sequential,
                ..cfg
            },
        )
        .unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.u, y.u);
        }
    }
}
