mod common;

use std::sync::Arc;

use common::*;
use cutmove::analysis::{domain_l2_norm, mass_trace};
use cutmove::assembly::{Assembler, FormVariant, GhostVariant};
use cutmove::cases::{builtin_case, Field, ProblemCase};
use cutmove::cli::level_mesh;
use cutmove::fespace::FeSpace;
use cutmove::geometry::{classify, interpolate_levelset, LevelSetField};
use cutmove::linalg::{estimate_condition, SparseMatrix};
use cutmove::mesh::{build_structured_mesh, Rect};
use cutmove::stepper::{check_inclusion, compute_strip_width, run, Scheme, StepConfig, StepError};
use cutmove::Exec;

#[test]
fn example1_coarsest_level_takes_two_steps() {
    let case = builtin_case("example1_travel").unwrap();
    let trace = level_run(&case, Scheme::ImplicitEuler, 0, 0, |_| {});
    assert_eq!(trace.diagnostics.len(), 2);
    assert_eq!(trace.states.len(), 3);
    assert!(trace
        .diagnostics
        .iter()
        .all(|d| d.included && d.residual < 1e-10));
}

#[test]
fn example4_coarse_steps_complete() {
    let case = builtin_case("example4_topology").unwrap();
    let mesh = Arc::new(level_mesh(&case, 0, None).unwrap());
    let cfg = StepConfig {
        dt: case.t_final / 10.0,
        conservative: true,
        ..StepConfig::default()
    };
    let trace = run(&case, mesh, &cfg).unwrap();
    assert_eq!(trace.diagnostics.len(), 10);
}

#[test]
fn example1_geometry_schedule_satisfies_inclusion() {
    let case = builtin_case("example1_travel").unwrap();
    for l in 0..4 {
        let mesh = level_mesh(&case, l, None).unwrap();
        let dt = case.dt0 / 2f64.powi(l as i32);
        let delta = compute_strip_width(&case, dt, Scheme::ImplicitEuler);
        let n = (case.t_final / dt).round() as usize;
        let slices: Vec<_> = (0..=n)
            .map(|k| {
                classify(
                    &mesh,
                    &interpolate_levelset(&case, &mesh, k as f64 * dt).unwrap(),
                    delta,
                    Exec::Parallel,
                )
            })
            .collect();
        assert!(
            slices.windows(2).all(|w| check_inclusion(&w[0], &w[1])),
            "level {l}"
        );
    }
}

#[test]
fn missing_strip_is_fatal_once_the_domain_outruns_the_mesh() {
    let case = builtin_case("example1_travel").unwrap();
    let mesh = Arc::new(level_mesh(&case, 2, None).unwrap());
    let cfg = StepConfig {
        dt: 0.1,
        delta_override: Some(0.0),
        ..StepConfig::default()
    };
    assert!(matches!(
        run(&case, mesh, &cfg),
        Err(StepError::InclusionViolated { step: 1 })
    ));
}

#[test]
fn conservative_steps_keep_the_previous_mass() {
    let case = builtin_case("example3_mass").unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::Bdf2] {
        let trace = level_run(&case, scheme, 1, 2, |c| c.conservative = true);
        let m = mass_trace(&trace).unwrap();
        for w in m.masses.windows(2) {
            assert!((w[1] - w[0]).abs() <= 1e-10 * (1.0 + w[0].abs()));
        }
    }
}

#[test]
fn unforced_runs_stay_bounded() {
    let case = builtin_case("example3_mass").unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::Bdf2] {
        for ghost in [GhostVariant::Direct, GhostVariant::Lps, GhostVariant::DJump] {
            for form in [FormVariant::Implementation, FormVariant::Skew] {
                let trace = level_run(&case, scheme, 1, 1, |c| {
                    c.ghost = ghost;
                    c.form = form;
                });
                let norms: Vec<f64> = trace
                    .states
                    .iter()
                    .map(|s| domain_l2_norm(&trace.space, &s.slice, &s.u, 4).unwrap())
                    .collect();
                let worst = norms.iter().cloned().fold(0.0, f64::max);
                assert!(
                    worst <= 10.0 * norms[0],
                    "{scheme} {ghost} {form}: {norms:?}"
                );
            }
        }
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let case = builtin_case("example2_shrink").unwrap();
    let go = |exec| {
        level_run(&case, Scheme::Bdf2, 1, 1, |c| {
            c.exec = exec;
            c.ghost = GhostVariant::Lps;
            c.form = FormVariant::Skew;
        })
    };
    let (a, b, c) = (go(Exec::Parallel), go(Exec::Parallel), go(Exec::Sequential));
    for ((x, y), z) in a.states.iter().zip(&b.states).zip(&c.states) {
        assert_eq!(x.u, y.u);
        assert_eq!(x.u, z.u);
    }
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn ghost_penalty_rescues_a_sliver_cut() {
    // a vertical interface a hair to the right of a mesh line leaves slivers
    let case = ProblemCase::stationary(
        "slab",
        Rect::unit(),
        1.0,
        1.0,
        Field::constant(-1.0),
        Field::constant(1.0),
    );
    let mesh = build_structured_mesh(case.domain_box, 8, 8, None).unwrap();
    let x_line = 0.5 + 1e-7;
    let values = mesh.vertices().iter().map(|p| p[0] - x_line).collect();
    let space = FeSpace::p1(Arc::new(mesh));
    let slice = classify(
        space.mesh(),
        &LevelSetField { t: 0.0, values },
        0.0,
        Exec::Sequential,
    );
    let asm = Assembler::new(&space, &slice, Exec::Sequential).unwrap();
    let base = SparseMatrix::linear_combination(&[
        (&asm.mass(), 10.0),
        (
            &asm.diffusion_convection(&case, 0.0, FormVariant::Implementation, false),
            1.0,
        ),
    ]);
    let stabilized = SparseMatrix::linear_combination(&[
        (&base, 1.0),
        (&asm.ghost_penalty(GhostVariant::Direct), 1.0),
    ]);
    let with = estimate_condition(&stabilized).unwrap();
    let without = estimate_condition(&base).unwrap_or(f64::INFINITY);
    assert!(without >= 10.0 * with, "{without} vs {with}");
}

#[test]
fn time_step_must_divide_the_interval() {
    let case = builtin_case("example1_travel").unwrap();
    let mesh = Arc::new(level_mesh(&case, 0, None).unwrap());
    let cfg = StepConfig {
        dt: 0.03,
        ..StepConfig::default()
    };
    assert!(matches!(
        run(&case, mesh, &cfg),
        Err(StepError::ConfigInvalid(_))
    ));
}
