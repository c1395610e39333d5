#![allow(dead_code)]

use std::sync::Arc;

use cutmove::analysis::{error_norms, EocTable, ErrorReport};
use cutmove::cases::ProblemCase;
use cutmove::cli::level_mesh;
use cutmove::fespace::FeSpace;
use cutmove::geometry::{classify, DomainSlice, LevelSetField};
use cutmove::mesh::BackgroundMesh;
use cutmove::stepper::{run, Scheme, SolutionTrace, StepConfig};
use cutmove::Exec;

/// Published L2(H1) implicit Euler error grid of the traveling circle, rows Lt, columns Lx.
pub const TABLE1_ERRORS: [[f64; 8]; 8] = [
    [
        1.574589e-01,
        9.734332e-02,
        6.101333e-02,
        4.224456e-02,
        3.379677e-02,
        3.034990e-02,
        2.899458e-02,
        2.845565e-02,
    ],
    [
        1.425875e-01,
        8.523002e-02,
        4.837002e-02,
        2.906107e-02,
        2.030774e-02,
        1.691725e-02,
        1.575183e-02,
        1.537054e-02,
    ],
    [
        1.405987e-01,
        7.754668e-02,
        4.284082e-02,
        2.321583e-02,
        1.385749e-02,
        9.960733e-03,
        8.601672e-03,
        8.189170e-03,
    ],
    [
        1.399389e-01,
        7.667822e-02,
        3.975617e-02,
        2.099506e-02,
        1.126176e-02,
        6.784928e-03,
        5.002498e-03,
        4.413833e-03,
    ],
    [
        1.396726e-01,
        7.626979e-02,
        3.937225e-02,
        1.994142e-02,
        1.034021e-02,
        5.541579e-03,
        3.370015e-03,
        2.524764e-03,
    ],
    [
        1.395826e-01,
        7.609561e-02,
        3.920565e-02,
        1.979783e-02,
        9.975743e-03,
        5.128487e-03,
        2.749836e-03,
        1.682293e-03,
    ],
    [
        1.395376e-01,
        7.599753e-02,
        3.912465e-02,
        1.974102e-02,
        9.914052e-03,
        4.987553e-03,
        2.553543e-03,
        1.369962e-03,
    ],
    [
        1.395230e-01,
        7.595378e-02,
        3.908600e-02,
        1.971663e-02,
        9.893222e-03,
        4.959584e-03,
        2.493576e-03,
        1.274115e-03,
    ],
];
/// Printed margins of the same table, index 0 unused.
pub const TABLE1_EOC_T: [f64; 8] = [f64::NAN, 0.889, 0.908, 0.892, 0.806, 0.586, 0.296, 0.105];
pub const TABLE1_EOC_X: [f64; 8] = [f64::NAN, 0.877, 0.958, 0.987, 0.995, 0.996, 0.992, 0.969];
pub const TABLE1_EOC_XT: [f64; 8] = [f64::NAN, 0.886, 0.992, 1.029, 1.022, 1.012, 1.006, 1.003];

pub fn level_run(
    case: &ProblemCase,
    scheme: Scheme,
    lx: usize,
    lt: usize,
    tweak: impl Fn(&mut StepConfig),
) -> SolutionTrace {
    let mesh = Arc::new(level_mesh(case, lx, None).expect("level mesh"));
    let mut cfg = StepConfig {
        dt: case.dt0 / 2f64.powi(lt as i32),
        scheme,
        ..StepConfig::default()
    };
    tweak(&mut cfg);
    run(case, mesh, &cfg).expect("run completes")
}

/// Error reports on the listed `(lt, lx)` cells, assembled into tables per norm selector.
pub fn study(
    case: &ProblemCase,
    scheme: Scheme,
    cells: &[(usize, usize)],
    norm: impl Fn(&ErrorReport) -> f64,
) -> EocTable {
    let nt = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let nx = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let mut grid = vec![vec![None; nx]; nt];
    for &(lt, lx) in cells {
        let trace = level_run(case, scheme, lx, lt, |_| {});
        let report = error_norms(&trace, case, Exec::Parallel).expect("exact solution");
        grid[lt][lx] = Some(norm(&report));
    }
    EocTable::new(grid).expect("positive errors")
}

/// Two triangles sharing the edge `a b`, with `c` on one side and `d` on the other.
pub fn two_element_patch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> BackgroundMesh {
    BackgroundMesh::from_parts(vec![a, b, c, d], vec![[0, 1, 2], [1, 0, 3]]).expect("valid patch")
}

pub fn slice_from_values(mesh: &BackgroundMesh, values: Vec<f64>, delta: f64) -> DomainSlice {
    classify(
        mesh,
        &LevelSetField { t: 0.0, values },
        delta,
        Exec::Sequential,
    )
}

pub fn space_of(mesh: BackgroundMesh) -> FeSpace {
    FeSpace::p1(Arc::new(mesh))
}
