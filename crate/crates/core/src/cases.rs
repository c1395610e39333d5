//! Problem data: level set, velocity, diffusivity, initial/exact solutions and
//! sources. The built-in benchmark problems are written in the same case-file
//! language that users load from disk, so every built-in case can be
//! serialized and reloaded without change.
//!
//! Case file format (UTF-8, one entry per line, `#` starts a comment):
//!
//! ```text
//! name   = my_case
//! box    = x0 x1 y0 y1          # each entry a constant expression
//! T      = ln(2)
//! alpha  = 0.1
//! let r  = sqrt(x^2 + y^2)      # named sub-expression, usable below
//! phi    = r - 0.5
//! wx     = x                    # velocity components (default 0)
//! wy     = y
//! divw   = 2                    # required when w is not identically zero
//! winf   = 1                    # bound on |w.n| (required when w != 0)
//! u0     = cos(pi*r)
//! uex    = ...                  # optional exact solution
//! uex_dx = ...  uex_dy = ...    # optional exact gradient
//! f      = ...                  # optional source
//! gD     = ...                  # optional Dirichlet data
//! h0 = 0.2   dt0 = 0.1          # optional base resolution
//! scheme = bdf2   ghost = dir   form = impl   cgamma = 1   conservative = true
//! ```

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{FormVariant, GhostVariant};
use crate::expr::{Bindings, Expr, ParseError};
use crate::mesh::Rect;
use crate::stepper::Scheme;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("missing field '{0}'")]
    MissingField(String),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid case data: {0}")]
    Invalid(String),
    #[error("field '{0}' is not expression-backed and cannot be serialized")]
    NotSerializable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A scalar function of `(x, y, t)`.
#[derive(Clone)]
pub enum Field {
    Expr(Expr),
    Native(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl Field {
    pub fn native(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Field {
        Field::Native(Arc::new(f))
    }

    pub fn constant(v: f64) -> Field {
        Field::Expr(Expr::parse(&format!("{v:e}")).expect("numeric literal"))
    }

    pub fn parse(src: &str) -> Result<Field, ParseError> {
        Ok(Field::Expr(Expr::parse(src)?))
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Field::Expr(e) => e.eval(x, y, t),
            Field::Native(f) => f(x, y, t),
        }
    }

    #[inline]
    pub fn at(&self, p: [f64; 2], t: f64) -> f64 {
        self.eval(p[0], p[1], t)
    }

    /// True if the field is a literal zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, Field::Expr(e) if e.as_constant() == Some(0.0))
    }

    fn source(&self) -> Option<&str> {
        match self {
            Field::Expr(e) => Some(e.source()),
            Field::Native(_) => None,
        }
    }
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Expr(e) => write!(f, "{e:?}"),
            Field::Native(_) => write!(f, "Native(..)"),
        }
    }
}

/// Exact solution with optional analytic gradient.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub u: Field,
    pub grad: Option<[Field; 2]>,
}

/// Per-case defaults for the run configuration (overridden by CLI flags).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaseDefaults {
    pub scheme: Option<Scheme>,
    pub ghost: Option<GhostVariant>,
    pub form: Option<FormVariant>,
    pub c_gamma: Option<f64>,
    pub conservative: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct ProblemCase {
    pub name: String,
    pub domain_box: Rect,
    pub t_final: f64,
    pub alpha: f64,
    pub phi: Field,
    pub velocity: [Field; 2],
    pub div_velocity: Field,
    /// Bound on `|w . n|` used for the strip width.
    pub w_inf: f64,
    pub u0: Field,
    pub exact: Option<ExactSolution>,
    pub source: Option<Field>,
    pub dirichlet: Option<Field>,
    pub h0: f64,
    pub dt0: f64,
    pub defaults: CaseDefaults,
    /// Declared modelling choices reported in run metadata.
    pub notes: Vec<String>,
    bindings: Vec<(String, String)>,
    source_is_derived: bool,
}

impl ProblemCase {
    /// A case with stationary geometry and no flow; convenient for tests.
    pub fn stationary(
        name: &str,
        domain_box: Rect,
        t_final: f64,
        alpha: f64,
        phi: Field,
        u0: Field,
    ) -> Self {
        ProblemCase {
            name: name.into(),
            domain_box,
            t_final,
            alpha,
            phi,
            velocity: [Field::constant(0.0), Field::constant(0.0)],
            div_velocity: Field::constant(0.0),
            w_inf: 0.0,
            u0,
            exact: None,
            source: None,
            dirichlet: None,
            h0: domain_box.width().min(domain_box.height()) / 8.0,
            dt0: t_final / 10.0,
            defaults: CaseDefaults::default(),
            notes: Vec::new(),
            bindings: Vec::new(),
            source_is_derived: false,
        }
    }

    #[inline]
    pub fn w(&self, p: [f64; 2], t: f64) -> [f64; 2] {
        [self.velocity[0].at(p, t), self.velocity[1].at(p, t)]
    }

    #[inline]
    pub fn div_w(&self, p: [f64; 2], t: f64) -> f64 {
        self.div_velocity.at(p, t)
    }

    pub fn f(&self, p: [f64; 2], t: f64) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f.at(p, t))
    }

    pub fn has_flow(&self) -> bool {
        !(self.velocity[0].is_zero() && self.velocity[1].is_zero())
    }

    /// Gradient of the exact solution (analytic if given, else central
    /// differences with step 1e-6).
    pub fn exact_grad(&self, p: [f64; 2], t: f64) -> Option<[f64; 2]> {
        let ex = self.exact.as_ref()?;
        Some(match &ex.grad {
            Some([gx, gy]) => [gx.at(p, t), gy.at(p, t)],
            None => {
                let d = 1e-6;
                [
                    (ex.u.eval(p[0] + d, p[1], t) - ex.u.eval(p[0] - d, p[1], t)) / (2.0 * d),
                    (ex.u.eval(p[0], p[1] + d, t) - ex.u.eval(p[0], p[1] - d, t)) / (2.0 * d),
                ]
            }
        })
    }

    /// True when the source was synthesized from the exact solution by
    /// finite differences rather than given explicitly.
    pub fn source_is_derived(&self) -> bool {
        self.source_is_derived
    }

    fn validate(&self) -> Result<(), CaseError> {
        if !(self.alpha > 0.0) {
            return Err(CaseError::Invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.t_final > 0.0) {
            return Err(CaseError::Invalid(format!(
                "T must be positive, got {}",
                self.t_final
            )));
        }
        if !(self.w_inf >= 0.0) {
            return Err(CaseError::Invalid(format!(
                "winf must be non-negative, got {}",
                self.w_inf
            )));
        }
        if !(self.h0 > 0.0 && self.dt0 > 0.0) {
            return Err(CaseError::Invalid("h0 and dt0 must be positive".into()));
        }
        let b = self.domain_box;
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(CaseError::Invalid("box must have positive extent".into()));
        }
        Ok(())
    }

    /// Serializes the case in the case-file format. Fails if any field is
    /// backed by native code instead of an expression.
    pub fn to_config_string(&self) -> Result<String, CaseError> {
        let mut s = String::new();
        let b = self.domain_box;
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "box = {:e} {:e} {:e} {:e}", b.x0, b.x1, b.y0, b.y1);
        let _ = writeln!(s, "T = {:e}", self.t_final);
        let _ = writeln!(s, "alpha = {:e}", self.alpha);
        let _ = writeln!(s, "winf = {:e}", self.w_inf);
        let _ = writeln!(s, "h0 = {:e}", self.h0);
        let _ = writeln!(s, "dt0 = {:e}", self.dt0);
        for (name, src) in &self.bindings {
            let _ = writeln!(s, "let {name} = {src}");
        }
        let src = |key: &str, f: &Field| {
            f.source()
                .map(str::to_owned)
                .ok_or(CaseError::NotSerializable(key.into()))
        };
        let _ = writeln!(s, "phi = {}", src("phi", &self.phi)?);
        let _ = writeln!(s, "wx = {}", src("wx", &self.velocity[0])?);
        let _ = writeln!(s, "wy = {}", src("wy", &self.velocity[1])?);
        let _ = writeln!(s, "divw = {}", src("divw", &self.div_velocity)?);
        let _ = writeln!(s, "u0 = {}", src("u0", &self.u0)?);
        if let Some(ex) = &self.exact {
            let _ = writeln!(s, "uex = {}", src("uex", &ex.u)?);
            if let Some([gx, gy]) = &ex.grad {
                let _ = writeln!(s, "uex_dx = {}", src("uex_dx", gx)?);
                let _ = writeln!(s, "uex_dy = {}", src("uex_dy", gy)?);
            }
        }
        if let (Some(f), false) = (&self.source, self.source_is_derived) {
            let _ = writeln!(s, "f = {}", src("f", f)?);
        }
        if let Some(g) = &self.dirichlet {
            let _ = writeln!(s, "gD = {}", src("gD", g)?);
        }
        let d = &self.defaults;
        if let Some(v) = d.scheme {
            let _ = writeln!(s, "scheme = {v}");
        }
        if let Some(v) = d.ghost {
            let _ = writeln!(s, "ghost = {v}");
        }
        if let Some(v) = d.form {
            let _ = writeln!(s, "form = {v}");
        }
        if let Some(v) = d.c_gamma {
            let _ = writeln!(s, "cgamma = {v:e}");
        }
        if let Some(v) = d.conservative {
            let _ = writeln!(s, "conservative = {v}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note = {n}");
        }
        Ok(s)
    }
}

/// Parses a case from case-file text.
pub fn parse_case(text: &str) -> Result<ProblemCase, CaseError> {
    let mut bindings = Bindings::new();
    let mut binding_src = Vec::new();
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut notes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let Some((key, value)) = l.split_once('=') else {
            return Err(CaseError::Syntax {
                line,
                msg: "expected 'key = value'".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(name) = key.strip_prefix("let ") {
            let name = name.trim();
            if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                || matches!(name, "x" | "y" | "t" | "pi")
            {
                return Err(CaseError::Syntax {
                    line,
                    msg: format!("invalid binding name '{name}'"),
                });
            }
            bindings
                .bind(name, value)
                .map_err(|source| CaseError::Parse { line, source })?;
            binding_src.push((name.to_string(), value.to_string()));
        } else if key == "note" {
            notes.push(value.to_string());
        } else {
            if entries.iter().any(|(_, k, _)| k == key) {
                return Err(CaseError::Syntax {
                    line,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            entries.push((line, key.to_string(), value.to_string()));
        }
    }
    let get = |key: &str| {
        entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
    };
    let field = |key: &str| -> Result<Option<Field>, CaseError> {
        match get(key) {
            None => Ok(None),
            Some((line, v)) => Expr::parse_with(v, &bindings)
                .map(|e| Some(Field::Expr(e)))
                .map_err(|source| CaseError::Parse { line, source }),
        }
    };
    let required = |key: &str| field(key)?.ok_or_else(|| CaseError::MissingField(key.into()));
    let number = |key: &str| -> Result<Option<f64>, CaseError> {
        match get(key) {
            None => Ok(None),
            Some((line, v)) => {
                let e = Expr::parse_with(v, &bindings)
                    .map_err(|source| CaseError::Parse { line, source })?;
                e.as_constant().map(Some).ok_or(CaseError::Syntax {
                    line,
                    msg: format!("'{key}' must be a constant"),
                })
            }
        }
    };
    let choice = |key: &str| -> Result<Option<(usize, &str)>, CaseError> { Ok(get(key)) };

    let known = [
        "name",
        "box",
        "T",
        "alpha",
        "phi",
        "wx",
        "wy",
        "divw",
        "winf",
        "u0",
        "uex",
        "uex_dx",
        "uex_dy",
        "f",
        "gD",
        "h0",
        "dt0",
        "scheme",
        "ghost",
        "form",
        "cgamma",
        "conservative",
    ];
    if let Some((line, k, _)) = entries
        .iter()
        .find(|(_, k, _)| !known.contains(&k.as_str()))
    {
        return Err(CaseError::Syntax {
            line: *line,
            msg: format!("unknown key '{k}'"),
        });
    }

    let name = get("name")
        .map(|(_, v)| v.to_string())
        .ok_or(CaseError::MissingField("name".into()))?;
    let (box_line, box_src) = get("box").ok_or(CaseError::MissingField("box".into()))?;
    let coords: Vec<f64> = box_src
        .split_whitespace()
        .map(|s| {
            Expr::parse_with(s, &bindings)
                .map_err(|source| CaseError::Parse {
                    line: box_line,
                    source,
                })?
                .as_constant()
                .ok_or(CaseError::Syntax {
                    line: box_line,
                    msg: "box entries must be constants".into(),
                })
        })
        .collect::<Result<_, _>>()?;
    if coords.len() != 4 {
        return Err(CaseError::Syntax {
            line: box_line,
            msg: "box needs 'x0 x1 y0 y1'".into(),
        });
    }
    let domain_box = Rect::new(coords[0], coords[1], coords[2], coords[3]);
    let t_final = number("T")?.ok_or(CaseError::MissingField("T".into()))?;
    let alpha = number("alpha")?.ok_or(CaseError::MissingField("alpha".into()))?;
    let phi = required("phi")?;
    let u0 = required("u0")?;
    let wx = field("wx")?.unwrap_or(Field::constant(0.0));
    let wy = field("wy")?.unwrap_or(Field::constant(0.0));
    let flow = !(wx.is_zero() && wy.is_zero());
    let div_velocity = match field("divw")? {
        Some(d) => d,
        None if flow => return Err(CaseError::MissingField("divw".into())),
        None => Field::constant(0.0),
    };
    let w_inf = match number("winf")? {
        Some(v) => v,
        None if flow => return Err(CaseError::MissingField("winf".into())),
        None => 0.0,
    };
    let exact = match field("uex")? {
        Some(u) => {
            let grad = match (field("uex_dx")?, field("uex_dy")?) {
                (Some(gx), Some(gy)) => Some([gx, gy]),
                (None, None) => None,
                (Some(_), None) => return Err(CaseError::MissingField("uex_dy".into())),
                (None, Some(_)) => return Err(CaseError::MissingField("uex_dx".into())),
            };
            Some(ExactSolution { u, grad })
        }
        None => None,
    };
    let defaults = CaseDefaults {
        scheme: parse_choice(choice("scheme")?)?,
        ghost: parse_choice(choice("ghost")?)?,
        form: parse_choice(choice("form")?)?,
        c_gamma: number("cgamma")?,
        conservative: parse_choice(choice("conservative")?)?,
    };
    let mut case = ProblemCase {
        name,
        domain_box,
        t_final,
        alpha,
        phi,
        velocity: [wx, wy],
        div_velocity,
        w_inf,
        u0,
        exact,
        source: field("f")?,
        dirichlet: field("gD")?,
        h0: number("h0")?.unwrap_or(domain_box.width().min(domain_box.height()) / 8.0),
        dt0: number("dt0")?.unwrap_or(t_final / 10.0),
        defaults,
        notes,
        bindings: binding_src,
        source_is_derived: false,
    };
    if case.source.is_none() && case.exact.is_some() {
        case.source = Some(derived_source(&case));
        case.source_is_derived = true;
    }
    case.validate()?;
    Ok(case)
}

fn parse_choice<T>(entry: Option<(usize, &str)>) -> Result<Option<T>, CaseError>
where
    T: std::str::FromStr,
    T::Err: fmt::Display,
{
    entry
        .map(|(line, v)| {
            v.parse::<T>().map_err(|e| CaseError::Syntax {
                line,
                msg: e.to_string(),
            })
        })
        .transpose()
}

/// Source `f = du/dt + div(u w) - alpha * lap(u)` from the exact solution by
/// central differences.
fn derived_source(case: &ProblemCase) -> Field {
    let u = case.exact.as_ref().expect("exact solution").u.clone();
    let [wx, wy] = case.velocity.clone();
    let alpha = case.alpha;
    Field::native(move |x, y, t| {
        let d = 1e-4;
        let uw = |x: f64, y: f64, w: &Field| u.eval(x, y, t) * w.eval(x, y, t);
        let dt = (u.eval(x, y, t + d) - u.eval(x, y, t - d)) / (2.0 * d);
        let div = (uw(x + d, y, &wx) - uw(x - d, y, &wx) + uw(x, y + d, &wy) - uw(x, y - d, &wy))
            / (2.0 * d);
        let c = u.eval(x, y, t);
        let lap =
            (u.eval(x + d, y, t) + u.eval(x - d, y, t) + u.eval(x, y + d, t) + u.eval(x, y - d, t)
                - 4.0 * c)
                / (d * d);
        dt + div - alpha * lap
    })
}

pub fn load_case(path: &Path) -> Result<ProblemCase, CaseError> {
    parse_case(&std::fs::read_to_string(path)?)
}

/// Names accepted by [`builtin_case`].
pub const BUILTIN_CASES: [&str; 5] = [
    "example1_travel",
    "example2_grow",
    "example2_shrink",
    "example3_mass",
    "example4_topology",
];

/// Traveling circle: the disk of radius 1/2 is carried by the spatially
/// constant velocity `(2 cos(2 pi t), 0)`. The exact solution is transported
/// with the disk, so the source only has to cancel the diffusion term.
const EXAMPLE1: &str = "
name = example1_travel
box = -0.7 0.9 -0.7 0.7
T = 0.2
alpha = 1
h0 = 0.2
dt0 = 0.1
winf = 2
let rx = x - sin(2*pi*t)/pi
let r = sqrt(rx^2 + y^2)
let k = pi/(2*0.5)
phi = r - 0.5
wx = 2*cos(2*pi*t)
wy = 0
divw = 0
u0 = cos(k*r)^2
uex = cos(k*r)^2
uex_dx = -2*k^2*sinc(2*k*r)*rx
uex_dy = -2*k^2*sinc(2*k*r)*y
f = alpha_val*2*k^2*(cos(2*k*r) + sinc(2*k*r))
note = exact solution uses R = R0 = 0.5
note = winf taken as the time maximum of |w| = 2
";

const EXAMPLE2_GROW: &str = "
name = example2_grow
box = -1.25 1.25 -1.25 1.25
T = ln(2)
alpha = 0.2
h0 = 0.4
dt0 = ln(2)/2
winf = 1
let r = sqrt(x^2 + y^2)
let R = 0.5*exp(t)
let s = pi/R
phi = r - R
wx = x
wy = y
divw = 2
u0 = cos(s*r)
uex = cos(s*r)
uex_dx = -s^2*sinc(s*r)*x
uex_dy = -s^2*sinc(s*r)*y
f = 2*cos(s*r) + alpha_val*s^2*(cos(s*r) + sinc(s*r))
note = base time step T/2 (uniform steps with dt <= 0.5)
";

const EXAMPLE2_SHRINK: &str = "
name = example2_shrink
box = -1.25 1.25 -1.25 1.25
T = ln(2)
alpha = 0.2
h0 = 0.4
dt0 = ln(2)/2
winf = 1
let r = sqrt(x^2 + y^2)
let R = exp(-t)
let s = pi/R
phi = r - R
wx = -x
wy = -y
divw = -2
u0 = cos(s*r)
uex = cos(s*r)
uex_dx = -s^2*sinc(s*r)*x
uex_dy = -s^2*sinc(s*r)*y
f = -2*cos(s*r) + alpha_val*s^2*(cos(s*r) + sinc(s*r))
note = base time step T/2 (uniform steps with dt <= 0.5)
";

const EXAMPLE3: &str = "
name = example3_mass
box = -0.7 0.9 -0.7 0.7
T = 0.2
alpha = 0.1
h0 = 0.2
dt0 = 0.1
winf = 2
let rx = x - sin(2*pi*t)/pi
let r = sqrt(rx^2 + y^2)
phi = r - 0.5
wx = 2*cos(2*pi*t)
wy = 0
divw = 0
u0 = sin(pi*r)
scheme = bdf2
note = winf taken as the time maximum of |w| = 2
";

const EXAMPLE4: &str = "
name = example4_topology
box = -1 1 -1.5 1.5
T = 1.5
alpha = 0.1
h0 = 0.07
dt0 = 0.15
winf = 1
let R = 0.5
let d1 = sqrt(x^2 + (y - (t - 0.75))^2)
let d2 = sqrt(x^2 + (y - (0.75 - t))^2)
phi = min(d1, d2) - R
wx = 0
wy = select(t - 0.75, select(-y, 1, -1), select(y, 1, -1))
divw = 0
u0 = select(y, 1, -1)
conservative = true
note = circle radius R = 0.5 and box (-1,1)x(-1.5,1.5) are implementation choices
note = velocity follows the printed piecewise definition
";

/// Returns a built-in benchmark problem by name.
pub fn builtin_case(name: &str) -> Result<ProblemCase, CaseError> {
    let src = match name {
        "example1_travel" => EXAMPLE1,
        "example2_grow" => EXAMPLE2_GROW,
        "example2_shrink" => EXAMPLE2_SHRINK,
        "example3_mass" => EXAMPLE3,
        "example4_topology" => EXAMPLE4,
        other => return Err(CaseError::UnknownCase(other.into())),
    };
    // The diffusivity appears inside the manufactured sources; splice it in
    // as a literal so the text stays self-contained.
    let alpha = src
        .lines()
        .find_map(|l| l.trim().strip_prefix("alpha = "))
        .expect("builtin cases define alpha");
    parse_case(&src.replace("alpha_val", &format!("({alpha})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_builtins_load() {
        for name in BUILTIN_CASES {
            let c = builtin_case(name).unwrap();
            assert_eq!(c.name, name);
            assert!(c.alpha > 0.0 && c.t_final > 0.0);
        }
        assert!(matches!(
            builtin_case("nope"),
            Err(CaseError::UnknownCase(_))
        ));
    }

    #[test]
    fn example1_velocity_and_level_set() {
        let c = builtin_case("example1_travel").unwrap();
        let w = c.w([0.3, -0.2], 0.25);
        assert!(w[0].abs() < 1e-15 && w[1] == 0.0);
        assert_eq!(c.div_w([0.1, 0.1], 0.1), 0.0);
        let expected = (0.2 * std::f64::consts::PI).sin() / std::f64::consts::PI - 0.5;
        assert!((c.phi.at([0.0, 0.0], 0.1) - expected).abs() < 1e-15);
        assert_eq!(c.w_inf, 2.0);
    }

    #[test]
    fn example2_constants() {
        let g = builtin_case("example2_grow").unwrap();
        let s = builtin_case("example2_shrink").unwrap();
        for p in [[0.0, 0.0], [0.3, -1.1], [1.2, 1.2]] {
            assert_eq!(g.div_w(p, 0.3), 2.0);
            assert_eq!(s.div_w(p, 0.3), -2.0);
        }
        assert!((g.t_final - 2f64.ln()).abs() < 1e-16);
        assert!((g.phi.at([0.5, 0.0], 0.0)).abs() < 1e-16);
        assert!((s.phi.at([0.5, 0.0], g.t_final)).abs() < 1e-15);
    }

    #[test]
    fn example4_is_periodic_and_piecewise() {
        let c = builtin_case("example4_topology").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5)];
            assert!((c.phi.at(p, 0.0) - c.phi.at(p, c.t_final)).abs() < 1e-14);
        }
        assert_eq!(c.w([0.0, 0.5], 0.2), [0.0, 1.0]);
        assert_eq!(c.w([0.0, -0.5], 0.2), [0.0, -1.0]);
        assert_eq!(c.w([0.0, 0.5], 1.0), [0.0, -1.0]);
        assert_eq!(c.w([0.0, -0.5], 1.0), [0.0, 1.0]);
        assert_eq!(c.u0.at([0.0, 0.7], 0.0), 1.0);
        assert_eq!(c.u0.at([0.0, -0.7], 0.0), -1.0);
        assert_eq!(c.defaults.conservative, Some(true));
    }

    /// Independent finite-difference evaluation of du/dt + div(u w) - alpha lap u.
    fn fd_residual(c: &ProblemCase, x: f64, y: f64, t: f64) -> f64 {
        let u = &c.exact.as_ref().unwrap().u;
        let d = 1e-5;
        let uw = |x: f64, y: f64, k: usize| u.eval(x, y, t) * c.velocity[k].eval(x, y, t);
        let dudt = (u.eval(x, y, t + d) - u.eval(x, y, t - d)) / (2.0 * d);
        let div =
            (uw(x + d, y, 0) - uw(x - d, y, 0) + uw(x, y + d, 1) - uw(x, y - d, 1)) / (2.0 * d);
        let dl = 1e-4;
        let lap = (u.eval(x + dl, y, t)
            + u.eval(x - dl, y, t)
            + u.eval(x, y + dl, t)
            + u.eval(x, y - dl, t)
            - 4.0 * u.eval(x, y, t))
            / (dl * dl);
        dudt + div - c.alpha * lap
    }

    #[test]
    fn manufactured_sources_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for name in ["example1_travel", "example2_grow", "example2_shrink"] {
            let c = builtin_case(name).unwrap();
            assert!(!c.source_is_derived());
            let b = c.domain_box;
            for _ in 0..100 {
                let (x, y) = (rng.random_range(b.x0..b.x1), rng.random_range(b.y0..b.y1));
                let t = rng.random_range(0.01..c.t_final - 0.01);
                let f = c.f([x, y], t);
                let fd = fd_residual(&c, x, y, t);
                assert!(
                    (f - fd).abs() <= 1e-6 * (1.0 + f.abs()),
                    "{name} at ({x},{y},{t}): {f} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn exact_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in ["example1_travel", "example2_grow", "example2_shrink"] {
            let c = builtin_case(name).unwrap();
            let u = &c.exact.as_ref().unwrap().u;
            for _ in 0..100 {
                let p = [rng.random_range(-0.9..0.9), rng.random_range(-0.6..0.6)];
                let t = rng.random_range(0.0..c.t_final);
                let g = c.exact_grad(p, t).unwrap();
                let d = 1e-6;
                let fx = (u.eval(p[0] + d, p[1], t) - u.eval(p[0] - d, p[1], t)) / (2.0 * d);
                let fy = (u.eval(p[0], p[1] + d, t) - u.eval(p[0], p[1] - d, t)) / (2.0 * d);
                assert!(
                    (g[0] - fx).abs() < 1e-7 && (g[1] - fy).abs() < 1e-7,
                    "{name}"
                );
            }
        }
    }

    #[test]
    fn exact_solutions_satisfy_neumann_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["example1_travel", "example2_grow", "example2_shrink"] {
            let c = builtin_case(name).unwrap();
            for _ in 0..50 {
                let t = rng.random_range(0.0..c.t_final);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                // Walk radially from the circle center to the zero level.
                let center = if name == "example1_travel" {
                    [
                        (2.0 * std::f64::consts::PI * t).sin() / std::f64::consts::PI,
                        0.0,
                    ]
                } else {
                    [0.0, 0.0]
                };
                let dir = [theta.cos(), theta.sin()];
                let (mut lo, mut hi) = (0.0, 2.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if c.phi
                        .at([center[0] + mid * dir[0], center[1] + mid * dir[1]], t)
                        < 0.0
                    {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let p = [center[0] + lo * dir[0], center[1] + lo * dir[1]];
                let g = c.exact_grad(p, t).unwrap();
                assert!((g[0] * dir[0] + g[1] * dir[1]).abs() <= 1e-8, "{name}");
            }
        }
    }

    #[test]
    fn expression_parse_example() {
        let f = Field::parse("x*x + y*y - 0.25").unwrap();
        assert_eq!(f.at([0.5, 0.0], 0.0), 0.0);
    }

    #[test]
    fn missing_divergence_is_reported() {
        let text =
            "name = c\nbox = 0 1 0 1\nT = 1\nalpha = 1\nphi = x - 0.5\nu0 = 1\nwx = y\nwinf = 1\n";
        assert!(matches!(parse_case(text), Err(CaseError::MissingField(k)) if k == "divw"));
        let ok = format!("{text}divw = 0\n");
        assert!(parse_case(&ok).is_ok());
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(
            parse_case("name = a\nbox = 0 1 0\n"),
            Err(CaseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_case("name = a\nbox = 0 1 0 1\nT = 1\nalpha = 1\nphi = x +\nu0 = 1\n"),
            Err(CaseError::Parse { line: 5, .. })
        ));
        assert!(matches!(
            parse_case("name = a\nbogus = 1\n"),
            Err(CaseError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_case("just text\n"),
            Err(CaseError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_case("name = a\nbox = 0 1 0 1\nT = 1\nalpha = -1\nphi = x\nu0 = 1\n"),
            Err(CaseError::Invalid(_))
        ));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for name in BUILTIN_CASES {
            let c = builtin_case(name).unwrap();
            let back = parse_case(&c.to_config_string().unwrap()).unwrap();
            assert_eq!(back.name, c.name);
            assert_eq!(back.domain_box, c.domain_box);
            assert_eq!(back.t_final, c.t_final);
            assert_eq!(back.defaults, c.defaults);
            for _ in 0..200 {
                let p = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
                let t = rng.random_range(0.0..c.t_final);
                let pairs = [
                    (c.phi.at(p, t), back.phi.at(p, t)),
                    (c.u0.at(p, t), back.u0.at(p, t)),
                    (c.w(p, t)[0], back.w(p, t)[0]),
                    (c.w(p, t)[1], back.w(p, t)[1]),
                    (c.div_w(p, t), back.div_w(p, t)),
                    (c.f(p, t), back.f(p, t)),
                ];
                for (a, b) in pairs {
                    assert!(
                        (a - b).abs() <= 1e-15 * (1.0 + a.abs()),
                        "{name}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn derived_source_when_only_exact_given() {
        let text = "name = heat\nbox = -1 1 -1 1\nT = 1\nalpha = 0.5\nphi = x^2 + y^2 - 0.5\n\
                    u0 = 1\nuex = exp(-t)*x*y\n";
        let c = parse_case(text).unwrap();
        assert!(c.source_is_derived());
        // u_t - alpha lap u = -exp(-t) x y since lap(xy) = 0.
        let f = c.f([0.3, 0.4], 0.5);
        assert!((f + (-0.5f64).exp() * 0.12).abs() < 1e-6);
        assert!(matches!(c.to_config_string(), Ok(s) if !s.contains("\nf =")));
    }
}
