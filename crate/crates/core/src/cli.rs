//! Batch front-end: run configuration, the seven report commands and their
//! output files. Every command is a pure function of (config bytes, seed);
//! parallel work is merged in input order, so reports do not depend on the
//! thread count.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{classify_grid, lattice_violations, wavefront, ClassifierConfig, ConditionKind, Holds, SheafCondition};
use crate::cones::{build_cover, Cone, cauchy_riemann_residual, validate_cover, AdditivityReport, CoverConfig, DecompOptions, Decomposition, PieceValue};
use crate::elliptic::{box_grid, char_set_sample, elliptic_wf_audit, parametrix, sphere_grid, AuditOptions, ParametrixOptions};
use crate::error::{config, Error, Result};
use crate::fbi::{epsilon_runner, fbi_grid, fmt_f64, parse_samples_csv, GridSpec, InversionOptions, QuadOptions};
use crate::functional::{CompactBox, Functional, FunctionalExpr, TestFunction};
use crate::operator::{DifferentialOperator, Number};
use crate::phase::{certify, CertifyOptions, PhasePolynomial};

pub const TOOL: &str = "fbi-micro";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Functional descriptor: a concrete functional, a linear combination, or
/// the image under a differential operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionalDesc {
    Combo { combo: Vec<ComboItem> },
    Image { image: Box<ImageDesc> },
    Atom(Functional),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboItem {
    pub c: Number,
    pub of: FunctionalDesc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDesc {
    pub operator: DifferentialOperator,
    pub of: FunctionalDesc,
}

impl FunctionalDesc {
    pub fn resolve(&self) -> Result<FunctionalExpr> {
        let e = match self {
            FunctionalDesc::Atom(f) => {
                f.check()?;
                FunctionalExpr::Atom(f.clone())
            }
            FunctionalDesc::Combo { combo } => {
                if combo.is_empty() {
                    return config("empty combination");
                }
                FunctionalExpr::combo(combo.iter().map(|i| Ok((i.c.value(), i.of.resolve()?))).collect::<Result<_>>()?)
            }
            FunctionalDesc::Image { image } => {
                image.operator.check()?;
                FunctionalExpr::image(Arc::new(image.operator.clone()), image.of.resolve()?)
            }
        };
        e.check()?;
        Ok(e)
    }
}

pub fn parse_functional_desc(s: &str) -> Result<FunctionalExpr> {
    let d: FunctionalDesc = serde_json::from_str(s)?;
    d.resolve()
}

/// Effective tolerances and caps; every field may be partially overridden.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub quad: QuadOptions,
    pub certify: CertifyOptions,
    pub classifier: ClassifierConfig,
    pub inversion: InversionOptions,
    pub decomposition: DecompOptions,
    pub parametrix: ParametrixOptions,
    pub audit: AuditOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSpec {
    pub eps: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w_box: CompactBox,
    /// Exponents of the monomial test functions paired with μ_ε.
    #[serde(default)]
    pub tests: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSpec {
    pub x0: Vec<f64>,
    /// Evaluation points; coordinates are reals or `[re, im]`.
    pub points: Vec<Vec<Number>>,
    /// Random (cone, dual) pairs per cone for the cover validation.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Evaluate the wedge pieces f_j and the additivity check.
    #[serde(default = "yes")]
    pub pieces: bool,
    /// Evaluate the boundary-chain pieces R_j.
    #[serde(default = "yes")]
    pub chains: bool,
    /// Finite-difference step for the F₁ Cauchy–Riemann residual (also at h/2).
    #[serde(default)]
    pub cr_step: Option<f64>,
}

fn default_pairs() -> usize {
    1000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticSpec {
    #[serde(rename = "box")]
    pub bx: CompactBox,
    /// Truncation order of the parametrix; no probe without a cone.
    #[serde(default = "default_j", rename = "J")]
    pub j: usize,
    #[serde(default)]
    pub cone: Option<Cone>,
    #[serde(default = "default_per_side")]
    pub char_points_per_side: usize,
    #[serde(default = "default_sphere")]
    pub char_sphere: usize,
    #[serde(default = "default_char_tol")]
    pub char_tol: f64,
    /// Run the wave-front inclusion audit (needs a functional and a grid).
    #[serde(default)]
    pub audit: bool,
}

fn default_j() -> usize {
    3
}

fn default_per_side() -> usize {
    5
}

fn default_sphere() -> usize {
    256
}

fn default_char_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ambient dimension; needed only when nothing else fixes it.
    #[serde(default, rename = "N")]
    pub n: Option<usize>,
    #[serde(default)]
    pub phase: Option<PhasePolynomial>,
    #[serde(default)]
    pub functional: Option<FunctionalDesc>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub conditions: Option<Vec<SheafCondition>>,
    #[serde(default)]
    pub cover: Option<CoverConfig>,
    #[serde(default)]
    pub operator: Option<DifferentialOperator>,
    /// Sample CSV for `classify`, relative to the config file.
    #[serde(default)]
    pub samples: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub invert: Option<InvertSpec>,
    #[serde(default)]
    pub decompose: Option<DecomposeSpec>,
    #[serde(default)]
    pub elliptic: Option<EllipticSpec>,
}

/// A parsed config together with the provenance recorded in every output.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Header<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub tolerances: &'a Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Rejected,
    Partial,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Rejected => 2,
            Status::Partial => 3,
        }
    }
}

/// Named output files (contents already rendered) and the overall status.
#[derive(Debug, Clone)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub status: Status,
}

impl Output {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

impl Run {
    pub fn from_bytes(bytes: &[u8], seed_override: Option<u64>, base_dir: PathBuf) -> Result<Run> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        let config: RunConfig = serde_json::from_str(text)?;
        let config_sha256 = hex::encode(Sha256::digest(bytes));
        let seed = seed_override.or(config.seed).unwrap_or(0);
        Ok(Run { config, config_sha256, seed, base_dir })
    }

    pub fn from_path(path: &Path, seed_override: Option<u64>) -> Result<Run> {
        let bytes = std::fs::read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Run::from_bytes(&bytes, seed_override, base)
    }

    fn header<'a>(&'a self, command: &'a str) -> Header<'a> {
        Header {
            tool: TOOL,
            version: VERSION,
            command,
            config_sha256: &self.config_sha256,
            seed: self.seed,
            tolerances: &self.config.tolerances,
        }
    }

    fn json(&self, command: &str, status: Status, result: impl Serialize) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            header: Header<'a>,
            status: Status,
            result: T,
        }
        let mut s = serde_json::to_string_pretty(&Doc { header: self.header(command), status, result })?;
        s.push('\n');
        Ok(s)
    }

    fn csv_header(&self, command: &str) -> Result<Vec<String>> {
        let t = serde_json::to_string(&self.config.tolerances)?;
        Ok(vec![
            format!("tool: {TOOL}"),
            format!("version: {VERSION}"),
            format!("command: {command}"),
            format!("config_sha256: {}", self.config_sha256),
            format!("seed: {}", self.seed),
            format!("tolerances: {t}"),
        ])
    }

    fn csv(&self, command: &str, cols: &[&str], rows: &[Vec<String>]) -> Result<String> {
        let mut buf = String::new();
        for h in self.csv_header(command)? {
            buf.push_str("# ");
            buf.push_str(&h);
            buf.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(cols)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        buf.push_str(&String::from_utf8_lossy(&bytes));
        Ok(buf)
    }

    fn dim(&self) -> Result<usize> {
        let c = &self.config;
        c.phase
            .as_ref()
            .map(|p| p.n)
            .or_else(|| c.functional.as_ref().and_then(|f| f.resolve().ok()).map(|f| f.dim()))
            .or_else(|| c.operator.as_ref().map(|o| o.n))
            .or_else(|| c.cover.as_ref().map(|o| o.n))
            .or(c.n)
            .ok_or_else(|| Error::Config("cannot infer the dimension N".into()))
    }

    fn raw_phase(&self) -> Result<PhasePolynomial> {
        let p = match &self.config.phase {
            Some(p) => p.clone(),
            None => PhasePolynomial::default_for(self.dim()?),
        };
        p.check_shape()?;
        Ok(p)
    }

    fn phase(&self) -> Result<Arc<PhasePolynomial>> {
        Ok(Arc::new(certify(&self.raw_phase()?, &self.config.tolerances.certify)?))
    }

    fn functional(&self) -> Result<FunctionalExpr> {
        self.config.functional.as_ref().ok_or_else(|| Error::Config("config needs a functional".into()))?.resolve()
    }

    fn grid(&self) -> Result<&GridSpec> {
        self.config.grid.as_ref().ok_or_else(|| Error::Config("config needs a grid".into()))
    }

    fn operator(&self) -> Result<Arc<DifferentialOperator>> {
        let op = self.config.operator.as_ref().ok_or_else(|| Error::Config("config needs an operator".into()))?;
        op.check()?;
        Ok(Arc::new(op.clone()))
    }

    fn conditions(&self) -> Vec<SheafCondition> {
        self.config.conditions.clone().unwrap_or_else(|| {
            [ConditionKind::COmega, ConditionKind::CInf, ConditionKind::Dprime].into_iter().map(SheafCondition::plain).collect()
        })
    }

    fn check_dims(&self, mu: &FunctionalExpr, p: &PhasePolynomial) -> Result<()> {
        if mu.dim() != p.n {
            return config(format!("functional has N = {} but the phase has N = {}", mu.dim(), p.n));
        }
        Ok(())
    }
}

fn num(x: f64) -> String {
    fmt_f64(x)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

fn holds(h: Holds) -> &'static str {
    match h {
        Holds::Yes => "yes",
        Holds::No => "no",
        Holds::Inconclusive => "inconclusive",
    }
}

pub fn cmd_validate_phase(run: &Run) -> Result<Output> {
    const CMD: &str = "validate-phase";
    let raw = run.raw_phase()?;
    let (status, body) = match certify(&raw, &run.config.tolerances.certify) {
        Ok(p) => (Status::Pass, run.json(CMD, Status::Pass, &p)?),
        Err(Error::Rejected(msg)) => {
            #[derive(Serialize)]
            struct Rej<'a> {
                phase: &'a PhasePolynomial,
                rejected: String,
            }
            (Status::Rejected, run.json(CMD, Status::Rejected, Rej { phase: &raw, rejected: msg })?)
        }
        Err(e) => return Err(e),
    };
    Ok(Output { files: vec![("certificate.json".into(), body)], status })
}

pub fn cmd_transform(run: &Run) -> Result<Output> {
    const CMD: &str = "transform";
    let p = run.phase()?;
    let mu = run.functional()?;
    run.check_dims(&mu, &p)?;
    let grid = fbi_grid(&mu, &p, run.grid()?, &run.config.tolerances.quad)?;
    let status = if grid.valid.iter().all(|&v| v) { Status::Pass } else { Status::Partial };
    let mut header = run.csv_header(CMD)?;
    header.push(format!("status: {}", serde_json::to_string(&status)?.trim_matches('"')));
    Ok(Output { files: vec![("samples.csv".into(), grid.to_csv(&header)?)], status })
}

/// `samples` overrides the config's sample path.
pub fn cmd_classify(run: &Run, samples: Option<&Path>) -> Result<Output> {
    const CMD: &str = "classify";
    let path: PathBuf = match (samples, &run.config.samples) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(s)) => run.base_dir.join(s),
        (None, None) => return config("classify needs a sample CSV"),
    };
    let grid = parse_samples_csv(&std::fs::read_to_string(&path)?)?;
    let est = classify_grid(&grid, &run.conditions(), &run.config.tolerances.classifier)?;
    #[derive(Serialize)]
    struct Res<'a> {
        estimate: &'a crate::classify::WavefrontEstimate,
        lattice_violations: Vec<crate::classify::LatticeViolation>,
    }
    let body = run.json(CMD, Status::Pass, Res { lattice_violations: lattice_violations(&est), estimate: &est })?;
    Ok(Output { files: vec![("verdicts.json".into(), body)], status: Status::Pass })
}

pub fn cmd_wavefront(run: &Run) -> Result<Output> {
    const CMD: &str = "wavefront";
    let p = run.phase()?;
    let mu = run.functional()?;
    run.check_dims(&mu, &p)?;
    let t = &run.config.tolerances;
    let (grid, est) = wavefront(&mu, &p, run.grid()?, &run.conditions(), &t.quad, &t.classifier)?;
    let status = if grid.valid.iter().all(|&v| v) { Status::Pass } else { Status::Partial };
    #[derive(Serialize)]
    struct Res<'a> {
        estimate: &'a crate::classify::WavefrontEstimate,
        lattice_violations: Vec<crate::classify::LatticeViolation>,
        invalid_cells: usize,
    }
    let body = run.json(
        CMD,
        status,
        Res { lattice_violations: lattice_violations(&est), estimate: &est, invalid_cells: grid.valid.iter().filter(|v| !**v).count() },
    )?;
    let rows: Vec<Vec<String>> = est
        .verdicts
        .iter()
        .map(|v| vec![join(&v.covector.x), join(&v.covector.theta), v.condition.kind.name().to_string(), holds(v.holds).into()])
        .collect();
    let csv = run.csv(CMD, &["x", "theta", "condition", "holds"], &rows)?;
    Ok(Output { files: vec![("wavefront.json".into(), body), ("wavefront.csv".into(), csv)], status })
}

pub fn cmd_invert(run: &Run) -> Result<Output> {
    const CMD: &str = "invert";
    let spec = run.config.invert.as_ref().ok_or_else(|| Error::Config("config needs an invert section".into()))?;
    let p = run.phase()?;
    let mu = run.functional()?;
    run.check_dims(&mu, &p)?;
    spec.w_box.check()?;
    if spec.eps.is_empty() || spec.eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return config("eps must be a nonempty list of positive numbers");
    }
    if spec.points.iter().any(|x| x.len() != p.n) {
        return config("inversion point has wrong dimension");
    }
    let exps: Vec<Vec<u32>> = spec.tests.clone().unwrap_or_else(|| {
        (0..3u32)
            .map(|k| {
                let mut b = vec![0; p.n];
                b[0] = k;
                b
            })
            .collect()
    });
    if exps.iter().any(|b| b.len() != p.n) {
        return config("test monomial has wrong dimension");
    }
    let hs: Vec<TestFunction> =
        exps.iter().map(|b| TestFunction::Poly { n: p.n, monomials: vec![(b.clone(), Complex64::new(1.0, 0.0))] }).collect();
    let rows = epsilon_runner(&mu, &p, &spec.eps, &spec.points, &spec.w_box, &hs, &run.config.tolerances.inversion)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut out = Vec::new();
    let mut finite = true;
    for r in &rows {
        for (x, v) in spec.points.iter().zip(&r.pointwise) {
            finite &= v.is_finite();
            out.push(vec![
                num(r.eps),
                num(r.truncation_radius),
                "point".into(),
                join(x),
                num(v.re),
                num(v.im),
                opt(r.cauchy_pointwise),
            ]);
        }
        for (b, v) in exps.iter().zip(&r.paired) {
            finite &= v.is_finite();
            let label = b.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
            out.push(vec![num(r.eps), num(r.truncation_radius), "pairing".into(), label, num(v.re), num(v.im), opt(r.cauchy_paired)]);
        }
    }
    let status = if finite { Status::Pass } else { Status::Partial };
    let csv = run.csv(CMD, &["eps", "truncation_radius", "kind", "at", "re", "im", "cauchy_diff"], &out)?;
    Ok(Output { files: vec![("inversion.csv".into(), csv)], status })
}

#[derive(Debug, Clone, Serialize)]
struct PointChecks {
    z: Vec<Complex64>,
    additivity: Option<AdditivityReport>,
    r1_direct: Option<Complex64>,
    r1_sum: Option<Complex64>,
    r1_residual: Option<f64>,
    /// (h, residual at h, residual at h/2, ratio)
    cauchy_riemann: Option<[f64; 4]>,
}

pub fn cmd_decompose(run: &Run) -> Result<Output> {
    const CMD: &str = "decompose";
    let spec = run.config.decompose.as_ref().ok_or_else(|| Error::Config("config needs a decompose section".into()))?;
    let cover_cfg = run.config.cover.as_ref().ok_or_else(|| Error::Config("config needs a cover".into()))?;
    let p = run.phase()?;
    let mu = run.functional()?;
    run.check_dims(&mu, &p)?;
    let cover = build_cover(cover_cfg)?;
    let report = validate_cover(&cover, spec.pairs, run.seed)?;
    let d = Decomposition::new(mu, p.clone(), cover.clone(), spec.x0.clone(), run.config.tolerances.decomposition.clone())?;
    let points: Vec<Vec<Complex64>> = spec.points.iter().map(|z| z.iter().map(Number::value).collect()).collect();
    if points.iter().any(|z| z.len() != p.n) {
        return config("evaluation point has wrong dimension");
    }
    let table = d.f1_table()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut ok = true;
    let zfmt = |z: &[Complex64]| z.iter().map(|c| format!("{}{}{}i", fmt_f64(c.re), if c.im < 0.0 { "" } else { "+" }, fmt_f64(c.im))).collect::<Vec<_>>().join(";");
    let mut row = |k: usize, z: &[Complex64], piece: &str, j: Option<usize>, v: &PieceValue, ok: &mut bool| {
        *ok &= v.valid && !v.divergent && v.value.is_finite();
        rows.push(vec![
            k.to_string(),
            zfmt(z),
            piece.to_string(),
            j.map(|j| (j + 1).to_string()).unwrap_or_default(),
            num(v.value.re),
            num(v.value.im),
            (v.valid as u8).to_string(),
            (v.divergent as u8).to_string(),
        ]);
    };
    for (k, z) in points.iter().enumerate() {
        let f1 = table.eval(z);
        row(k, z, "F1", None, &f1, &mut ok);
        let mut pc = PointChecks { z: z.clone(), additivity: None, r1_direct: None, r1_sum: None, r1_residual: None, cauchy_riemann: None };
        if spec.pieces {
            let mut sum = Complex64::new(0.0, 0.0);
            let mut valid = true;
            for j in 0..cover.cones.len() {
                let v = d.piece_f(j, z)?;
                row(k, z, "f", Some(j), &v, &mut ok);
                valid &= v.valid && !v.divergent;
                sum += v.value;
            }
            let full = d.piece_f_full(z)?;
            row(k, z, "f_full", None, &full, &mut ok);
            valid &= full.valid && !full.divergent;
            let residual = (sum - full.value).norm();
            pc.additivity = Some(AdditivityReport {
                sum_of_cones: sum,
                full: full.value,
                residual,
                relative: residual / full.value.norm().max(f64::MIN_POSITIVE),
                valid,
            });
        }
        if spec.chains && p.n == 2 {
            let mut sum = Complex64::new(0.0, 0.0);
            for j in 1..cover.cones.len() {
                let v = d.piece_r(j, z)?;
                row(k, z, "R", Some(j), &v, &mut ok);
                sum += v.value;
            }
            let r1 = d.piece_r1(z)?;
            row(k, z, "R1_direct", None, &r1, &mut ok);
            pc.r1_direct = Some(r1.value);
            pc.r1_sum = Some(sum);
            pc.r1_residual = Some((r1.value - sum).norm());
        }
        if let Some(h) = spec.cr_step {
            if !(h > 0.0) || !h.is_finite() {
                return config("cr_step must be positive");
            }
            let f = |w: Complex64| {
                let mut zz = z.clone();
                zz[0] = w;
                table.eval(&zz).value
            };
            let a = cauchy_riemann_residual(&f, z[0], h);
            let b = cauchy_riemann_residual(&f, z[0], h / 2.0);
            pc.cauchy_riemann = Some([h, a, b, a / b]);
        }
        checks.push(pc);
    }
    let status = if ok { Status::Pass } else { Status::Partial };
    #[derive(Serialize)]
    struct Res<'a> {
        cover: &'a crate::cones::CoverSpec,
        cover_report: &'a crate::cones::CoverReport,
        a: f64,
        points: Vec<PointChecks>,
    }
    let body = run.json(CMD, status, Res { cover: &cover, cover_report: &report, a: d.a, points: checks })?;
    let csv = run.csv(CMD, &["point", "z", "piece", "j", "re", "im", "valid", "divergent"], &rows)?;
    Ok(Output { files: vec![("decomposition.json".into(), body), ("pieces.csv".into(), csv)], status })
}

pub fn cmd_elliptic(run: &Run) -> Result<Output> {
    const CMD: &str = "elliptic";
    let spec = run.config.elliptic.as_ref().ok_or_else(|| Error::Config("config needs an elliptic section".into()))?;
    let op = run.operator()?;
    spec.bx.check()?;
    if spec.bx.dim() != op.n {
        return config("elliptic box has wrong dimension");
    }
    let t = &run.config.tolerances;
    let xs = box_grid(&spec.bx, spec.char_points_per_side);
    let chars = char_set_sample(&op, &xs, &sphere_grid(op.n, spec.char_sphere), spec.char_tol)?;
    let mut files = vec![("charset.json".into(), run.json(CMD, Status::Pass, &chars)?)];
    let mut status = Status::Pass;
    if let Some(cone) = &spec.cone {
        let rep = parametrix(&op, spec.j, cone, &spec.bx, &t.parametrix)?;
        let mut rows = Vec::new();
        for ray in &rep.rays {
            for (r, res) in ray.radii.iter().zip(&ray.residual) {
                rows.push(vec![
                    join(&ray.x),
                    join(&ray.theta),
                    num(*r),
                    num(*res),
                    ray.slope.map(num).unwrap_or_default(),
                ]);
            }
        }
        if rep.rays.iter().any(|r| r.residual.iter().any(|v| !v.is_finite())) {
            status = Status::Partial;
        }
        files.push(("parametrix.csv".into(), run.csv(CMD, &["x", "theta", "r", "residual", "slope"], &rows)?));
        files.push(("parametrix.json".into(), run.json(CMD, status, &rep)?));
    }
    if spec.audit {
        let p = run.phase()?;
        let mu = run.functional()?;
        run.check_dims(&mu, &p)?;
        let rep = elliptic_wf_audit(&op, &mu, &p, run.grid()?, &run.conditions(), &t.quad, &t.classifier, &t.audit)?;
        files.push(("inclusion.json".into(), run.json(CMD, status, &rep)?));
    }
    Ok(Output { files, status })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ValidatePhase,
    Transform,
    Classify,
    Wavefront,
    Invert,
    Decompose,
    Elliptic,
}

pub fn execute(cmd: Command, run: &Run, samples: Option<&Path>) -> Result<Output> {
    match cmd {
        Command::ValidatePhase => cmd_validate_phase(run),
        Command::Transform => cmd_transform(run),
        Command::Classify => cmd_classify(run, samples),
        Command::Wavefront => cmd_wavefront(run),
        Command::Invert => cmd_invert(run),
        Command::Decompose => cmd_decompose(run),
        Command::Elliptic => cmd_elliptic(run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(s: &str) -> Run {
        Run::from_bytes(s.as_bytes(), None, PathBuf::new()).unwrap()
    }

    #[test]
    fn config_hash_and_seed() {
        let r = run(r#"{"N":1,"seed":5}"#);
        assert_eq!(r.seed, 5);
        assert_eq!(r.config_sha256.len(), 64);
        let r2 = Run::from_bytes(br#"{"N":1,"seed":5}"#, Some(9), PathBuf::new()).unwrap();
        assert_eq!(r2.seed, 9);
        assert_eq!(r.config_sha256, r2.config_sha256);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let e = Run::from_bytes(br#"{"N":1,"bogus":1}"#, None, PathBuf::new()).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        let e = Run::from_bytes(br#"{"tolerances":{"quad":{"gl_order":"x"}}}"#, None, PathBuf::new()).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn functional_descriptors() {
        let d = r#"{"combo":[{"c":2,"of":{"variant":"points","atoms":[{"x":[0],"alpha":[0],"c":1}]}},
                   {"c":[0,1],"of":{"image":{"operator":{"N":1,"m":1,"terms":[{"alpha":[1],"coef":{"kind":"const","value":1}}]},
                   "of":{"variant":"points","atoms":[{"x":[1],"alpha":[0],"c":1}]}}}}]}"#;
        let e = parse_functional_desc(d).unwrap();
        assert!(matches!(&e, FunctionalExpr::Sum(v) if v.len() == 2 && matches!(v[1].1, FunctionalExpr::Image(..))));
        assert!(parse_functional_desc(r#"{"combo":[]}"#).is_err());
    }

    #[test]
    fn validate_phase_reports() {
        let out = cmd_validate_phase(&run(r#"{"phase":{"N":1,"k":1,"terms":[{"alpha":[2],"coef":1}]}}"#)).unwrap();
        assert_eq!(out.status, Status::Pass);
        let v: serde_json::Value = serde_json::from_str(&out.files[0].1).unwrap();
        assert_eq!(v["header"]["tool"], TOOL);
        assert!((v["result"]["cert"]["c_p"].as_f64().unwrap() - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-8);
        let out = cmd_validate_phase(&run(r#"{"phase":{"N":1,"k":1,"terms":[{"alpha":[2],"coef":-1}]}}"#)).unwrap();
        assert_eq!(out.status, Status::Rejected);
        assert_eq!(out.status.exit_code(), 2);
    }
}
