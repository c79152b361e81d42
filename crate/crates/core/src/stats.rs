//! Student-t machinery, the paired t-test and the sensitivity report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Classifier;
use crate::dataset::Dataset;
use crate::degradation::Scheme;
use crate::engine::{
    cases, check_segments, curve_stride, degradation_at_fraction, degradation_curve,
    frame0_target, schedule_for, units_at_fraction, Case, EngineConfig, Method, Ordering,
};
use crate::segmentation::SegmentMap;
use crate::{Error, Result};

/// Convergence tolerance of the incomplete-beta continued fraction.
pub const BETA_CF_TOLERANCE: f64 = 1e-12;
const BETA_CF_MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_TOLERANCE {
            return h;
        }
    }
    log::warn!("incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})");
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
///
/// `one_minus_x` is passed separately so callers can supply it without
/// cancellation when `x` is close to one.
fn beta_reg_split(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * one_minus_x.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, one_minus_x) / b
    }
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    beta_reg_split(a, b, x.clamp(0.0, 1.0), (1.0 - x).clamp(0.0, 1.0))
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    beta_reg_split(df / 2.0, 0.5, x, t2 / (df + t2)).clamp(0.0, 1.0)
}

/// Student's t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = student_t_two_sided(t, df) / 2.0;
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTestResult {
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
    pub mean_difference: f64,
}

/// Paired t-test on `d_i = a_i - b_i` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTestResult> {
    if a.len() != b.len() {
        return Err(Error::Statistics(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Statistics(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if let Some(i) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::Statistics(format!("non-finite difference at pair {i}")));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::Statistics(
            "differences have zero variance; the t statistic is undefined".into(),
        ));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(PairedTTestResult {
        t_statistic: t,
        p_value: student_t_two_sided(t, (n - 1) as f64),
        n,
        mean_difference: mean,
    })
}

/// Per-image quantity compared between a method and the random baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// `1 - f_k` after removing the top `ceil(fraction * units)` units.
    #[default]
    DegradationAtFraction,
    /// AOC of the full curve.
    AocDifference,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::DegradationAtFraction => "degradation-at-fraction",
            Statistic::AocDifference => "aoc-difference",
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degradation-at-fraction" | "fraction" => Ok(Statistic::DegradationAtFraction),
            "aoc-difference" | "aoc" => Ok(Statistic::AocDifference),
            _ => Err(Error::InvalidParameter(format!("unknown statistic {s:?}"))),
        }
    }
}

/// One (method, evaluator) entry of the sensitivity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub method: String,
    pub evaluator: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub n: usize,
    pub n_skipped: usize,
    pub mean_difference: Option<f64>,
    pub method_mean: Option<f64>,
    pub random_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SensitivityCell {
    /// Runs the test on paired per-image statistics; failures land in `error`.
    pub fn from_samples(
        method: &str,
        evaluator: &str,
        method_values: &[f64],
        random_values: &[f64],
        n_skipped: usize,
    ) -> Self {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mut cell = SensitivityCell {
            method: method.to_owned(),
            evaluator: evaluator.to_owned(),
            t: None,
            p: None,
            n: method_values.len(),
            n_skipped,
            mean_difference: None,
            method_mean: mean(method_values),
            random_mean: mean(random_values),
            error: None,
        };
        match paired_t_test(method_values, random_values) {
            Ok(r) => {
                cell.t = Some(r.t_statistic);
                cell.p = Some(r.p_value);
                cell.mean_difference = Some(r.mean_difference);
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
        cell
    }

    pub fn failed(method: &str, evaluator: &str, error: String) -> Self {
        SensitivityCell {
            method: method.to_owned(),
            evaluator: evaluator.to_owned(),
            t: None,
            p: None,
            n: 0,
            n_skipped: 0,
            mean_difference: None,
            method_mean: None,
            random_mean: None,
            error: Some(error),
        }
    }
}

/// The p-value matrix of a sensitivity run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub statistic: Statistic,
    pub fraction: f64,
    pub cells: Vec<SensitivityCell>,
    pub config: serde_json::Value,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl SensitivityReport {
    pub fn cell(&self, method: &str, evaluator: &str) -> Option<&SensitivityCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.evaluator == evaluator)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `method,evaluator,t,p,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,evaluator,t,p,n\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.method,
                c.evaluator,
                opt(c.t),
                opt(c.p),
                c.n
            ));
        }
        out
    }

    /// Plot data for log-scale p-value charts: `method,evaluator,p,neg_log10_p`.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("method,evaluator,p,neg_log10_p\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.method,
                c.evaluator,
                opt(c.p),
                opt(c.p.map(neg_log10))
            ));
        }
        out
    }
}

/// Parameters of a sensitivity run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub evaluators: Vec<Scheme>,
    pub fraction: f64,
    pub statistic: Statistic,
    /// Seed of the random baseline; image `i` uses `baseline_seed ^ i`.
    pub baseline_seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            evaluators: Scheme::ALL.to_vec(),
            fraction: 0.1,
            statistic: Statistic::DegradationAtFraction,
            baseline_seed: 0,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        units_at_fraction(self.fraction, 1)?;
        Ok(())
    }
}

fn per_image_statistic(
    classifier: &Classifier,
    case: &Case<'_>,
    ordering: &Ordering,
    engine: &EngineConfig,
    scheme: Scheme,
    config: &SensitivityConfig,
    target: (usize, f64),
) -> Result<f64> {
    match config.statistic {
        Statistic::DegradationAtFraction => degradation_at_fraction(
            classifier,
            case,
            ordering,
            engine,
            scheme,
            config.fraction,
            target,
        ),
        Statistic::AocDifference => {
            let schedule = schedule_for(ordering, case, engine, scheme, None)?;
            let stride = curve_stride(scheme, schedule.len(), engine.max_frames);
            let curve =
                degradation_curve(classifier, case, &schedule, "", Some(target.0), stride, None)?;
            Ok(curve.aoc())
        }
    }
}

/// Paired t-tests of every method against the random baseline, for every
/// evaluator. A failing cell records its error and leaves the others intact.
pub fn sensitivity_report(
    dataset: &Dataset,
    segments: Option<&[SegmentMap]>,
    methods: &[Method],
    classifier: &Classifier,
    engine: &EngineConfig,
    config: &SensitivityConfig,
) -> Result<SensitivityReport> {
    engine.validate()?;
    config.validate()?;
    check_segments(dataset, segments)?;
    let baseline = Ordering::Random {
        seed: config.baseline_seed,
    };
    let cells: Vec<(&Method, Scheme)> = methods
        .iter()
        .flat_map(|m| config.evaluators.iter().map(move |&e| (m, e)))
        .collect();
    let cases = cases(dataset, segments);
    // Per image: None when skipped, else one (method, random) pair per cell.
    type Row = Option<Vec<std::result::Result<(f64, f64), String>>>;
    let rows: Vec<Row> = engine.pool()?.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let target =
                    match frame0_target(classifier, case.id, case.image, engine.target_class) {
                        Ok(t) => t,
                        Err(Error::UnusableFrame0 { image_id, score }) => {
                            log::warn!("skipping {image_id}: frame-0 score {score}");
                            return None;
                        }
                        Err(e) => return Some(vec![Err(e.to_string()); cells.len()]),
                    };
                let row = cells
                    .iter()
                    .map(|&(method, scheme)| {
                        let stat = |ordering: &Ordering| {
                            per_image_statistic(
                                classifier, case, ordering, engine, scheme, config, target,
                            )
                        };
                        let a = stat(&method.ordering).map_err(|e| format!("{}: {e}", case.id))?;
                        let b = stat(&baseline).map_err(|e| format!("{}: {e}", case.id))?;
                        Ok((a, b))
                    })
                    .collect();
                Some(row)
            })
            .collect()
    });
    let n_skipped = rows.iter().filter(|r| r.is_none()).count();
    let report_cells = cells
        .iter()
        .enumerate()
        .map(|(j, &(method, scheme))| {
            let evaluator = scheme.evaluator_name();
            let mut a = Vec::new();
            let mut b = Vec::new();
            for row in rows.iter().flatten() {
                match &row[j] {
                    Ok((x, y)) => {
                        a.push(*x);
                        b.push(*y);
                    }
                    Err(e) => return SensitivityCell::failed(&method.id, evaluator, e.clone()),
                }
            }
            SensitivityCell::from_samples(&method.id, evaluator, &a, &b, n_skipped)
        })
        .collect();
    Ok(SensitivityReport {
        statistic: config.statistic,
        fraction: config.fraction,
        cells: report_cells,
        config: serde_json::json!({ "engine": engine, "sensitivity": config }),
    })
}

/// `-log10 p`, with p = 0 mapped to the smallest positive double.
pub fn neg_log10(p: f64) -> f64 {
    -(p.max(f64::MIN_POSITIVE)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use std::f64::consts::PI;

    /// Closed-form two-sided tail for integer degrees of freedom
    /// (trigonometric series in θ = atan(|t| / √ν)).
    fn closed_form_two_sided(t: f64, nu: u32) -> f64 {
        let theta = (t.abs() / (nu as f64).sqrt()).atan();
        let (s, c) = theta.sin_cos();
        if nu % 2 == 1 {
            // p = (2/π)(π/2 - θ - s(c + 2/3 c³ + 2·4/(3·5) c⁵ + ... + c^(ν-2)))
            let mut sum = 0.0;
            if nu > 1 {
                let mut term = c;
                sum = c;
                for k in (3..=nu - 2).step_by(2) {
                    term *= (k - 1) as f64 / k as f64 * c * c;
                    sum += term;
                }
            }
            2.0 / PI * ((PI / 2.0 - theta) - s * sum)
        } else {
            // p = 1 - s(1 + 1/2 c² + 1·3/(2·4) c⁴ + ... + c^(ν-2))
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in (2..=nu - 2).step_by(2) {
                term *= (k - 1) as f64 / k as f64 * c * c;
                sum += term;
            }
            1.0 - s * sum
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(2.0)).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        // ln(9!) = ln Γ(10)
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_identities() {
        for &(a, b) in &[(0.5, 0.5), (2.0, 3.0), (19.5, 0.5), (7.0, 1.0)] {
            assert_eq!(incomplete_beta(a, b, 0.0), 0.0);
            assert_eq!(incomplete_beta(a, b, 1.0), 1.0);
            for x in [0.1, 0.35, 0.8] {
                let sym = incomplete_beta(a, b, x) + incomplete_beta(b, a, 1.0 - x);
                assert!((sym - 1.0).abs() < 1e-12);
            }
        }
        // I_x(a, 1) = x^a
        assert!((incomplete_beta(7.0, 1.0, 0.3) - 0.3f64.powi(7)).abs() < 1e-15);
        // I_x(1/2, 1/2) = (2/π) asin √x
        let x: f64 = 0.37;
        assert!((incomplete_beta(0.5, 0.5, x) - 2.0 / PI * x.sqrt().asin()).abs() < 1e-12);
    }

    #[test]
    fn matches_closed_form_for_integer_df() {
        for nu in [1u32, 2, 3, 4, 5, 9, 10, 39, 40, 49] {
            for &t in &[0.0, 0.3, 1.0, 2.1, 3.5, 5.44, 7.81, 12.0] {
                let p = student_t_two_sided(t, nu as f64);
                let oracle = closed_form_two_sided(t, nu);
                // Below ~1e-9 the series loses relative precision to cancellation.
                if oracle > 1e-9 {
                    assert!(
                        ((p - oracle) / oracle).abs() < 1e-6,
                        "nu={nu} t={t}: {p} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn matches_statrs_for_fractional_df() {
        for &df in &[0.7, 2.5, 17.3, 123.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for &t in &[-3.0, -0.5, 0.0, 0.8, 2.2] {
                let expected = dist.cdf(t);
                assert!((student_t_cdf(t, df) - expected).abs() < 1e-10, "df={df} t={t}");
            }
        }
    }

    #[test]
    fn two_sided_p_properties() {
        assert_eq!(student_t_two_sided(0.0, 39.0), 1.0);
        assert_eq!(student_t_two_sided(f64::INFINITY, 39.0), 0.0);
        assert_eq!(student_t_two_sided(2.0, 39.0), student_t_two_sided(-2.0, 39.0));
        let mut last = 1.0;
        for i in 1..200 {
            let p = student_t_two_sided(i as f64 * 0.05, 39.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn paired_test_errors() {
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn paired_test_antisymmetric() {
        let a = [0.3, 0.9, 0.4, 0.7, 0.6];
        let b = [0.1, 0.5, 0.45, 0.2, 0.3];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t_statistic, -ba.t_statistic);
        assert_eq!(ab.p_value, ba.p_value);
        assert_eq!(ab.n, 5);
    }

    #[test]
    fn synthetic_differences_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        // Shifts keep p above 1e-9, where the series oracle is accurate.
        for (n, shift) in [(10usize, 0.1), (40, 0.3), (40, 0.6), (50, 0.7)] {
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let a: Vec<f64> = b
                .iter()
                .map(|v| v + shift + rng.random_range(-1.0..1.0))
                .collect();
            let r = paired_t_test(&a, &b).unwrap();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let m = d.iter().sum::<f64>() / n as f64;
            let sd = (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            let t = m / sd * (n as f64).sqrt();
            assert!(((r.t_statistic - t) / t).abs() < 1e-12);
            let oracle = closed_form_two_sided(t, n as u32 - 1);
            assert!(((r.p_value - oracle) / oracle).abs() < 1e-6, "{} vs {oracle}", r.p_value);
        }
    }

    #[test]
    fn report_tables() {
        let cells = vec![
            SensitivityCell::from_samples("sm", "irof-mean", &[0.5, 0.7, 0.6], &[0.1, 0.2, 0.2], 1),
            SensitivityCell::failed("sm", "samek", "boom".into()),
        ];
        let report = SensitivityReport {
            statistic: Statistic::DegradationAtFraction,
            fraction: 0.1,
            cells,
            config: serde_json::json!({"seed": 1}),
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,evaluator,t,p,n");
        assert!(lines[1].starts_with("sm,irof-mean,"));
        assert!(lines[1].ends_with(",3"));
        assert_eq!(lines[2], "sm,samek,,,0");
        assert!(report.plot_csv().lines().count() == 3);
        let back: SensitivityReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.cell("sm", "irof-mean").unwrap().p.unwrap() < 0.05);
    }

    mod report {
        use super::super::*;
        use crate::backend::oracle::{Disk, DiskModel};
        use crate::dataset::Sample;
        use crate::imagery::{Image, RelevanceMap, ValueRange};
        use crate::segmentation::{slic_segment, SlicParams};
        use rand::{Rng, SeedableRng};

        fn fixture(n: usize) -> (Dataset, Vec<SegmentMap>, Vec<RelevanceMap>, Classifier) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
            let mut samples = Vec::new();
            let mut maps = Vec::new();
            let mut disks = std::collections::BTreeMap::new();
            for i in 0..n {
                let disk = Disk {
                    row: rng.random_range(10.0..22.0),
                    col: rng.random_range(10.0..22.0),
                    radius: rng.random_range(4.0..8.0),
                };
                let mask = disk.mask(32, 32);
                let data = mask
                    .iter()
                    .map(|&m| if m { rng.random_range(0.7..1.0) } else { rng.random_range(0.0..0.4) })
                    .collect();
                let id = format!("im{i}");
                samples.push(Sample {
                    id: id.clone(),
                    image: Image::new(32, 32, 1, data, ValueRange::UNIT).unwrap(),
                });
                maps.push(
                    RelevanceMap::new(32, 32, mask.iter().map(|&m| m as u8 as f32).collect(), "gt")
                        .unwrap(),
                );
                disks.insert(id, disk);
            }
            let d = Dataset::new(samples).unwrap();
            let params = SlicParams {
                target_segments: 60,
                ..Default::default()
            };
            let segs = d.samples().iter().map(|s| slic_segment(&s.image, &params).unwrap()).collect();
            let c = Classifier::new(Box::new(DiskModel::per_image(disks)), 16, true);
            (d, segs, maps, c)
        }

        fn engine() -> EngineConfig {
            EngineConfig {
                target_class: Some(1),
                workers: 2,
                ..Default::default()
            }
        }

        #[test]
        fn five_evaluators_give_five_rows() {
            let (d, segs, maps, c) = fixture(12);
            let methods = [Method::heatmaps("gt", maps)];
            let r = sensitivity_report(&d, Some(&segs), &methods, &c, &engine(), &SensitivityConfig::default())
                .unwrap();
            assert_eq!(r.cells.len(), 5);
            let irof = r.cell("gt", "irof-mean").unwrap();
            assert!(irof.t.unwrap() > 0.0 && irof.p.unwrap() < 1e-3, "{irof:?}");
            assert_eq!(irof.n, 12);
        }

        #[test]
        fn empty_method_set_is_empty_report() {
            let (d, segs, _, c) = fixture(3);
            let r = sensitivity_report(&d, Some(&segs), &[], &c, &engine(), &SensitivityConfig::default())
                .unwrap();
            assert!(r.cells.is_empty());
        }

        #[test]
        fn zero_fraction_is_rejected() {
            let (d, segs, maps, c) = fixture(3);
            let cfg = SensitivityConfig {
                fraction: 0.0,
                ..Default::default()
            };
            let methods = [Method::heatmaps("gt", maps)];
            assert!(sensitivity_report(&d, Some(&segs), &methods, &c, &engine(), &cfg).is_err());
        }

        #[test]
        fn failing_cells_do_not_abort_others() {
            let (d, _, maps, c) = fixture(4);
            let methods = [Method::heatmaps("gt", maps)];
            // No segment maps: the two IROF cells fail, pixel and square cells run.
            let r = sensitivity_report(&d, None, &methods, &c, &engine(), &SensitivityConfig::default())
                .unwrap();
            assert!(r.cell("gt", "irof-mean").unwrap().error.is_some());
            assert!(r.cell("gt", "irof-black").unwrap().error.is_some());
            assert!(r.cell("gt", "pixel-mean").unwrap().p.is_some());
            assert!(r.cell("gt", "samek").unwrap().p.is_some());
        }

        #[test]
        fn aoc_statistic_runs() {
            let (d, segs, maps, c) = fixture(5);
            let cfg = SensitivityConfig {
                evaluators: vec![Scheme::SegmentMean],
                statistic: Statistic::AocDifference,
                ..Default::default()
            };
            let methods = [Method::heatmaps("gt", maps), Method::random("rnd", 99)];
            let r = sensitivity_report(&d, Some(&segs), &methods, &c, &engine(), &cfg).unwrap();
            assert_eq!(r.cells.len(), 2);
            assert!(r.cell("gt", "irof-mean").unwrap().mean_difference.unwrap() > 0.0);
        }
    }
}
