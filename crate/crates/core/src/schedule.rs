//! Distilled-data weight schedules and the learning-rate schedule.
//!
//! `w0(t)` is the share of the distilled set used at epoch `t` and `w1(t)` the
//! share of the original set. Epochs are 0-indexed and `x = t / (T - 1)`.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("epoch {t} outside 0..{epochs}")]
    EpochOutOfRange { t: usize, epochs: usize },
    #[error("{kind} needs at least 2 epochs")]
    TooFewEpochs { kind: String },
    #[error("total epochs must be at least 1")]
    NoEpochs,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("unknown schedule kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    PureDistilled,
    PureOriginal,
    SimpleMix,
    Sigmoid { k: f64 },
    Cosine,
    Power { n: f64 },
    /// Both full datasets every epoch, reported as `w0 = w1 = 1`.
    AllBlend,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::PureDistilled => "pure_distilled",
            ScheduleKind::PureOriginal => "pure_original",
            ScheduleKind::SimpleMix => "simple_mix",
            ScheduleKind::Sigmoid { .. } => "sigmoid",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Power { .. } => "power",
            ScheduleKind::AllBlend => "all_blend",
        }
    }

    pub fn params(&self) -> String {
        match self {
            ScheduleKind::Sigmoid { k } => format!("k={k}"),
            ScheduleKind::Power { n } => format!("n={n}"),
            _ => String::new(),
        }
    }

    /// Builds a kind from its name plus the optional `k` / `n` parameters.
    pub fn from_parts(name: &str, k: Option<f64>, n: Option<f64>) -> Result<Self, ScheduleError> {
        let need = |v: Option<f64>, p: &str| v.ok_or_else(|| ScheduleError::BadParam(format!("{name} requires {p}")));
        let kind = match name.replace('-', "_").as_str() {
            "pure_distilled" => ScheduleKind::PureDistilled,
            "pure_original" => ScheduleKind::PureOriginal,
            "simple_mix" => ScheduleKind::SimpleMix,
            "sigmoid" => ScheduleKind::Sigmoid { k: need(k, "k")? },
            "cosine" => ScheduleKind::Cosine,
            "power" => ScheduleKind::Power { n: need(n, "n")? },
            "all_blend" | "all" => ScheduleKind::AllBlend,
            _ => return Err(ScheduleError::UnknownKind(name.to_string())),
        };
        Ok(kind)
    }

    fn divides_by_span(&self) -> bool {
        matches!(self, ScheduleKind::Sigmoid { .. } | ScheduleKind::Cosine | ScheduleKind::Power { .. })
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.params() {
            p if p.is_empty() => f.write_str(self.name()),
            p => write!(f, "{}({p})", self.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    /// Total epochs `T`.
    pub epochs: usize,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, epochs: usize) -> Self {
        ScheduleSpec { kind, epochs }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.epochs == 0 {
            return Err(ScheduleError::NoEpochs);
        }
        match self.kind {
            ScheduleKind::Sigmoid { k } if !(k > 0.0 && k.is_finite()) => {
                Err(ScheduleError::BadParam(format!("sigmoid k must be positive, got {k}")))
            }
            ScheduleKind::Power { n } if !(n > 0.0 && n.is_finite()) => {
                Err(ScheduleError::BadParam(format!("power n must be positive, got {n}")))
            }
            kind if kind.divides_by_span() && self.epochs < 2 => {
                Err(ScheduleError::TooFewEpochs { kind: kind.name().to_string() })
            }
            _ => Ok(()),
        }
    }

    pub fn w0(&self, t: usize) -> Result<f64, ScheduleError> {
        self.validate()?;
        if t >= self.epochs {
            return Err(ScheduleError::EpochOutOfRange { t, epochs: self.epochs });
        }
        let x = || t as f64 / (self.epochs - 1) as f64;
        Ok(match self.kind {
            ScheduleKind::PureDistilled | ScheduleKind::AllBlend => 1.0,
            ScheduleKind::PureOriginal => 0.0,
            ScheduleKind::SimpleMix => {
                if 2 * t < self.epochs {
                    1.0
                } else {
                    0.0
                }
            }
            ScheduleKind::Sigmoid { k } => 1.0 - 1.0 / (1.0 + (-k * (x() - 0.5)).exp()),
            ScheduleKind::Cosine => 0.5 * (1.0 + cos_pi(x())),
            ScheduleKind::Power { n } => 1.0 - x().powf(n),
        })
    }

    pub fn w1(&self, t: usize) -> Result<f64, ScheduleError> {
        let w0 = self.w0(t)?;
        Ok(match self.kind {
            ScheduleKind::AllBlend => 1.0,
            _ => 1.0 - w0,
        })
    }

    pub fn weights(&self, t: usize) -> Result<(f64, f64), ScheduleError> {
        Ok((self.w0(t)?, self.w1(t)?))
    }
}

/// `cos(pi * x)` with the half-turn points returned exactly.
fn cos_pi(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x == 1.0 {
        -1.0
    } else if x == 0.5 {
        0.0
    } else {
        (PI * x).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSpec {
    pub base_lr: f64,
    /// Per-epoch multiplier; 1.0 disables decay.
    pub decay_factor: f64,
}

impl Default for LrSpec {
    fn default() -> Self {
        LrSpec::constant(1e-5)
    }
}

impl LrSpec {
    pub fn constant(base_lr: f64) -> Self {
        LrSpec { base_lr, decay_factor: 1.0 }
    }

    pub fn decaying(base_lr: f64, decay_factor: f64) -> Self {
        LrSpec { base_lr, decay_factor }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return Err(ScheduleError::BadParam(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.decay_factor.is_nan() || self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(ScheduleError::BadParam(format!("decay_factor must be in (0, 1], got {}", self.decay_factor)));
        }
        Ok(())
    }

    pub fn has_decay(&self) -> bool {
        self.decay_factor != 1.0
    }
}

pub fn lr_at_epoch(lr: &LrSpec, t: usize) -> f64 {
    lr.base_lr * lr.decay_factor.powi(t as i32)
}

/// The 14 decaying curves: simple mix, sigmoid over `k`, cosine, power over `n`.
pub fn standard_family(epochs: usize) -> Vec<ScheduleSpec> {
    let mut kinds = vec![ScheduleKind::SimpleMix];
    kinds.extend(SIGMOID_K.iter().map(|&k| ScheduleKind::Sigmoid { k }));
    kinds.push(ScheduleKind::Cosine);
    kinds.extend(POWER_N.iter().map(|&n| ScheduleKind::Power { n }));
    kinds.into_iter().map(|k| ScheduleSpec::new(k, epochs)).collect()
}

pub const SIGMOID_K: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];
pub const POWER_N: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub params: String,
    pub t: usize,
    pub w0: f64,
}

pub fn emit_curves(specs: &[ScheduleSpec]) -> Result<Vec<CurveRow>, ScheduleError> {
    let mut rows = Vec::new();
    for spec in specs {
        for t in 0..spec.epochs {
            rows.push(CurveRow {
                strategy: spec.kind.name().to_string(),
                params: spec.kind.params(),
                t,
                w0: spec.w0(t)?,
            });
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with header `strategy,params,t,w0`; values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_curves_csv<W: Write>(rows: &[CurveRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<CurveRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart of `w0` against `t`, one polyline per strategy.
pub fn render_svg(rows: &[CurveRow]) -> String {
    let (w, h, pad, legend) = (640.0, 400.0, 48.0, 180.0);
    let max_t = rows.iter().map(|r| r.t).max().unwrap_or(0).max(1) as f64;
    let px = |t: usize| pad + (w - 2.0 * pad) * t as f64 / max_t;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let mut curves: Vec<(String, Vec<&CurveRow>)> = Vec::new();
    for r in rows {
        let key = if r.params.is_empty() { r.strategy.clone() } else { format!("{} {}", r.strategy, r.params) };
        match curves.last_mut() {
            Some((k, pts)) if *k == key => pts.push(r),
            _ => curves.push((key, vec![r])),
        }
    }
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" font-family="sans-serif" font-size="11">"#,
        w + legend
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    )
    .unwrap();
    for v in [0.0, 0.5, 1.0] {
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, pad - 6.0, py(v) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, w / 2.0, h - 12.0).unwrap();
    for (i, (key, pts)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = if i >= PALETTE.len() { r#" stroke-dasharray="4 3""# } else { "" };
        let points: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.t), py(r.w0))).collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = pad + 14.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/><text x="{}" y="{}">{key}</text>"#,
            w + 4.0,
            w + 24.0,
            w + 30.0,
            ly + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
