//! One-dimensional rupture localization from three arrival times.
//!
//! Roles follow the detection order: `s2` is the first sensor to hear the
//! wave and `s3` the second, so the break lies between them. `s1` sits on
//! the far side of `s2`, where the wave passes `s1` and `s2` in sequence;
//! that pair measures the propagation speed
//!
//! ```text
//! v = L12 / (t1 - t2)
//! ```
//!
//! and the offset of the break from `s2` toward `s3` is
//!
//! ```text
//! X = (L23 - v * (t3 - t2)) / 2
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::retiming::EventCluster;
use crate::wave::{CableGeometry, SensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimateFlag {
    OutOfSpan,
    DegenerateDt,
    InsufficientSensors,
}

impl fmt::Display for EstimateFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimateFlag::OutOfSpan => "OUT_OF_SPAN",
            EstimateFlag::DegenerateDt => "DEGENERATE_DT",
            EstimateFlag::InsufficientSensors => "INSUFFICIENT_SENSORS",
        })
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum LocalizeError {
    #[error("need at least 3 usable sensors, have {0}")]
    InsufficientSensors(usize),
    #[error("non-positive time difference {0} µs across the speed pair")]
    DegenerateDt(f64),
    #[error("sensor {0} is not part of the geometry")]
    UnknownSensor(SensorId),
    #[error("spacing and speed must be positive")]
    NonPositiveInput,
}

impl LocalizeError {
    pub fn flag(&self) -> EstimateFlag {
        match self {
            LocalizeError::DegenerateDt(_) | LocalizeError::NonPositiveInput => {
                EstimateFlag::DegenerateDt
            }
            LocalizeError::InsufficientSensors(_) | LocalizeError::UnknownSensor(_) => {
                EstimateFlag::InsufficientSensors
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorTriple {
    pub s1: SensorId,
    pub s2: SensorId,
    pub s3: SensorId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuptureEstimate {
    pub x_est_m: Option<f64>,
    pub v_est_m_s: Option<f64>,
    pub triple: Option<SensorTriple>,
    pub flags: BTreeSet<EstimateFlag>,
}

impl RuptureEstimate {
    fn failed(triple: Option<SensorTriple>, err: LocalizeError) -> Self {
        Self {
            x_est_m: None,
            v_est_m_s: None,
            triple,
            flags: BTreeSet::from([err.flag()]),
        }
    }

    pub fn flags_label(&self) -> String {
        self.flags
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Picks the triple from per-sensor arrival times. Ties in arrival order
/// break by ascending sensor id.
pub fn select_triple(
    arrivals: &[(SensorId, f64)],
    geom: &CableGeometry,
) -> Result<SensorTriple, LocalizeError> {
    if arrivals.len() < 3 {
        return Err(LocalizeError::InsufficientSensors(arrivals.len()));
    }
    let mut order: Vec<(SensorId, f64, usize)> = arrivals
        .iter()
        .map(|&(s, t)| {
            geom.index_of(s)
                .map(|i| (s, t, i))
                .ok_or(LocalizeError::UnknownSensor(s))
        })
        .collect::<Result<_, _>>()?;
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (s2, _, i2) = order[0];
    let (s3, _, i3) = order[1];

    let detected = |idx: usize| order.iter().any(|&(_, _, i)| i == idx);
    // nearest detecting sensor walking away from `from` in direction `step`
    let walk = |from: usize, step: isize| {
        let mut idx = from as isize + step;
        while idx >= 0 && (idx as usize) < geom.len() {
            if detected(idx as usize) {
                return Some(geom.ids()[idx as usize]);
            }
            idx += step;
        }
        None
    };
    let toward_s3: isize = if i3 > i2 { 1 } else { -1 };

    if let Some(s1) = walk(i2, -toward_s3) {
        return Ok(SensorTriple { s1, s2, s3 });
    }
    // s2 is the outermost detector; mirror the roles around the span.
    if let Some(s1) = walk(i3, toward_s3) {
        return Ok(SensorTriple { s1, s2: s3, s3: s2 });
    }
    Err(LocalizeError::InsufficientSensors(arrivals.len()))
}

/// Wave speed from the `s1`/`s2` pair; `t_s1` must be strictly later.
pub fn estimate_speed(t_s1_us: f64, t_s2_us: f64, l12_m: f64) -> Result<f64, LocalizeError> {
    if !(l12_m > 0.0) {
        return Err(LocalizeError::NonPositiveInput);
    }
    let dt = t_s1_us - t_s2_us;
    if !(dt > 0.0) {
        return Err(LocalizeError::DegenerateDt(dt));
    }
    Ok(l12_m / (dt * 1e-6))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanOffset {
    /// Distance from `s2` toward `s3`, meters.
    pub offset_m: f64,
    pub out_of_span: bool,
}

pub fn estimate_position(
    t_s2_us: f64,
    t_s3_us: f64,
    l23_m: f64,
    v_m_s: f64,
) -> Result<SpanOffset, LocalizeError> {
    if !(l23_m > 0.0 && v_m_s > 0.0) {
        return Err(LocalizeError::NonPositiveInput);
    }
    let offset_m = 0.5 * (l23_m - v_m_s * (t_s3_us - t_s2_us) * 1e-6);
    Ok(SpanOffset {
        offset_m,
        out_of_span: !(0.0..=l23_m).contains(&offset_m),
    })
}

/// Full estimate from per-sensor arrival times.
pub fn localize_arrivals(arrivals: &[(SensorId, f64)], geom: &CableGeometry) -> RuptureEstimate {
    let triple = match select_triple(arrivals, geom) {
        Ok(t) => t,
        Err(e) => return RuptureEstimate::failed(None, e),
    };
    let time_of = |s: SensorId| {
        arrivals
            .iter()
            .find(|&&(id, _)| id == s)
            .map(|&(_, t)| t)
            .unwrap()
    };
    let (t1, t2, t3) = (time_of(triple.s1), time_of(triple.s2), time_of(triple.s3));
    let attempt = || -> Result<RuptureEstimate, LocalizeError> {
        let pos = |s| {
            geom.position_of(s)
                .map_err(|_| LocalizeError::UnknownSensor(s))
        };
        let (p1, p2, p3) = (pos(triple.s1)?, pos(triple.s2)?, pos(triple.s3)?);
        let v = estimate_speed(t1, t2, (p1 - p2).abs())?;
        let span = estimate_position(t2, t3, (p3 - p2).abs(), v)?;
        let x = p2 + span.offset_m * (p3 - p2).signum();
        let mut flags = BTreeSet::new();
        if span.out_of_span {
            flags.insert(EstimateFlag::OutOfSpan);
        }
        Ok(RuptureEstimate {
            x_est_m: Some(x),
            v_est_m_s: Some(v),
            triple: Some(triple),
            flags,
        })
    };
    attempt().unwrap_or_else(|e| RuptureEstimate::failed(Some(triple), e))
}

pub fn localize(cluster: &EventCluster, geom: &CableGeometry) -> RuptureEstimate {
    localize_arrivals(&cluster.first_arrivals(), geom)
}
