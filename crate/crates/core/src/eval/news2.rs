use super::EvalError;

/// Points for values `<= upper` of one band; the last band of each
/// parameter has `upper = +inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBand {
    pub upper: f64,
    pub points: u8,
}

const fn band(upper: f64, points: u8) -> ScoreBand {
    ScoreBand { upper, points }
}

/// Published NEWS2 chart (air/oxygen row omitted). Units: breaths/min, %,
/// mmHg, beats/min, °C.
pub struct News2Chart {
    pub respiration_rate: [ScoreBand; 5],
    pub spo2: [ScoreBand; 4],
    pub systolic_bp: [ScoreBand; 5],
    pub heart_rate: [ScoreBand; 6],
    pub temperature: [ScoreBand; 5],
}

pub const NEWS2_CHART: News2Chart = News2Chart {
    respiration_rate: [band(8.0, 3), band(11.0, 1), band(20.0, 0), band(24.0, 2), band(f64::INFINITY, 3)],
    spo2: [band(91.0, 3), band(93.0, 2), band(95.0, 1), band(f64::INFINITY, 0)],
    systolic_bp: [band(90.0, 3), band(100.0, 2), band(110.0, 1), band(219.0, 0), band(f64::INFINITY, 3)],
    heart_rate: [
        band(40.0, 3),
        band(50.0, 1),
        band(90.0, 0),
        band(110.0, 1),
        band(130.0, 2),
        band(f64::INFINITY, 3),
    ],
    temperature: [band(35.0, 3), band(36.0, 1), band(38.0, 0), band(39.0, 1), band(f64::INFINITY, 2)],
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct News2Input {
    pub rr: f64,
    pub spo2: f64,
    pub sbp: f64,
    pub hr: f64,
    /// Celsius.
    pub bt: f64,
    pub gcs_total: f64,
}

fn lookup(bands: &[ScoreBand], value: f64) -> u8 {
    bands.iter().find(|b| value <= b.upper).map_or(0, |b| b.points)
}

fn check(param: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64, EvalError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(EvalError::OutOfRange { param, value })
    }
}

/// Sum of the six sub-scores. Consciousness uses GCS: 15 scores 0, anything
/// lower scores 3.
pub fn news2_score(input: &News2Input) -> Result<u8, EvalError> {
    let c = &NEWS2_CHART;
    let rr = check("rr", input.rr, 0.0, 100.0)?;
    let spo2 = check("spo2", input.spo2, 0.0, 100.0)?;
    let sbp = check("sbp", input.sbp, 0.0, 400.0)?;
    let hr = check("hr", input.hr, 0.0, 400.0)?;
    let bt = check("bt", input.bt, 20.0, 46.0)?;
    let gcs = check("gcs_total", input.gcs_total, 3.0, 15.0)?;
    let consciousness = if gcs < 15.0 { 3 } else { 0 };
    Ok(lookup(&c.respiration_rate, rr)
        + lookup(&c.spo2, spo2)
        + lookup(&c.systolic_bp, sbp)
        + lookup(&c.heart_rate, hr)
        + lookup(&c.temperature, bt)
        + consciousness)
}
