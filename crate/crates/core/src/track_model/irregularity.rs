use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_csv, write_csv};
use crate::math::interp;
use crate::{Error, Result};

/// Default spacing of sampled irregularity fields (m).
pub const DEFAULT_SPACING: f64 = 0.25;

/// Rail-centreline displacements from their ideal positions, in track-frame
/// components (m).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RailOffsets {
    pub y_lir: f64,
    pub z_lir: f64,
    pub y_rir: f64,
    pub z_rir: f64,
}

impl RailOffsets {
    pub fn to_record(self, s: f64) -> IrregularityRecord {
        IrregularityRecord {
            s,
            al: 0.5 * (self.y_lir + self.y_rir),
            vp: 0.5 * (self.z_lir + self.z_rir),
            gv: self.y_lir - self.y_rir,
            cl: self.z_lir - self.z_rir,
            tw: 0.0,
        }
    }
}

/// Alignment, vertical profile, gauge variation and cross level (m), plus
/// twist as cross-level slope (m/m).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IrregularityRecord {
    pub s: f64,
    pub al: f64,
    pub vp: f64,
    pub gv: f64,
    pub cl: f64,
    pub tw: f64,
}

/// Inverse of the alignment/profile/gauge/cross-level combinations.
pub fn irregularities_to_rails(rec: &IrregularityRecord) -> RailOffsets {
    RailOffsets {
        y_lir: rec.al + 0.5 * rec.gv,
        y_rir: rec.al - 0.5 * rec.gv,
        z_lir: rec.vp + 0.5 * rec.cl,
        z_rir: rec.vp - 0.5 * rec.cl,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    s: f64,
    y_lir: f64,
    z_lir: f64,
    y_rir: f64,
    z_rir: f64,
}

/// Rail irregularities sampled along the track, linearly interpolated
/// between samples and held constant beyond the ends.
#[derive(Clone, Debug, PartialEq)]
pub struct IrregularityField {
    s: Vec<f64>,
    y_lir: Vec<f64>,
    z_lir: Vec<f64>,
    y_rir: Vec<f64>,
    z_rir: Vec<f64>,
}

impl IrregularityField {
    pub fn zero(total_length: f64) -> Self {
        Self::from_fn(total_length, DEFAULT_SPACING, |_| RailOffsets::default())
    }

    /// Samples `f` on a uniform grid covering `[0, total_length]`.
    pub fn from_fn(total_length: f64, spacing: f64, f: impl Fn(f64) -> RailOffsets) -> Self {
        let n = (total_length / spacing).ceil().max(1.0) as usize;
        let h = total_length / n as f64;
        let samples = (0..=n).map(|k| {
            let s = if k == n { total_length } else { k as f64 * h };
            (s, f(s))
        });
        Self::from_samples(samples).expect("uniform grid is increasing")
    }

    pub fn from_samples(samples: impl IntoIterator<Item = (f64, RailOffsets)>) -> Result<Self> {
        let mut field = IrregularityField {
            s: Vec::new(),
            y_lir: Vec::new(),
            z_lir: Vec::new(),
            y_rir: Vec::new(),
            z_rir: Vec::new(),
        };
        for (s, o) in samples {
            if !s.is_finite() || [o.y_lir, o.z_lir, o.y_rir, o.z_rir].iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("non-finite irregularity sample at s = {s}")));
            }
            if let Some(&last) = field.s.last() {
                if s <= last {
                    return Err(Error::Input(format!("irregularity samples not increasing at s = {s}")));
                }
            }
            field.s.push(s);
            field.y_lir.push(o.y_lir);
            field.z_lir.push(o.z_lir);
            field.y_rir.push(o.y_rir);
            field.z_rir.push(o.z_rir);
        }
        if field.s.is_empty() {
            return Err(Error::Input("empty irregularity field".into()));
        }
        Ok(field)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn stations(&self) -> &[f64] {
        &self.s
    }

    pub fn at(&self, s: f64) -> RailOffsets {
        RailOffsets {
            y_lir: interp(&self.s, &self.y_lir, s),
            z_lir: interp(&self.s, &self.z_lir, s),
            y_rir: interp(&self.s, &self.y_rir, s),
            z_rir: interp(&self.s, &self.z_rir, s),
        }
    }

    pub fn record_at(&self, s: f64) -> IrregularityRecord {
        self.at(s).to_record(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<FieldRow> = read_csv(path)?;
        Self::from_samples(
            rows.into_iter()
                .map(|r| (r.s, RailOffsets { y_lir: r.y_lir, z_lir: r.z_lir, y_rir: r.y_rir, z_rir: r.z_rir })),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows = (0..self.len()).map(|i| FieldRow {
            s: self.s[i],
            y_lir: self.y_lir[i],
            z_lir: self.z_lir[i],
            y_rir: self.y_rir[i],
            z_rir: self.z_rir[i],
        });
        write_csv(path, rows)
    }
}
