//! Quantized, background-removed pH measurements.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::MeasurementConfig;
use crate::error::{Error, Result};

/// Rounds `y` to the nearest multiple of `p`; exact halves go away from zero.
///
/// Halves are detected up to a few ulps of `y / p`, so decimal inputs such
/// as `7.51` with `p = 0.02` count as ties even though their binary
/// representation is not exactly half-way.
pub fn quantize(y: f64, p: f64) -> f64 {
    quantize_index(y, p) * p
}

fn quantize_index(y: f64, p: f64) -> f64 {
    let q = y / p;
    let f = q.floor();
    let frac = q - f;
    if (frac - 0.5).abs() <= 8.0 * f64::EPSILON * q.abs().max(1.0) {
        if q >= 0.0 {
            f + 1.0
        } else {
            f
        }
    } else {
        q.round()
    }
}

/// A background-removed measurement vector `b_i = quantize(pH_i) − pH0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhTrace {
    pub values: Vec<f64>,
    pub dt: f64,
    pub precision: f64,
    pub ph0: f64,
}

impl PhTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The quantized pH readings, `b_i + pH0`.
    pub fn readings(&self) -> Vec<f64> {
        self.values.iter().map(|b| b + self.ph0).collect()
    }

    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.values.len() != expected_len {
            return Err(Error::Parse(format!("datum has {} samples, expected {expected_len}", self.values.len())));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Parse(format!("datum value {v} is negative or not finite")));
        }
        Ok(())
    }

    /// CSV: a `pH0,p,dt` header row, its values, then one `b_i` per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pH0,p,dt")?;
        writeln!(w, "{},{},{}", self.ph0, self.precision, self.dt)?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<Option<String>> {
            for line in lines.by_ref() {
                let line = line?;
                let t = line.trim();
                if !t.is_empty() {
                    return Ok(Some(t.to_string()));
                }
            }
            Ok(None)
        };
        let header = next()?.ok_or_else(|| Error::Parse("empty datum file".into()))?;
        if header.replace(' ', "") != "pH0,p,dt" {
            return Err(Error::Parse(format!("expected header 'pH0,p,dt', found '{header}'")));
        }
        let meta = next()?.ok_or_else(|| Error::Parse("missing datum metadata row".into()))?;
        let meta: Vec<f64> = meta.split(',').map(parse_f64).collect::<Result<_>>()?;
        if meta.len() != 3 {
            return Err(Error::Parse("metadata row needs pH0, p and dt".into()));
        }
        let mut values = Vec::new();
        while let Some(line) = next()? {
            values.push(parse_f64(&line)?);
        }
        Ok(PhTrace { values, ph0: meta[0], precision: meta[1], dt: meta[2] })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// Raw little-endian layout: `pH0, p, dt, n` (n as f64) followed by the values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.ph0, self.precision, self.dt, self.values.len() as f64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() % 8 != 0 || buf.len() < 32 {
            return Err(Error::Parse("truncated binary datum".into()));
        }
        let all: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let n = all[3] as usize;
        if all.len() != 4 + n {
            return Err(Error::Parse(format!("binary datum declares {n} values but holds {}", all.len() - 4)));
        }
        Ok(PhTrace { ph0: all[0], precision: all[1], dt: all[2], values: all[4..].to_vec() })
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: '{s}'")))
}

/// Builds the datum from a compartment pH series.
///
/// Quantized readings below `pH0` by at most one precision step are clamped
/// to zero; anything lower violates the non-negativity of the data model and
/// is reported as a domain error.
pub fn make_datum(ph: &[f64], m: &MeasurementConfig) -> Result<PhTrace> {
    datum(ph, m, true)
}

fn datum(ph: &[f64], m: &MeasurementConfig, strict: bool) -> Result<PhTrace> {
    let n = m.n_samples();
    if ph.len() != n {
        return Err(Error::domain(format!("pH series has {} samples, expected {n}", ph.len())));
    }
    let p = m.precision;
    let n0 = m.ph0 / p;
    let on_grid = (n0 - n0.round()).abs() < 1e-9;
    let mut values = Vec::with_capacity(n);
    for (i, &y) in ph.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::domain(format!("pH sample {i} is not finite")));
        }
        // Work in units of p when pH0 is on the grid so that b is an exact multiple of p.
        let b = if on_grid { (quantize_index(y, p) - n0.round()) * p } else { quantize(y, p) - m.ph0 };
        if strict && b < -p * (1.0 + 1e-9) {
            return Err(Error::domain(format!("pH {y} at sample {i} falls below the background {}", m.ph0)));
        }
        values.push(b.max(0.0));
    }
    Ok(PhTrace { values, dt: m.sample_interval, precision: p, ph0: m.ph0 })
}

/// As [`make_datum`], adding `N(0, noise_std²)` to each pH value first.
/// Noisy readings below the background are clamped to zero.
pub fn make_noisy_datum<R: Rng>(ph: &[f64], m: &MeasurementConfig, rng: &mut R) -> Result<PhTrace> {
    if m.noise_std == 0.0 {
        return make_datum(ph, m);
    }
    let noisy: Vec<f64> = ph
        .iter()
        .map(|&y| {
            let z: f64 = rng.sample(StandardNormal);
            y + m.noise_std * z
        })
        .collect();
    datum(&noisy, m, false)
}
