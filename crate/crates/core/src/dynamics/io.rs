use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{RateDatum, RateQuantity, Trajectory};

/// One row of a rate-data CSV: `t,quantity,x,exposure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub t: usize,
    pub quantity: String,
    pub x: u64,
    pub exposure: f64,
}

impl RateRecord {
    pub fn from_datum(d: &RateDatum) -> Self {
        Self {
            t: d.t,
            quantity: d.quantity.as_str().to_string(),
            x: d.x,
            exposure: d.exposure,
        }
    }

    pub fn to_datum(&self) -> Result<RateDatum, String> {
        let quantity = RateQuantity::parse(&self.quantity)
            .ok_or_else(|| format!("unknown rate quantity `{}`", self.quantity))?;
        if !(self.exposure > 0.0) {
            return Err(format!("exposure must be positive, got {}", self.exposure));
        }
        if self.t == 0 {
            return Err("rate interval index is 1-based".into());
        }
        Ok(RateDatum {
            t: self.t,
            quantity,
            x: self.x,
            exposure: self.exposure,
        })
    }
}

pub fn read_rate_csv(reader: impl Read) -> Result<Vec<RateRecord>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Writes `t,e,s,u,d`, one row per annual state.
pub fn write_trajectory_csv(traj: &Trajectory, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "e", "s", "u", "d"])?;
    for (i, c) in traj.states.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            c.e.to_string(),
            c.s.to_string(),
            c.u.to_string(),
            c.d.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
