//! Newline-delimited JSON wire format for plants living in another process.
//!
//! The optimizer writes one [`Request`] per experiment and blocks until the
//! plant answers with one [`Measurement`] object on its own line:
//!
//! ```text
//! > {"k":0,"u":[-0.45,0.05]}
//! < {"phi":1.025,"g_p":[-0.19,-0.52],"grad_phi":[-1.9,-0.7],"grad_g_p":[[1.9,1.0],[-1.3,1.0]]}
//! ```
//!
//! Reals are written as shortest round-trip decimals, so a plant that
//! echoes exact doubles reproduces an in-process run bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnalyticPlant, Measurement, PlantOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub k: usize,
    pub u: Vec<f64>,
}

/// Plant oracle that talks to an external responder over a line stream.
pub struct StreamOracle<R, W> {
    reader: R,
    writer: W,
    n_u: usize,
    n_gp: usize,
    line: String,
}

impl<R: BufRead, W: Write> StreamOracle<R, W> {
    pub fn new(reader: R, writer: W, n_u: usize, n_gp: usize) -> Self {
        Self {
            reader,
            writer,
            n_u,
            n_gp,
            line: String::new(),
        }
    }
}

impl<R: BufRead, W: Write> PlantOracle for StreamOracle<R, W> {
    fn measure(&mut self, k: usize, u: &[f64]) -> Result<Measurement> {
        let oracle_err = |message: String| Error::Oracle { k, message };
        let req = serde_json::to_string(&Request { k, u: u.to_vec() })?;
        writeln!(self.writer, "{req}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::BrokenPipe => oracle_err("plant closed the stream".into()),
                _ => oracle_err(format!("cannot send request: {e}")),
            })?;
        self.line.clear();
        let read = self
            .reader
            .read_line(&mut self.line)
            .map_err(|e| oracle_err(format!("cannot read response: {e}")))?;
        if read == 0 {
            return Err(oracle_err("plant closed the stream".into()));
        }
        let text = self.line.trim_end();
        let m: Measurement = serde_json::from_str(text)
            .map_err(|e| oracle_err(format!("malformed response {text:?}: {e}")))?;
        m.validate(self.n_u, self.n_gp)
            .map_err(|e| oracle_err(format!("{e} in response {text:?}")))?;
        Ok(m)
    }
}

/// Answer requests from `reader` with `plant` until the stream ends or
/// `limit` requests have been served. Returns the number served.
pub fn serve<P: AnalyticPlant + ?Sized, R: BufRead, W: Write>(
    plant: &P,
    mut reader: R,
    mut writer: W,
    limit: Option<usize>,
) -> Result<usize> {
    let mut served = 0;
    let mut line = String::new();
    while limit.is_none_or(|l| served < l) {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(line.trim_end())?;
        let m = plant.evaluate(&req.u);
        writeln!(writer, "{}", serde_json::to_string(&m)?)?;
        writer.flush()?;
        served += 1;
    }
    Ok(served)
}
