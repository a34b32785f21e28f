use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::expr::VariableId;
use crate::parallel;

use super::Scm;

/// Row-major table of samples of the endogenous variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<VariableId>,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<VariableId>, data: Vec<f64>) -> Result<Self> {
        if columns.is_empty() || data.len() % columns.len() != 0 {
            return Err(Error::InvalidArgument(
                "data length is not a multiple of the column count".into(),
            ));
        }
        Ok(Dataset { columns, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.columns.len())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.as_str() == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.rows().map(|r| r[k]).collect())
    }

    /// CSV with a header row; values carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.columns.iter().map(VariableId::as_str))?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let columns: Vec<VariableId> = rd.headers()?.iter().map(VariableId::new).collect();
        let mut data = Vec::new();
        for rec in rd.records() {
            for field in rec?.iter() {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Io(format!("bad number `{field}`: {e}")))?,
                );
            }
        }
        Dataset::new(columns, data)
    }
}

impl Scm {
    /// `n` i.i.d. draws of the endogenous variables.
    pub fn sample_observational(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let ne = self.n_exogenous();
        let nv = self.n_endogenous();
        let chunks = parallel::map_chunks(n, seed, |range, rng| -> Result<Vec<f64>> {
            let mut slots = vec![0.0; self.n_slots()];
            let mut regs = Vec::new();
            let mut out = Vec::with_capacity(range.len() * nv);
            for _ in range {
                for (i, e) in self.exogenous().iter().enumerate() {
                    slots[i] = e.dist.sample(rng);
                }
                self.forward_slots(&mut slots, None, &mut regs)?;
                out.extend_from_slice(&slots[ne..]);
            }
            Ok(out)
        });
        let mut data = Vec::with_capacity(n * nv);
        for c in chunks {
            data.extend(c?);
        }
        let columns = self.endogenous().iter().map(|d| d.name.clone()).collect();
        Dataset::new(columns, data)
    }
}
