//! Randomized and observational experiments against a [`Scenario`].
//!
//! Per sample: `z` has i.i.d. Rademacher entries on the chosen instruments,
//! `e` is standard Gaussian in `R^{d_x}`, `x = z alpha_S + e M` and
//! `y = x . beta + e . v`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::serde_matrix;
use crate::rng;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(with = "serde_matrix::row_major")]
    pub z: DMatrix<f64>,
    #[serde(with = "serde_matrix::row_major")]
    pub x: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub y: DVector<f64>,
    pub instrument_set: Vec<usize>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    /// Writes `z_1..z_dz, x_1..x_dx, y` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.d_z())
            .map(|k| format!("z_{k}"))
            .chain((1..=self.d_x()).map(|k| format!("x_{k}")))
            .chain(std::iter::once("y".to_string()))
            .collect();
        out.write_record(&header)?;
        for i in 0..self.n() {
            let record: Vec<String> = self
                .z
                .row(i)
                .iter()
                .chain(self.x.row(i).iter())
                .chain(std::iter::once(&self.y[i]))
                .map(|v| v.to_string())
                .collect();
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub(crate) fn validate_instrument_set(set: &[usize], n_iv: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidInstrumentSet("empty".into()));
    }
    for (k, &i) in set.iter().enumerate() {
        if i >= n_iv {
            return Err(Error::InvalidInstrumentSet(format!(
                "index {i} out of range for {n_iv} instruments"
            )));
        }
        if set[..k].contains(&i) {
            return Err(Error::InvalidInstrumentSet(format!("duplicate index {i}")));
        }
    }
    Ok(())
}

/// Randomizes the instruments in `instrument_set` over `n` samples.
pub fn run_experiment(
    scenario: &Scenario,
    instrument_set: &[usize],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    simulate(scenario, instrument_set, n, seed).map(|(d, _)| d)
}

/// Samples with every instrument held at zero; `z` has no columns.
pub fn observational_data(scenario: &Scenario, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InsufficientSamples { required: 2, got: n });
    }
    let mut rng = rng::stream(seed, 0);
    let e = gaussian_matrix(n, scenario.d_x, &mut rng);
    let x = &e * &scenario.mixing;
    let y = &x * &scenario.beta + &e * &scenario.conf_dir;
    Ok(Dataset {
        z: DMatrix::zeros(n, 0),
        x,
        y,
        instrument_set: Vec::new(),
    })
}

/// Like [`run_experiment`] but also returns the latent confounder draws `e`.
fn simulate(
    scenario: &Scenario,
    instrument_set: &[usize],
    n: usize,
    seed: u64,
) -> Result<(Dataset, DMatrix<f64>)> {
    validate_instrument_set(instrument_set, scenario.n_iv)?;
    let d_z = instrument_set.len();
    if n < d_z + 2 {
        return Err(Error::InsufficientSamples {
            required: d_z + 2,
            got: n,
        });
    }
    let mut rng = rng::stream(seed, 0);
    let z_data: Vec<f64> = (0..n * d_z)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let z = DMatrix::from_row_slice(n, d_z, &z_data);
    let e = gaussian_matrix(n, scenario.d_x, &mut rng);
    let x = &z * scenario.alpha_rows(instrument_set) + &e * &scenario.mixing;
    let y = &x * &scenario.beta + &e * &scenario.conf_dir;
    Ok((
        Dataset {
            z,
            x,
            y,
            instrument_set: instrument_set.to_vec(),
        },
        e,
    ))
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}
