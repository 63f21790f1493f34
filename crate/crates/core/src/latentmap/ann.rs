//! Feed-forward regressor from parameters to latent codes.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::neuralnet::{Activation, DenseNetwork, TrainConfig, TrainReport};
use crate::reduction::columns_to_matrix;

pub const ANN_HIDDEN: [usize; 3] = [20, 20, 20];

/// The network is trained on per-component standardized codes. A component
/// that is constant over the training set gets `out_scale = 0` and is
/// predicted exactly by its shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnMap {
    pub net: DenseNetwork,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl AnnMap {
    pub fn fit(params: &[Vec<f64>], codes: &[Vec<f64>], cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        let n = params.len();
        if n == 0 {
            return Err(Error::Empty("regression samples"));
        }
        check_len(n, codes.len(), "codes per parameter")?;
        let p = params[0].len();
        let r = codes[0].len();
        for (x, y) in params.iter().zip(codes) {
            check_len(p, x.len(), "parameter dimension")?;
            check_len(r, y.len(), "code width")?;
        }
        cfg.validate()?;

        let mut out_shift = vec![0.0; r];
        let mut out_scale = vec![0.0; r];
        for j in 0..r {
            let mean = codes.iter().map(|c| c[j]).sum::<f64>() / n as f64;
            let var = codes.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n as f64;
            out_shift[j] = mean;
            out_scale[j] = var.sqrt();
        }
        let standardized: Vec<Vec<f64>> = codes
            .iter()
            .map(|c| {
                c.iter()
                    .zip(out_shift.iter().zip(&out_scale))
                    .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                    .collect()
            })
            .collect();

        let mut sizes = vec![p];
        sizes.extend(ANN_HIDDEN);
        sizes.push(r);
        let mut net = DenseNetwork::new(&sizes, Activation::Softplus, cfg.seed)?;
        let inputs = columns_to_matrix(p, params)?;
        let targets = columns_to_matrix(r, &standardized)?;
        let report = net.train(&inputs, &targets, cfg)?;
        Ok((
            Self {
                net,
                out_shift,
                out_scale,
            },
            report,
        ))
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_width()
    }

    pub fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let z = self.net.forward(mu)?;
        Ok(z
            .iter()
            .zip(self.out_shift.iter().zip(&self.out_scale))
            .map(|(v, (m, s))| m + s * v)
            .collect())
    }
}
