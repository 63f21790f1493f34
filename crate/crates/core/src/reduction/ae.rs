//! Dense autoencoders and the two-step POD + autoencoder reduction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::pod::PodBasis;
use crate::error::{check_len, Error, Result};
use crate::neuralnet::{run_adam, Activation, DenseNetwork, TrainConfig, TrainReport};

/// Hidden widths of the encoder between input and latent layer; the decoder
/// mirrors them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeArch {
    pub hidden: Vec<usize>,
}

impl Default for AeArch {
    fn default() -> Self {
        Self { hidden: vec![50, 20] }
    }
}

impl AeArch {
    pub fn encoder_sizes(&self, n_in: usize, r: usize) -> Vec<usize> {
        let mut sizes = vec![n_in];
        sizes.extend(&self.hidden);
        sizes.push(r);
        sizes
    }

    pub fn decoder_sizes(&self, r: usize, n_out: usize) -> Vec<usize> {
        let mut sizes = vec![r];
        sizes.extend(self.hidden.iter().rev());
        sizes.push(n_out);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
    /// Training loss of the returned parameters.
    pub final_loss: f64,
}

impl AeModel {
    /// Trains encoder and decoder jointly on the columns of `snapshots` by
    /// minimizing `(1/N) Σ ||s_i - D(E(s_i))||²`.
    pub fn fit(snapshots: &DMatrix<f64>, r: usize, arch: &AeArch, cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        let (n_dof, n) = snapshots.shape();
        if n == 0 {
            return Err(Error::Empty("autoencoder training set"));
        }
        if r == 0 {
            return Err(Error::Invalid("latent dimension must be positive".into()));
        }
        let mut encoder = DenseNetwork::new(&arch.encoder_sizes(n_dof, r), Activation::Softplus, cfg.seed)?;
        let mut decoder = DenseNetwork::new(
            &arch.decoder_sizes(r, n_dof),
            Activation::Softplus,
            cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?;
        let split = encoder.n_params();
        let mut theta = encoder.params_flat();
        theta.extend(decoder.params_flat());
        let scale = 2.0 / n as f64;
        let report = run_adam(&mut theta, cfg, |theta| {
            encoder.set_params_flat(&theta[..split])?;
            decoder.set_params_flat(&theta[split..])?;
            let enc_tape = encoder.forward_tape(snapshots);
            let dec_tape = decoder.forward_tape(enc_tape.output());
            let residual = dec_tape.output() - snapshots;
            let loss = residual.norm_squared() / n as f64;
            let (dec_grad, d_code) = decoder.backward(&dec_tape, residual * scale, true);
            let (enc_grad, _) = encoder.backward(&enc_tape, d_code.expect("input gradient requested"), false);
            let mut g = enc_grad.flatten();
            g.extend(dec_grad.flatten());
            Ok((loss, g))
        })?;
        encoder.set_params_flat(&theta[..split])?;
        decoder.set_params_flat(&theta[split..])?;
        let model = AeModel {
            encoder,
            decoder,
            final_loss: report.final_loss,
        };
        Ok((model, report))
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_width()
    }

    pub fn n_dof(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn encode(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(field)
    }

    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(code)
    }

    pub fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.encoder.forward_batch(fields)
    }

    pub fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.decoder.forward_batch(codes)
    }

    /// `(1/N) Σ ||s_i - D(E(s_i))||²`.
    pub fn loss(&self, snapshots: &DMatrix<f64>) -> Result<f64> {
        let rec = self.decode_batch(&self.encode_batch(snapshots)?)?;
        Ok((rec - snapshots).norm_squared() / snapshots.ncols() as f64)
    }
}

/// Full POD basis (`r_med = N_train` modes) followed by an autoencoder on the
/// POD coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodAeModel {
    pub outer: PodBasis,
    /// Coefficients are divided by this before entering the inner autoencoder.
    pub coeff_scale: f64,
    pub inner: AeModel,
}

impl PodAeModel {
    pub fn fit(snapshots: &DMatrix<f64>, r: usize, arch: &AeArch, cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        let (n_dof, n) = snapshots.shape();
        if n < r {
            return Err(Error::Invalid(format!("need at least {r} snapshots, got {n}")));
        }
        if n_dof < n {
            return Err(Error::Invalid(format!(
                "two-step reduction keeps {n} modes but fields have only {n_dof} values"
            )));
        }
        let outer = PodBasis::fit(snapshots, n)?;
        let coeffs = outer.encode_batch(snapshots)?;
        // RMS of the coefficients, i.e. sqrt(Σσ²/(N·r_med)).
        let rms = (coeffs.norm_squared() / coeffs.len() as f64).sqrt();
        let coeff_scale = if rms > 0.0 { rms } else { 1.0 };
        let (inner, report) = AeModel::fit(&(coeffs / coeff_scale), r, arch, cfg)?;
        Ok((
            Self {
                outer,
                coeff_scale,
                inner,
            },
            report,
        ))
    }

    pub fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    pub fn n_dof(&self) -> usize {
        self.outer.n_dof()
    }

    pub fn encode(&self, field: &[f64]) -> Result<Vec<f64>> {
        let a = self.outer.encode(field)?;
        let scaled: Vec<f64> = a.iter().map(|v| v / self.coeff_scale).collect();
        self.inner.encode(&scaled)
    }

    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        let scaled = self.inner.decode(code)?;
        let a: Vec<f64> = scaled.iter().map(|v| v * self.coeff_scale).collect();
        self.outer.decode(&a)
    }

    pub fn encode_batch(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.outer.encode_batch(fields)? / self.coeff_scale;
        self.inner.encode_batch(&a)
    }

    pub fn decode_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.inner.decode_batch(codes)? * self.coeff_scale;
        self.outer.decode_batch(&a)
    }
}

pub(crate) fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

pub(crate) fn columns_to_matrix(rows: usize, cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    for c in cols {
        check_len(rows, c.len(), "column length")?;
    }
    Ok(DMatrix::from_columns(
        &cols.iter().map(|c| DVector::from_column_slice(c)).collect::<Vec<_>>(),
    ))
}
