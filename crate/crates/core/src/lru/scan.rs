use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use super::layer::{DiagonalSystem, HiddenState, LruLayerParams};
use crate::error::{ensure_len, Error, Result};

/// Sequences shorter than two chunks of this length are scanned on the
/// calling thread.
pub const MIN_CHUNK_LEN: usize = 128;

/// Per-node affine map `h ↦ a·h + b`. Composition is associative, which is
/// what lets the recurrence be evaluated chunk-parallel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: Complex64,
    pub b: Complex64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
    };

    /// `next ∘ self`: apply `self` first, then `next`.
    #[inline]
    pub fn then(self, next: Affine) -> Affine {
        Affine {
            a: self.a * next.a,
            b: next.a * self.b + next.b,
        }
    }

    #[inline]
    pub fn apply(self, h: Complex64) -> Complex64 {
        self.a * h + self.b
    }
}

/// States and outputs of a layer over a whole sequence.
#[derive(Debug, Clone)]
pub struct ScanOutput {
    /// `T × n`, row `t` is `h_t`.
    pub states: Array2<Complex64>,
    /// `T × p`, row `t` is `y_t`.
    pub outputs: Array2<f64>,
}

impl ScanOutput {
    pub fn final_state(&self) -> HiddenState {
        HiddenState {
            h: self.states.row(self.states.nrows() - 1).to_vec(),
        }
    }
}

/// Runs the layer over `u_seq` (`T × m`) starting from `h0`, using the
/// associative scan. Results agree with repeated [`super::layer_step`] up to
/// floating-point reassociation.
pub fn scan_forward(
    params: &LruLayerParams,
    h0: &HiddenState,
    u_seq: ArrayView2<f64>,
) -> Result<ScanOutput> {
    let t = u_seq.nrows();
    let chunks = rayon::current_num_threads().min(t / MIN_CHUNK_LEN).max(1);
    scan_forward_chunked(params, h0, u_seq, t.div_ceil(chunks).max(1))
}

/// [`scan_forward`] with an explicit chunk length.
pub fn scan_forward_chunked(
    params: &LruLayerParams,
    h0: &HiddenState,
    u_seq: ArrayView2<f64>,
    chunk_len: usize,
) -> Result<ScanOutput> {
    if u_seq.nrows() == 0 {
        return Err(Error::Contract("scan over an empty sequence".into()));
    }
    if chunk_len == 0 {
        return Err(Error::Contract("scan chunk length must be positive".into()));
    }
    ensure_len("hidden state", h0.len(), params.state_dim)?;
    ensure_len("input width", u_seq.ncols(), params.input_dim)?;
    let t = u_seq.nrows();
    let parallel = chunk_len < t;
    let sys = DiagonalSystem::new(params);

    let mut states = Array2::<Complex64>::zeros((t, params.state_dim));
    let fill_drive = |mut row: ndarray::ArrayViewMut1<Complex64>, u: ndarray::ArrayView1<f64>| {
        let u = contiguous(u);
        params.drive_into(&sys.gamma, &u, row.as_slice_mut().unwrap());
    };
    if parallel {
        Zip::from(states.rows_mut())
            .and(u_seq.rows())
            .par_for_each(fill_drive);
    } else {
        Zip::from(states.rows_mut())
            .and(u_seq.rows())
            .for_each(fill_drive);
    }

    linear_recurrence_scan(&sys.lambda, &h0.h, states.view_mut(), chunk_len);

    let mut outputs = Array2::<f64>::zeros((t, params.output_dim));
    let readout = |mut y: ndarray::ArrayViewMut1<f64>,
                   h: ndarray::ArrayView1<Complex64>,
                   u: ndarray::ArrayView1<f64>| {
        let u = contiguous(u);
        params.readout_into(h.as_slice().unwrap(), &u, y.as_slice_mut().unwrap());
    };
    if parallel {
        Zip::from(outputs.rows_mut())
            .and(states.rows())
            .and(u_seq.rows())
            .par_for_each(readout);
    } else {
        Zip::from(outputs.rows_mut())
            .and(states.rows())
            .and(u_seq.rows())
            .for_each(readout);
    }
    Ok(ScanOutput { states, outputs })
}

fn contiguous(row: ndarray::ArrayView1<'_, f64>) -> std::borrow::Cow<'_, [f64]> {
    match row.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(row.to_vec()),
    }
}

/// In-place inclusive scan of `h_t = λ ⊙ h_{t-1} + drive_t` over the rows of
/// `drive` (`T × n`, standard layout), with `h_{-1} = h0`.
///
/// Three phases: each chunk scans locally from a zero state (parallel), the
/// chunk summaries are folded left to produce each chunk's incoming state
/// (sequential, one step per chunk), and the incoming state is propagated
/// into every row of its chunk (parallel).
pub fn linear_recurrence_scan(
    lambda: &[Complex64],
    h0: &[Complex64],
    mut drive: ArrayViewMut2<Complex64>,
    chunk_len: usize,
) {
    let n = lambda.len();
    let summaries: Vec<Vec<Affine>> = drive
        .axis_chunks_iter_mut(Axis(0), chunk_len)
        .into_par_iter()
        .map(|mut chunk| {
            let mut acc = vec![Affine::IDENTITY; n];
            for mut row in chunk.rows_mut() {
                for j in 0..n {
                    acc[j] = acc[j].then(Affine {
                        a: lambda[j],
                        b: row[j],
                    });
                    row[j] = acc[j].b;
                }
            }
            acc
        })
        .collect();

    let mut carries = Vec::with_capacity(summaries.len());
    let mut carry = h0.to_vec();
    for summary in &summaries {
        carries.push(carry.clone());
        for j in 0..n {
            carry[j] = summary[j].apply(carry[j]);
        }
    }

    drive
        .axis_chunks_iter_mut(Axis(0), chunk_len)
        .into_par_iter()
        .zip(carries.par_iter())
        .for_each(|(mut chunk, carry)| {
            if carry.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                return;
            }
            let mut power = lambda.to_vec();
            for mut row in chunk.rows_mut() {
                for j in 0..n {
                    row[j] += power[j] * carry[j];
                    power[j] *= lambda[j];
                }
            }
        });
}
