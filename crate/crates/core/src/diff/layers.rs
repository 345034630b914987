//! Recurrent layers composed from [`Tape::lstm_step`].

use super::{DiffError, Real, Tape, Tensor, Var};

/// Tape handles for one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmWeights {
    pub fn hidden<F: Real>(&self, tape: &Tape<'_, F>) -> usize {
        tape.shape(self.w_hh)[1]
    }
}

/// Runs one cell step and splits the packed result into `(h', c')`.
pub fn lstm_cell<F: Real>(
    tape: &mut Tape<'_, F>,
    w: &LstmWeights,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), DiffError> {
    let hid = tape.value(h).len();
    let packed = tape.lstm_step(x, h, c, w.w_ih, w.w_hh, w.b)?;
    let h2 = tape.slice(packed, 0, hid)?;
    let c2 = tape.slice(packed, hid, hid)?;
    Ok((h2, c2))
}

/// Hidden outputs of a cell unrolled over `xs` from a zero state, plus the final cell state.
pub fn lstm_sequence<F: Real>(
    tape: &mut Tape<'_, F>,
    w: &LstmWeights,
    xs: &[Var],
) -> Result<(Vec<Var>, Var), DiffError> {
    let hid = w.hidden(tape);
    let mut h = tape.input(Tensor::zeros(&[hid]));
    let mut c = tape.input(Tensor::zeros(&[hid]));
    let mut outs = Vec::with_capacity(xs.len());
    for &x in xs {
        let (h2, c2) = lstm_cell(tape, w, x, h, c)?;
        outs.push(h2);
        h = h2;
        c = c2;
    }
    Ok((outs, c))
}

pub struct BiLstmOutput {
    /// `[N, 2d]`; row `j` is `[forward_j, backward_j]`.
    pub outputs: Var,
    /// Forward state after the last frame.
    pub forward_final: Var,
    /// Backward state after it has consumed the whole sequence (aligned with frame 0).
    pub backward_final: Var,
}

/// Bidirectional LSTM over the rows of `x` (`[N, m]`), zero initial states.
pub fn bilstm<F: Real>(
    tape: &mut Tape<'_, F>,
    x: Var,
    forward: &LstmWeights,
    backward: &LstmWeights,
) -> Result<BiLstmOutput, DiffError> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(DiffError::Shape(format!("bilstm expects [N, m], got {shape:?}")));
    }
    let (n, m) = (shape[0], shape[1]);
    if n == 0 {
        return Err(DiffError::Shape("bilstm over an empty sequence".into()));
    }
    let rows: Vec<Var> = (0..n)
        .map(|j| tape.slice(x, j * m, m))
        .collect::<Result<_, _>>()?;
    let (fwd, _) = lstm_sequence(tape, forward, &rows)?;
    let reversed: Vec<Var> = rows.iter().rev().copied().collect();
    let (mut bwd, _) = lstm_sequence(tape, backward, &reversed)?;
    bwd.reverse();
    let joined: Vec<Var> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<_, _>>()?;
    let outputs = tape.stack_rows(&joined)?;
    Ok(BiLstmOutput {
        outputs,
        forward_final: fwd[n - 1],
        backward_final: bwd[0],
    })
}
