"""Recurrent cells and sequence runners.

Two cells are provided: a vanilla tanh RNN (kept as a baseline building
block) and the standard no-peephole LSTM

    i = sigmoid(W_ix x + U_ih h + b_i)
    f = sigmoid(W_fx x + U_fh h + b_f)
    o = sigmoid(W_ox x + U_oh h + b_o)
    g = tanh   (W_gx x + U_gh h + b_g)
    c' = f * c + i * g
    h' = o * tanh(c')

Sequence runners fold the cell left to right from a zero state and keep a
per-step trace of every gate activation, so gradients can later be pushed
back through time without recomputing the forward pass.

`run_lstm_batch` is a fast path that advances a batch of independent
equal-length sequences in lockstep (one matrix multiply per gate per step
instead of one matrix-vector product per sequence). It computes exactly
the same recurrence and is equivalence-tested against `run_lstm`.
"""

from dataclasses import dataclass, fields

import numpy as np

from .numerics import ShapeError, affine, sigmoid, tanh_vec

__all__ = [
    "RnnParameters",
    "LstmParameters",
    "LstmState",
    "LstmStepTrace",
    "LstmBatchTrace",
    "rnn_step",
    "lstm_step",
    "run_lstm",
    "run_bidirectional",
    "run_lstm_batch",
]


@dataclass
class RnnParameters:
    """Weights of the vanilla recurrent cell plus its output head."""

    W_h: np.ndarray  # hidden x input
    U_h: np.ndarray  # hidden x hidden
    b_h: np.ndarray  # hidden
    U_y: np.ndarray  # out x hidden
    b_y: np.ndarray  # out


def rnn_step(params, x, h_prev):
    """One vanilla-RNN step: returns (new hidden, output)."""
    h = tanh_vec(affine(params.W_h, x, params.U_h, h_prev, params.b_h))
    y = tanh_vec(params.U_y @ h + params.b_y)
    return h, y


@dataclass
class LstmParameters:
    """The twelve LSTM weight arrays.

    Field order is load-bearing: serialization and initialization walk the
    arrays in exactly this order.
    """

    W_ix: np.ndarray
    W_fx: np.ndarray
    W_ox: np.ndarray
    W_gx: np.ndarray
    U_ih: np.ndarray
    U_fh: np.ndarray
    U_oh: np.ndarray
    U_gh: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def hidden_size(self):
        return self.W_ix.shape[0]

    @property
    def input_size(self):
        return self.W_ix.shape[1]

    def arrays(self):
        """Arrays in declared field order."""
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self):
        return LstmParameters(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, input_size, hidden_size):
        w = lambda: np.zeros((hidden_size, input_size))
        u = lambda: np.zeros((hidden_size, hidden_size))
        b = lambda: np.zeros(hidden_size)
        return cls(w(), w(), w(), w(), u(), u(), u(), u(), b(), b(), b(), b())


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size):
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass
class LstmStepTrace:
    """Everything one backward step needs: input, incoming state, gates, outputs."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray


def lstm_step(params, x, state):
    """One LSTM step; returns (new state, trace of this step)."""
    i = sigmoid(affine(params.W_ix, x, params.U_ih, state.h, params.b_i))
    f = sigmoid(affine(params.W_fx, x, params.U_fh, state.h, params.b_f))
    o = sigmoid(affine(params.W_ox, x, params.U_oh, state.h, params.b_o))
    g = tanh_vec(affine(params.W_gx, x, params.U_gh, state.h, params.b_g))
    c = f * state.c + i * g
    h = o * np.tanh(c)
    trace = LstmStepTrace(
        x=np.asarray(x, dtype=np.float64),
        h_prev=state.h,
        c_prev=state.c,
        i=i,
        f=f,
        o=o,
        g=g,
        c=c,
        h=h,
    )
    return LstmState(h=h, c=c), trace


def run_lstm(params, inputs, init=None):
    """Fold lstm_step over a nonempty sequence of input vectors.

    Returns (hiddens, final state, traces). The initial state defaults to
    zeros.
    """
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("run_lstm needs a nonempty input sequence")
    state = init if init is not None else LstmState.zeros(params.hidden_size)
    hiddens = []
    traces = []
    for x in inputs:
        state, trace = lstm_step(params, x, state)
        hiddens.append(state.h)
        traces.append(trace)
    return hiddens, state, traces


def run_bidirectional(fwd, bwd, inputs):
    """Run a forward and a backward LSTM over the same sequence.

    The backward LSTM consumes the reversed sequence; its outputs are
    re-reversed so that pairs[t] = (h_fwd at t, h_bwd at t). Both
    directions start from zero states. Returns (pairs, fwd_traces,
    bwd_traces); bwd_traces are in the order the backward pass computed
    them, i.e. reversed time.
    """
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("run_bidirectional needs a nonempty input sequence")
    h_fwd, _, fwd_traces = run_lstm(fwd, inputs)
    h_bwd_rev, _, bwd_traces = run_lstm(bwd, inputs[::-1])
    h_bwd = h_bwd_rev[::-1]
    pairs = list(zip(h_fwd, h_bwd))
    return pairs, fwd_traces, bwd_traces


@dataclass
class LstmBatchTrace:
    """Per-step trace of a batch run; every array is (batch x dim)."""

    X: np.ndarray
    H_prev: np.ndarray
    C_prev: np.ndarray
    I: np.ndarray
    F: np.ndarray
    O: np.ndarray
    G: np.ndarray
    C: np.ndarray
    H: np.ndarray


def run_lstm_batch(params, batch_inputs):
    """Advance n independent sequences in lockstep from zero states.

    batch_inputs has shape (n, steps, input_size). Returns (final hidden
    states as an (n, hidden) array, list of per-step batch traces).
    """
    batch_inputs = np.asarray(batch_inputs, dtype=np.float64)
    if batch_inputs.ndim != 3:
        raise ShapeError(
            f"batch input must be (n, steps, dim), got shape {batch_inputs.shape}"
        )
    n, steps, dim = batch_inputs.shape
    if steps == 0:
        raise ShapeError("run_lstm_batch needs at least one step")
    if dim != params.input_size:
        raise ShapeError(
            f"input dim {dim} does not match parameters ({params.input_size})"
        )
    H = np.zeros((n, params.hidden_size))
    C = np.zeros((n, params.hidden_size))
    traces = []
    for t in range(steps):
        X = batch_inputs[:, t, :]
        I = sigmoid(X @ params.W_ix.T + H @ params.U_ih.T + params.b_i)
        F = sigmoid(X @ params.W_fx.T + H @ params.U_fh.T + params.b_f)
        O = sigmoid(X @ params.W_ox.T + H @ params.U_oh.T + params.b_o)
        G = np.tanh(X @ params.W_gx.T + H @ params.U_gh.T + params.b_g)
        C_new = F * C + I * G
        H_new = O * np.tanh(C_new)
        traces.append(
            LstmBatchTrace(X=X, H_prev=H, C_prev=C, I=I, F=F, O=O, G=G, C=C_new, H=H_new)
        )
        H, C = H_new, C_new
    return H, traces
