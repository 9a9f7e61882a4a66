//! Layer-size heuristics; all results round half up and are at least 1.

fn round_half_up(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

/// Embedding width for a sub-column of cardinality `d_in`: `3·d^0.25`.
pub fn embed_dim(d_in: usize) -> usize {
    round_half_up(3.0 * (d_in.max(1) as f64).powf(0.25))
}

/// Regressor width for a head of cardinality `d_in`: `16·max(1, ln d)`.
pub fn regressor_units(d_in: usize) -> usize {
    round_half_up(16.0 * (d_in.max(1) as f64).ln().max(1.0))
}

/// Context embedding width, `d_ctx` being the width of the concatenated
/// context embeddings: `64·max(1, ln d)`.
pub fn context_units(d_ctx: usize) -> usize {
    round_half_up(64.0 * (d_ctx.max(1) as f64).ln().max(1.0))
}

/// LSTM width from the concatenated target embedding width and the median
/// sequence length: `32·max(1, ln(d_tgt·s_q50))`.
pub fn history_units(d_tgt: usize, s_q50: usize) -> usize {
    round_half_up(32.0 * ((d_tgt.max(1) * s_q50.max(1)) as f64).ln().max(1.0))
}
