//! Blind interference alignment over reconfigurable detectors.
//!
//! A supersymbol for `L` APs and `K` users has two blocks. Block 1 has
//! `(L-1)^K` slots indexed by mode tuples `t` in `{0..L-2}^K`; in slot `t`
//! user `k` listens on mode `t[k]` and every user's symbol vector indexed by
//! the other users' coordinates `t[-k]` is on the air. Block 2 has `K`
//! orthogonal sub-blocks of `(L-1)^(K-1)` slots; in sub-block `j`, slot `q`
//! carries only user `j`'s symbol `q`, which user `j` receives on mode
//! `L-1` while every other user `i` repeats the mode `q[i]` it used in
//! Block 1. Those repeats measure exactly the interference each user saw in
//! Block 1, so it can be subtracted, leaving `L` clean equations per symbol.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelMatrix;
use crate::error::{invalid, Error, Result};

fn check_dims(l: usize, k: usize) -> Result<()> {
    if l < 2 {
        return Err(Error::UnsupportedConfiguration(format!(
            "BIA needs at least 2 preset-mode dimensions, got L = {l}"
        )));
    }
    if k == 0 {
        return Err(Error::UnsupportedConfiguration(
            "BIA needs at least one user".into(),
        ));
    }
    Ok(())
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    u32::try_from(exp)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .ok_or_else(|| Error::UnsupportedConfiguration(format!("{base}^{exp} overflows")))
}

/// `(L-1)^K + K (L-1)^(K-1)`.
pub fn supersymbol_length(l: usize, k: usize) -> Result<usize> {
    check_dims(l, k)?;
    let b1 = checked_pow(l - 1, k)?;
    let b2 = checked_pow(l - 1, k - 1)?
        .checked_mul(k)
        .ok_or_else(|| Error::UnsupportedConfiguration("supersymbol too long".into()))?;
    b1.checked_add(b2)
        .ok_or_else(|| Error::UnsupportedConfiguration("supersymbol too long".into()))
}

/// Number of `L`-dimensional symbol vectors each user receives per
/// supersymbol, `(L-1)^(K-1)`.
pub fn symbols_per_user(l: usize, k: usize) -> Result<usize> {
    check_dims(l, k)?;
    checked_pow(l - 1, k - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    One,
    Two,
}

/// What one user does in one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub user: usize,
    pub mode: usize,
    /// The user's own symbol vector transmitted in this slot, if any.
    pub symbol: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub block: Block,
    /// One entry per user, indexed by user.
    pub assignments: Vec<Assignment>,
}

impl Slot {
    pub fn transmitted(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignments
            .iter()
            .filter_map(|a| a.symbol.map(|s| (a.user, s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupersymbolPlan {
    pub l: usize,
    pub k: usize,
    pub block1_len: usize,
    pub block2_len: usize,
    pub slots: Vec<Slot>,
    /// Per user: `slots x symbols` 0/1 activation, the column pattern of the
    /// transmit precoder (each 1 stands for an `L x L` identity block).
    pub beamforming: Vec<DMatrix<u8>>,
}

fn digits(mut index: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for d in out.iter_mut().rev() {
        *d = index % base;
        index /= base;
    }
    out
}

fn encode(digits: impl Iterator<Item = usize>, base: usize) -> usize {
    digits.fold(0, |acc, d| acc * base + d)
}

pub fn build_supersymbol(l: usize, k: usize) -> Result<SupersymbolPlan> {
    let length = supersymbol_length(l, k)?;
    let base = l - 1;
    let n_sym = symbols_per_user(l, k)?;
    let block1_len = checked_pow(base, k)?;
    let mut slots = Vec::with_capacity(length);

    for idx in 0..block1_len {
        let t = digits(idx, base, k);
        let assignments = (0..k)
            .map(|u| Assignment {
                user: u,
                mode: t[u],
                symbol: Some(encode(
                    t.iter()
                        .enumerate()
                        .filter(|&(i, _)| i != u)
                        .map(|(_, &d)| d),
                    base,
                )),
            })
            .collect();
        slots.push(Slot {
            block: Block::One,
            assignments,
        });
    }
    for j in 0..k {
        for s in 0..n_sym {
            let q = digits(s, base, k - 1);
            let assignments = (0..k)
                .map(|u| match u.cmp(&j) {
                    std::cmp::Ordering::Equal => Assignment {
                        user: u,
                        mode: l - 1,
                        symbol: Some(s),
                    },
                    std::cmp::Ordering::Less => Assignment {
                        user: u,
                        mode: q[u],
                        symbol: None,
                    },
                    std::cmp::Ordering::Greater => Assignment {
                        user: u,
                        mode: q[u - 1],
                        symbol: None,
                    },
                })
                .collect();
            slots.push(Slot {
                block: Block::Two,
                assignments,
            });
        }
    }

    let beamforming = (0..k)
        .map(|u| {
            DMatrix::from_fn(length, n_sym, |n, s| {
                u8::from(slots[n].assignments[u].symbol == Some(s))
            })
        })
        .collect();

    let plan = SupersymbolPlan {
        l,
        k,
        block1_len,
        block2_len: length - block1_len,
        slots,
        beamforming,
    };
    debug_assert!(plan.check_invariants().is_ok());
    Ok(plan)
}

impl SupersymbolPlan {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn symbols_per_user(&self) -> usize {
        self.beamforming.first().map_or(0, |b| b.ncols())
    }

    /// Block-2 slots keyed by the single `(user, symbol)` they carry.
    fn block2_index(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (n, slot) in self.slots.iter().enumerate() {
            if slot.block == Block::Two {
                let tx: Vec<_> = slot.transmitted().collect();
                if let [only] = tx[..] {
                    map.entry(only).or_default().push(n);
                }
            }
        }
        map
    }

    /// The Block-2 slot where `(user, symbol)` is sent alone while
    /// `listener` sits on `mode`.
    fn measurement_slot(
        &self,
        index: &HashMap<(usize, usize), Vec<usize>>,
        user: usize,
        symbol: usize,
        listener: usize,
        mode: usize,
    ) -> Option<usize> {
        index
            .get(&(user, symbol))?
            .iter()
            .copied()
            .find(|&n| self.slots[n].assignments[listener].mode == mode)
    }

    /// Exhaustive structural check of the plan.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(invalid(format!("supersymbol plan: {msg}")));
        let (l, k) = (self.l, self.k);
        let expected = supersymbol_length(l, k)?;
        let n_sym = symbols_per_user(l, k)?;
        if self.len() != expected || self.block1_len + self.block2_len != expected {
            return fail(format!("length {} != {expected}", self.len()));
        }
        if self.block2_len != k * n_sym {
            return fail(format!("block 2 has {} slots", self.block2_len));
        }
        for (n, slot) in self.slots.iter().enumerate() {
            let want_block = if n < self.block1_len {
                Block::One
            } else {
                Block::Two
            };
            if slot.block != want_block || slot.assignments.len() != k {
                return fail(format!("slot {n} malformed"));
            }
            for (u, a) in slot.assignments.iter().enumerate() {
                if a.user != u || a.mode >= l || a.symbol.is_some_and(|s| s >= n_sym) {
                    return fail(format!("slot {n} has a bad assignment for user {u}"));
                }
            }
            let active = slot.transmitted().count();
            match slot.block {
                Block::One if active != k => {
                    return fail(format!("block 1 slot {n} serves {active} of {k} users"))
                }
                Block::Two if active != 1 => {
                    return fail(format!(
                        "block 2 slot {n} is not orthogonal ({active} users)"
                    ))
                }
                _ => {}
            }
        }
        // alignment blocks: L-1 distinct modes in block 1, mode L-1 once in block 2
        for u in 0..k {
            for s in 0..n_sym {
                let mut b1_modes: Vec<usize> = Vec::new();
                let mut b2_modes: Vec<usize> = Vec::new();
                for slot in &self.slots {
                    let a = slot.assignments[u];
                    if a.symbol == Some(s) {
                        match slot.block {
                            Block::One => b1_modes.push(a.mode),
                            Block::Two => b2_modes.push(a.mode),
                        }
                    }
                }
                b1_modes.sort_unstable();
                if b1_modes != (0..l - 1).collect::<Vec<_>>() || b2_modes != [l - 1] {
                    return fail(format!("user {u} symbol {s} does not span L modes"));
                }
            }
        }
        // every interference term seen in block 1 is measured in block 2
        let index = self.block2_index();
        for (n, slot) in self.slots.iter().enumerate().take(self.block1_len) {
            for listener in 0..k {
                let mode = slot.assignments[listener].mode;
                for (user, symbol) in slot.transmitted().filter(|&(u, _)| u != listener) {
                    if self
                        .measurement_slot(&index, user, symbol, listener, mode)
                        .is_none()
                    {
                        return fail(format!(
                            "slot {n}: user {listener} cannot measure interference from user {user}"
                        ));
                    }
                }
            }
        }
        for (u, bf) in self.beamforming.iter().enumerate() {
            if bf.nrows() != self.len() || bf.ncols() != n_sym {
                return fail(format!("beamforming matrix of user {u} has wrong shape"));
            }
            for n in 0..self.len() {
                for s in 0..n_sym {
                    let on = self.slots[n].assignments[u].symbol == Some(s);
                    if bf[(n, s)] != u8::from(on) {
                        return fail(format!("beamforming of user {u} disagrees at slot {n}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Human-readable schedule, one slot per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# BIA supersymbol L={} K={} length={} block1={} block2={}\n",
            self.l,
            self.k,
            self.len(),
            self.block1_len,
            self.block2_len
        );
        for (n, slot) in self.slots.iter().enumerate() {
            let block = match slot.block {
                Block::One => 1,
                Block::Two => 2,
            };
            let _ = write!(out, "slot {n} block {block}:");
            for a in &slot.assignments {
                match a.symbol {
                    Some(s) => {
                        let _ = write!(out, " u{}:m{}:s{}", a.user, a.mode, s);
                    }
                    None => {
                        let _ = write!(out, " u{}:m{}:-", a.user, a.mode);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DecodeReport {
    /// `decoded[k][s]` estimates user `k`'s symbol vector `s`.
    pub decoded: Vec<Vec<DVector<f64>>>,
    /// Largest absolute error over all decoded entries.
    pub residual: f64,
}

/// Transmit `symbols` over the supersymbol, subtract the Block-2
/// interference measurements and invert each user's channel.
///
/// `symbols[k]` holds user `k`'s `(L-1)^(K-1)` symbol vectors of length
/// `L`. Noise draws are reproducible from `seed`.
pub fn verify_decoding(
    plan: &SupersymbolPlan,
    channels: &[ChannelMatrix],
    symbols: &[Vec<DVector<f64>>],
    noise_std: f64,
    seed: u64,
) -> Result<DecodeReport> {
    let (l, k) = (plan.l, plan.k);
    let n_sym = plan.symbols_per_user();
    if channels.len() != k || symbols.len() != k {
        return Err(invalid(format!(
            "expected {k} channels and symbol sets, got {} and {}",
            channels.len(),
            symbols.len()
        )));
    }
    if let Some(c) = channels.iter().find(|c| c.dim() != l) {
        return Err(invalid(format!(
            "channel of user {} is not {l}x{l}",
            c.user
        )));
    }
    if symbols
        .iter()
        .any(|s| s.len() != n_sym || s.iter().any(|v| v.len() != l))
    {
        return Err(invalid(format!(
            "each user needs {n_sym} symbol vectors of length {l}"
        )));
    }
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(invalid("noise std must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| invalid(e.to_string()))?;

    // y[u][n]: what user u's detector outputs in slot n
    let mut received = vec![vec![0.0; plan.len()]; k];
    for (n, slot) in plan.slots.iter().enumerate() {
        let mut x = DVector::zeros(l);
        for (u, s) in slot.transmitted() {
            x += &symbols[u][s];
        }
        for u in 0..k {
            let mode = slot.assignments[u].mode;
            let clean = channels[u].gains.row(mode).transpose().dot(&x);
            received[u][n] = clean
                + if noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
        }
    }

    let index = plan.block2_index();
    let mut decoded = vec![Vec::with_capacity(n_sym); k];
    let mut residual: f64 = 0.0;
    for u in 0..k {
        let h = &channels[u].gains;
        for (s, sent) in symbols[u].iter().enumerate() {
            let mut rows = DMatrix::zeros(l, l);
            let mut rhs = DVector::zeros(l);
            let mut filled = 0;
            for (n, slot) in plan.slots.iter().enumerate() {
                if slot.assignments[u].symbol != Some(s) {
                    continue;
                }
                if filled == l {
                    return Err(Error::DecodeFailure(format!(
                        "user {u} symbol {s} appears in more than {l} slots"
                    )));
                }
                let mode = slot.assignments[u].mode;
                let mut value = received[u][n];
                for (other, other_sym) in slot.transmitted().filter(|&(o, _)| o != u) {
                    let m = plan
                        .measurement_slot(&index, other, other_sym, u, mode)
                        .ok_or_else(|| {
                            Error::DecodeFailure(format!(
                                "no measurement of user {other} interference for user {u}"
                            ))
                        })?;
                    value -= received[u][m];
                }
                rows.set_row(filled, &h.row(mode));
                rhs[filled] = value;
                filled += 1;
            }
            if filled != l {
                return Err(Error::DecodeFailure(format!(
                    "user {u} symbol {s} has {filled} of {l} equations"
                )));
            }
            let estimate = rows
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::DecodeFailure(format!("channel of user {u} is singular")))?;
            if estimate.iter().any(|v| !v.is_finite()) {
                return Err(Error::DecodeFailure(format!(
                    "channel of user {u} is numerically singular"
                )));
            }
            residual = residual.max((&estimate - sent).amax());
            decoded[u].push(estimate);
        }
    }
    Ok(DecodeReport { decoded, residual })
}

/// Decode one random transmission: channel gains uniform in `[0.05, 1)`,
/// symbol entries uniform in `[-1, 1)`, all drawn from `seed`.
pub fn random_decoding_trial(
    l: usize,
    k: usize,
    noise_std: f64,
    seed: u64,
) -> Result<DecodeReport> {
    let plan = build_supersymbol(l, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = (0..k)
        .map(|u| {
            ChannelMatrix::from_gains(
                u,
                DMatrix::from_fn(l, l, |_, _| rng.random_range(0.05..1.0)),
                1.0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let symbols: Vec<Vec<DVector<f64>>> = (0..k)
        .map(|_| {
            (0..plan.symbols_per_user())
                .map(|_| DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    verify_decoding(&plan, &channels, &symbols, noise_std, rng.random())
}

/// Post-subtraction noise covariance `diag(K I_{L-1}, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance(pub DMatrix<f64>);

impl NoiseCovariance {
    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }
}

pub fn noise_covariance(l: usize, k: usize) -> Result<NoiseCovariance> {
    check_dims(l, k)?;
    let mut diag = DVector::from_element(l, k as f64);
    diag[l - 1] = 1.0;
    Ok(NoiseCovariance(DMatrix::from_diagonal(&diag)))
}

fn check_rate_inputs(h: &ChannelMatrix, p_str: f64, l: usize, k: usize) -> Result<()> {
    check_dims(l, k)?;
    if h.dim() != l {
        return Err(invalid(format!(
            "channel is {0}x{0}, expected {l}x{l}",
            h.dim()
        )));
    }
    if !(p_str.is_finite() && p_str >= 0.0) {
        return Err(invalid(format!(
            "stream power must be non-negative, got {p_str}"
        )));
    }
    Ok(())
}

/// `1/(L+K-1) log2 det(I + P_str/sigma^2 H H^T R_z^-1)` in bits/s/Hz.
pub fn user_rate(h: &ChannelMatrix, p_str: f64, l: usize, k: usize) -> Result<f64> {
    check_rate_inputs(h, p_str, l, k)?;
    let rank = h.rank();
    if rank < l {
        return Err(Error::DegenerateGeometry {
            user: h.user,
            rank,
            expected: l,
        });
    }
    // det(I + c H H^T R^-1) = det(I + c R^-1/2 H H^T R^-1/2), symmetric PD
    let inv_sqrt = noise_covariance(l, k)?.diagonal().map(|d| d.sqrt().recip());
    let scaled = DMatrix::from_fn(l, l, |i, j| h.gains[(i, j)] * inv_sqrt[i]);
    let snr = p_str / h.noise_var;
    let gram = DMatrix::identity(l, l) + (&scaled * scaled.transpose()) * snr;
    let chol = gram
        .cholesky()
        .ok_or_else(|| invalid("rate matrix is not positive definite"))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(log_det / std::f64::consts::LN_2 / (l + k - 1) as f64)
}

/// Per-AP rate `1/(L+K-1) log2(1 + P_str g_l / (K sigma^2))`, where `g_l`
/// is the squared gain of AP `ap` through its best-aligned preset mode.
pub fn per_link_rate(h: &ChannelMatrix, p_str: f64, ap: usize, l: usize, k: usize) -> Result<f64> {
    check_rate_inputs(h, p_str, l, k)?;
    if ap >= l {
        return Err(Error::Index { index: ap, len: l });
    }
    let g = h.gains.column(ap).max();
    Ok(link_rate(p_str * g * g / (k as f64 * h.noise_var), l, k))
}

fn link_rate(effective_snr: f64, l: usize, k: usize) -> f64 {
    effective_snr.ln_1p() / std::f64::consts::LN_2 / (l + k - 1) as f64
}

/// `per_link_rate` for every AP.
pub fn link_rates(h: &ChannelMatrix, p_str: f64, k: usize) -> Result<Vec<f64>> {
    let l = h.dim();
    check_rate_inputs(h, p_str, l, k)?;
    Ok(h.best_mode_gains()
        .into_iter()
        .map(|g| link_rate(p_str * g * g / (k as f64 * h.noise_var), l, k))
        .collect())
}
