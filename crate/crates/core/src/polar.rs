//! Conventional baseline: BPSK with a CRC-aided polar code and
//! successive-cancellation list decoding.

use crate::error::{Error, Result};
use crate::evaluate::LinkSystem;
use crate::matrix::Matrix;
use crate::rng::SplitRng;

/// 5G NR universal reliability sequence restricted to N=32: channel indices
/// in ascending reliability order (worst first).
const RELIABILITY_32: [usize; 32] = [
    0, 1, 2, 4, 8, 16, 3, 5, 9, 6, 17, 10, 18, 12, 20, 24, 7, 11, 19, 13, 14, 21, 26, 25, 22, 28,
    15, 23, 27, 29, 30, 31,
];

/// CRC-6 generator x^6 + x^5 + 1, MSB first.
const CRC6_POLY: [u8; 7] = [1, 1, 0, 0, 0, 0, 1];

/// How the frozen set is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Construction {
    /// 5G universal reliability sequence (N = 32 only here).
    Nr5g,
    /// Bhattacharyya-parameter recursion at a design SNR.
    Bhattacharyya { design_snr_db: f64 },
}

#[derive(Clone, Debug)]
pub struct PolarConfig {
    pub n: usize,
    pub k_info: usize,
    pub crc_len: usize,
    pub list_size: usize,
    /// frozen[i] = true for frozen channel i.
    pub frozen: Vec<bool>,
    /// Payload placement: payload bit j lives at u-position placement[j].
    /// Message bits first (least reliable information positions), CRC bits
    /// last (the most reliable tail).
    placement: Vec<usize>,
}

impl PolarConfig {
    pub fn payload_len(&self) -> usize {
        self.k_info + self.crc_len
    }

    pub fn placement(&self) -> &[usize] {
        &self.placement
    }
}

/// Ascending-reliability channel order for the given construction.
fn reliability_order(n: usize, construction: Construction) -> Result<Vec<usize>> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidPolarConfig(format!(
            "code length {n} must be a power of two >= 2"
        )));
    }
    match construction {
        Construction::Nr5g => {
            if n != 32 {
                return Err(Error::InvalidPolarConfig(format!(
                    "the 5G reliability table here covers N=32 only (got {n}); \
                     use the Bhattacharyya construction for other lengths"
                )));
            }
            Ok(RELIABILITY_32.to_vec())
        }
        Construction::Bhattacharyya { design_snr_db } => {
            let gamma = 10f64.powf(design_snr_db / 10.0);
            let mut z = vec![(-gamma).exp()];
            while z.len() < n {
                let mut next = Vec::with_capacity(z.len() * 2);
                for &zi in &z {
                    next.push((2.0 * zi - zi * zi).min(1.0));
                    next.push(zi * zi);
                }
                z = next;
            }
            // Largest Bhattacharyya parameter = least reliable first.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
            Ok(order)
        }
    }
}

/// Builds the code: the N - K_info - crc_len least reliable channels are
/// frozen; message and CRC bits fill the information set in ascending
/// reliability, CRC on the most reliable tail.
pub fn construct(
    n: usize,
    k_info: usize,
    crc_len: usize,
    list_size: usize,
    construction: Construction,
) -> Result<PolarConfig> {
    if k_info + crc_len > n {
        return Err(Error::InvalidPolarConfig(format!(
            "payload {k_info}+{crc_len} exceeds code length {n}"
        )));
    }
    if list_size == 0 {
        return Err(Error::InvalidPolarConfig("list size must be positive".into()));
    }
    let order = reliability_order(n, construction)?;
    let payload = k_info + crc_len;
    let mut frozen = vec![true; n];
    for &pos in order.iter().rev().take(payload) {
        frozen[pos] = false;
    }
    // Standard attachment: payload fills the information set in ascending
    // channel index, which puts the CRC on the high-index (most reliable)
    // tail where list pruning can use it.
    let placement: Vec<usize> = (0..n).filter(|&pos| !frozen[pos]).collect();
    Ok(PolarConfig {
        n,
        k_info,
        crc_len,
        list_size,
        frozen,
        placement,
    })
}

fn crc_remainder(bits: &[u8], crc_len: usize) -> Vec<u8> {
    assert_eq!(crc_len, 6, "only CRC-6 is configured");
    let mut buf: Vec<u8> = bits.iter().copied().chain(std::iter::repeat(0).take(6)).collect();
    for i in 0..bits.len() {
        if buf[i] == 1 {
            for (j, &p) in CRC6_POLY.iter().enumerate() {
                buf[i + j] ^= p;
            }
        }
    }
    buf[bits.len()..].to_vec()
}

/// Appends the systematic CRC remainder.
pub fn crc_attach(bits: &[u8], crc_len: usize) -> Vec<u8> {
    let mut out = bits.to_vec();
    out.extend(crc_remainder(bits, crc_len));
    out
}

/// True iff the word (message || CRC) is consistent.
pub fn crc_check(word: &[u8], crc_len: usize) -> bool {
    let (msg, crc) = word.split_at(word.len() - crc_len);
    crc_remainder(msg, crc_len) == crc
}

/// In-place polar transform x = u G_N over GF(2), G_N the Kronecker power of
/// [[1,0],[1,1]]; O(N log N) butterfly.
pub fn polar_transform_in_place(bits: &mut [u8]) {
    let n = bits.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        let mut block = 0;
        while block < n {
            for j in block..block + h {
                bits[j] ^= bits[j + h];
            }
            block += 2 * h;
        }
        h *= 2;
    }
}

/// Encodes an N-vector with frozen positions already zeroed.
pub fn polar_encode(u: &[u8]) -> Vec<u8> {
    let mut x = u.to_vec();
    polar_transform_in_place(&mut x);
    x
}

/// BPSK demodulation to LLRs under the mapping bit 0 -> +1:
/// llr = 2 y / sigma^2 (positive favors bit 0).
pub fn bpsk_llr(y: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative noise deviation {sigma}"
        )));
    }
    if sigma == 0.0 {
        // Noiseless limit: saturate instead of dividing by zero.
        return Ok(y.iter().map(|&v| 2e12 * v).collect());
    }
    let scale = 2.0 / (sigma * sigma);
    Ok(y.iter().map(|&v| scale * v).collect())
}

#[inline]
fn f_minsum(a: f64, b: f64) -> f64 {
    a.signum() * b.signum() * a.abs().min(b.abs())
}

/// LLR of leaf `phi` of the subtree given its channel llrs and the already
/// decided subtree inputs. `llr_arena`/`bit_arena` are scratch of length
/// >= n - 1 each.
fn leaf_llr(
    llrs: &[f64],
    decided: &[u8],
    phi: usize,
    llr_arena: &mut [f64],
    bit_arena: &mut [u8],
) -> f64 {
    let n = llrs.len();
    if n == 1 {
        return llrs[0];
    }
    let half = n / 2;
    let (buf, llr_rest) = llr_arena.split_at_mut(half);
    if phi < half {
        for i in 0..half {
            buf[i] = f_minsum(llrs[i], llrs[i + half]);
        }
        leaf_llr(buf, decided, phi, llr_rest, bit_arena)
    } else {
        let (enc, bit_rest) = bit_arena.split_at_mut(half);
        enc.copy_from_slice(&decided[..half]);
        polar_transform_in_place(enc);
        for i in 0..half {
            buf[i] = llrs[i + half] + (1.0 - 2.0 * enc[i] as f64) * llrs[i];
        }
        leaf_llr(buf, &decided[half..], phi - half, llr_rest, bit_rest)
    }
}

#[derive(Clone)]
struct Path {
    u: Vec<u8>,
    metric: f64,
}

/// Successive-cancellation list decoder in the LLR domain with the
/// hardware-friendly path metric (penalty |llr| whenever the decision
/// contradicts the channel). Ties break on lower path index.
///
/// Returns the message bits of the best CRC-passing path, or of the best
/// path overall with `crc_ok = false` when none passes.
pub fn scl_decode(llrs: &[f64], cfg: &PolarConfig) -> Result<(Vec<u8>, bool)> {
    let (bits, ok, _) = scl_decode_with_metric(llrs, cfg)?;
    Ok((bits, ok))
}

/// [`scl_decode`] that also reports the selected path's metric.
pub fn scl_decode_with_metric(llrs: &[f64], cfg: &PolarConfig) -> Result<(Vec<u8>, bool, f64)> {
    if llrs.len() != cfg.n {
        return Err(Error::DimensionMismatch {
            expected: cfg.n,
            got: llrs.len(),
            context: "scl llr block",
        });
    }
    if !llrs.iter().all(|l| l.is_finite()) {
        return Err(Error::InvalidArgument("non-finite llr".into()));
    }
    let mut llr_arena = vec![0.0f64; cfg.n];
    let mut bit_arena = vec![0u8; cfg.n];
    let mut paths = vec![Path {
        u: Vec::with_capacity(cfg.n),
        metric: 0.0,
    }];

    for phi in 0..cfg.n {
        if cfg.frozen[phi] {
            for path in &mut paths {
                let llr = leaf_llr(llrs, &path.u, phi, &mut llr_arena, &mut bit_arena);
                if llr < 0.0 {
                    path.metric += -llr;
                }
                path.u.push(0);
            }
        } else {
            // Fork every path on the information bit and keep the best L.
            struct Candidate {
                parent: usize,
                bit: u8,
                metric: f64,
            }
            let mut candidates = Vec::with_capacity(paths.len() * 2);
            for (idx, path) in paths.iter().enumerate() {
                let llr = leaf_llr(llrs, &path.u, phi, &mut llr_arena, &mut bit_arena);
                let pen = llr.abs();
                let (m0, m1) = if llr >= 0.0 {
                    (path.metric, path.metric + pen)
                } else {
                    (path.metric + pen, path.metric)
                };
                candidates.push(Candidate {
                    parent: idx,
                    bit: 0,
                    metric: m0,
                });
                candidates.push(Candidate {
                    parent: idx,
                    bit: 1,
                    metric: m1,
                });
            }
            candidates.sort_by(|a, b| {
                a.metric
                    .partial_cmp(&b.metric)
                    .unwrap()
                    .then(a.parent.cmp(&b.parent))
                    .then(a.bit.cmp(&b.bit))
            });
            candidates.truncate(cfg.list_size);
            let mut next = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let mut u = paths[c.parent].u.clone();
                u.push(c.bit);
                next.push(Path {
                    u,
                    metric: c.metric,
                });
            }
            paths = next;
        }
    }

    // Paths are already metric-sorted after the last fork, but frozen-bit
    // penalties may have reordered them.
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| {
        paths[a]
            .metric
            .partial_cmp(&paths[b].metric)
            .unwrap()
            .then(a.cmp(&b))
    });

    let extract = |path: &Path| -> Vec<u8> {
        cfg.placement.iter().map(|&pos| path.u[pos]).collect()
    };
    for &idx in &order {
        let payload = extract(&paths[idx]);
        if crc_check(&payload, cfg.crc_len) {
            return Ok((
                payload[..cfg.k_info].to_vec(),
                true,
                paths[idx].metric,
            ));
        }
    }
    let best = &paths[order[0]];
    let payload = extract(best);
    Ok((payload[..cfg.k_info].to_vec(), false, best.metric))
}

/// The complete baseline link: CRC attach, polar encode, BPSK, AWGN, SCL.
#[derive(Clone, Debug)]
pub struct PolarSystem {
    pub cfg: PolarConfig,
}

impl PolarSystem {
    pub fn new(cfg: PolarConfig) -> Self {
        Self { cfg }
    }

    /// Encodes one message to its +/-1 BPSK codeword.
    pub fn modulated_codeword(&self, msg: &[u8]) -> Vec<f64> {
        let payload = crc_attach(msg, self.cfg.crc_len);
        let mut u = vec![0u8; self.cfg.n];
        for (j, &pos) in self.cfg.placement.iter().enumerate() {
            u[pos] = payload[j];
        }
        polar_transform_in_place(&mut u);
        u.iter().map(|&b| 1.0 - 2.0 * b as f64).collect()
    }

    pub fn decode(&self, llrs: &[f64]) -> Result<(Vec<u8>, bool)> {
        scl_decode(llrs, &self.cfg)
    }
}

impl LinkSystem for PolarSystem {
    fn info_bits(&self) -> usize {
        self.cfg.k_info
    }

    fn transmit(&mut self, bits: &Matrix, sigma: f64, rng: &mut SplitRng) -> Result<Matrix> {
        let mut out = Matrix::zeros(bits.rows(), bits.cols());
        let mut noise = vec![0.0; self.cfg.n];
        for r in 0..bits.rows() {
            let msg: Vec<u8> = bits.row(r).iter().map(|&b| (b > 0.5) as u8).collect();
            let mut x = self.modulated_codeword(&msg);
            rng.fill_gaussian(&mut noise, 1.0);
            for (xv, z) in x.iter_mut().zip(&noise) {
                *xv += sigma * z;
            }
            let llrs = bpsk_llr(&x, sigma)?;
            let (decoded, _) = self.decode(&llrs)?;
            for (c, &b) in decoded.iter().enumerate() {
                out.set(r, c, b as f64);
            }
        }
        Ok(out)
    }

    fn preferred_batch(&self) -> usize {
        512
    }
}
