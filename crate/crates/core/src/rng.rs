//! Seeded random streams.
//!
//! Every stream is a ChaCha20 generator whose 256-bit key is
//! `SHA-256("landscape-lab/stream/v1" ‖ master_seed (u64 LE) ‖ len(tag) (u64 LE) ‖ tag ‖ index (u64 LE))`.
//! Gaussian deviates use the Box–Muller transform on two uniforms
//! `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`, emitting `r·cos θ` and then `r·sin θ`
//! where `r = sqrt(-2 ln u1)` and `θ = 2π u2`. Uniforms are the generator's
//! 53-bit `f64` draws. Streams are therefore bitwise reproducible within this
//! implementation regardless of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"landscape-lab/stream/v1";

/// Derives the 32-byte key of the stream `(master, tag, index)`.
pub fn stream_key(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN_TAG);
    h.update(master.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(digest.as_slice());
    key
}

/// Derives a child seed, used when a trial needs its own `u64` seed
/// (e.g. to construct an ensemble that records the seed it came from).
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let key = stream_key(master, tag, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(master: u64, tag: &str, index: u64) -> Self {
        Self {
            rng: ChaCha20Rng::from_seed(stream_key(master, tag, index)),
            spare: None,
        }
    }

    /// The default stream of a bare seed (empty tag, index 0).
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, "", 0)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `rows × cols` matrix of i.i.d. `N(0, std²)` entries, filled row by row.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| std * self.standard_normal())
            .collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.standard_normal())
    }

    /// Uniform point on the unit sphere in `R^n`.
    pub fn unit_vector(&mut self, n: usize) -> DVector<f64> {
        loop {
            let v = self.normal_vector(n);
            let norm = v.norm();
            if norm > 1e-12 {
                return v / norm;
            }
        }
    }

    /// Uniform point in the Euclidean ball of the given radius.
    pub fn in_ball(&mut self, n: usize, radius: f64) -> DVector<f64> {
        let dir = self.unit_vector(n);
        let r = radius * self.uniform().powf(1.0 / n as f64);
        dir * r
    }

    /// Random orthogonal `k×k` matrix (Haar measure via QR with sign fix).
    pub fn orthogonal(&mut self, k: usize) -> DMatrix<f64> {
        self.orthonormal_columns(k, k)
    }

    /// `n×k` matrix with orthonormal columns drawn from the Haar measure.
    pub fn orthonormal_columns(&mut self, n: usize, k: usize) -> DMatrix<f64> {
        assert!(k <= n, "cannot draw {k} orthonormal columns in R^{n}");
        let g = self.normal_matrix(n, k, 1.0);
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q
    }
}
