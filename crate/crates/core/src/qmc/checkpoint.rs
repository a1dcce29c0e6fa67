use std::path::Path;

use rand::SeedableRng;

use super::{Mode, PathIntegralState};
use crate::error::{Error, Result};
use crate::SimRng;

const MAGIC: &[u8; 8] = b"EQMCCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 96;

/// Snapshot of a run between production sweeps: spins, RNG position and
/// sweep counter. Resuming from it reproduces the uninterrupted chain
/// bit-for-bit.
///
/// Binary layout (little-endian): magic, `u32` version, `u8` mode, 3 reserved
/// bytes, `u64` sites, `u64` slices, `u64` sweeps done, 32-byte RNG seed,
/// `u64` stream, `u128` word position, then one `i8` per spin.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: Mode,
    pub sweeps_done: u64,
    pub state: PathIntegralState,
    pub rng: SimRng,
}

fn mode_byte(m: Mode) -> u8 {
    match m {
        Mode::Standard => 0,
        Mode::Rejection => 1,
        Mode::Lc => 2,
    }
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> [u8; N] {
    let out: [u8; N] = bytes[*at..*at + N].try_into().expect("length checked");
    *at += N;
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.state.spins().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(mode_byte(self.mode));
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(self.state.sites() as u64).to_le_bytes());
        out.extend_from_slice(&(self.state.slices() as u64).to_le_bytes());
        out.extend_from_slice(&self.sweeps_done.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        out.extend(self.state.spins().iter().map(|&s| s as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut at = 8;
        let version = u32::from_le_bytes(take(bytes, &mut at));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mode = match take::<1>(bytes, &mut at)[0] {
            0 => Mode::Standard,
            1 => Mode::Rejection,
            2 => Mode::Lc,
            b => return Err(Error::Checkpoint(format!("unknown mode byte {b}"))),
        };
        at += 3;
        let sites = u64::from_le_bytes(take(bytes, &mut at)) as usize;
        let slices = u64::from_le_bytes(take(bytes, &mut at)) as usize;
        let sweeps_done = u64::from_le_bytes(take(bytes, &mut at));
        let seed: [u8; 32] = take(bytes, &mut at);
        let stream = u64::from_le_bytes(take(bytes, &mut at));
        let word_pos = u128::from_le_bytes(take(bytes, &mut at));
        let expected = sites
            .checked_mul(slices)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Checkpoint("lattice size overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let spins = bytes[HEADER_LEN..].iter().map(|&b| b as i8).collect();
        let state = PathIntegralState::from_spins(sites, slices, spins)
            .map_err(|e| Error::Checkpoint(format!("corrupt spin data: {e}")))?;
        let mut rng = SimRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { mode, sweeps_done, state, rng })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
