//! Binary checkpoint of a trained value network.
//!
//! Layout: an 8-byte magic, a little-endian `u32` header length, a UTF-8
//! JSON header, then three arrays (`W` row-major N×n, `b`, `β`), each a
//! little-endian `u64` count followed by `f64` values in little-endian order.
//! Saving a loaded checkpoint reproduces the original bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use xtfc_hjb::problem::ProblemSpec;
use xtfc_hjb::{Activation, ElmParams, PolicyMode, TrainConfig, ValueNetwork};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"XTFCHJB\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub problem: ProblemSpec,
    pub state_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub weight_scale: f64,
    pub activation: Activation,
    pub policy_mode: PolicyMode,
    pub train: TrainConfig,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub network: ValueNetwork,
}

impl Checkpoint {
    pub fn new(
        problem: ProblemSpec,
        network: ValueNetwork,
        policy_mode: PolicyMode,
        train: TrainConfig,
        final_loss: f64,
    ) -> Self {
        let elm = network.elm();
        let header = Header {
            format_version: FORMAT_VERSION,
            problem,
            state_dim: elm.state_dim(),
            hidden: elm.hidden_count(),
            seed: elm.seed(),
            weight_scale: elm.weight_scale(),
            activation: elm.activation(),
            policy_mode,
            train,
            final_loss,
        };
        Self { header, network }
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let elm = self.network.elm();
        let w = elm.weights();
        let row_major: Vec<f64> = (0..w.nrows())
            .flat_map(|i| (0..w.ncols()).map(move |j| w[(i, j)]))
            .collect();
        let mut out = Vec::with_capacity(64 + header.len() + 8 * (row_major.len() + 2 * elm.hidden_count()));
        out.extend_from_slice(MAGIC);
        let len = u32::try_from(header.len()).map_err(|_| CliError::Usage("checkpoint header too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for block in [&row_major[..], elm.biases().as_slice(), self.network.beta().as_slice()] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let bad = |m: &str| CliError::checkpoint(path, m);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = r.u32().ok_or_else(|| bad("truncated header length"))? as usize;
        let raw = r.take(len).ok_or_else(|| bad("truncated header"))?;
        let version: serde_json::Value = serde_json::from_slice(raw).map_err(|e| bad(&format!("header: {e}")))?;
        match version.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(bad(&format!("unsupported format version {v} (expected {FORMAT_VERSION})"))),
            None => return Err(bad("header has no format_version")),
        }
        let header: Header = serde_json::from_slice(raw).map_err(|e| bad(&format!("header: {e}")))?;
        let (n, hidden) = (header.state_dim, header.hidden);
        let w = r.block(hidden * n).map_err(|m| bad(&format!("weights: {m}")))?;
        let b = r.block(hidden).map_err(|m| bad(&format!("biases: {m}")))?;
        let beta = r.block(hidden).map_err(|m| bad(&format!("output weights: {m}")))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after output weights"));
        }
        let built = header.problem.build::<f64>()?;
        if built.state_dim() != n {
            return Err(bad(&format!(
                "network input dimension {n} does not match problem state dimension {}",
                built.state_dim()
            )));
        }
        header.policy_mode.validate(&built)?;
        let elm = ElmParams::from_parts(
            DMatrix::from_row_slice(hidden, n, &w),
            DVector::from_vec(b),
            header.activation,
            header.seed,
            header.weight_scale,
        )?;
        let network = ValueNetwork::new(elm, DVector::from_vec(beta))?;
        Ok(Self { header, network })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::checkpoint(path, e.to_string()))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(k)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn block(&mut self, expected: usize) -> Result<Vec<f64>, String> {
        let count = self.u64().ok_or("truncated length")?;
        if count != expected as u64 {
            return Err(format!("expected {expected} values, found {count}"));
        }
        let raw = self.take(expected * 8).ok_or("truncated values")?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}
