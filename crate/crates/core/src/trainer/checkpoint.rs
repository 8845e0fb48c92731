//! Binary checkpoints: magic, a JSON header, then little-endian `f64`
//! arrays for the learner and auxiliary parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::model::{AuxParams, LearnerParams};
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"CTRNLICK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub theta: LearnerParams,
    pub phi: AuxParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dim: usize,
    hidden1: usize,
    hidden2: usize,
    theta_len: usize,
    phi_len: usize,
    seed: u64,
    config: TrainConfig,
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        version: VERSION,
        dim: ckpt.theta.dim,
        hidden1: ckpt.phi.h1,
        hidden2: ckpt.phi.h2,
        theta_len: ckpt.theta.len(),
        phi_len: ckpt.phi.len(),
        seed: ckpt.config.seed,
        config: TrainConfig {
            dynamics_path: None,
            ..ckpt.config.clone()
        },
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    write_f64s(&mut w, &ckpt.theta.values).map_err(io)?;
    write_f64s(&mut w, &ckpt.phi.values).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(bad("implausible header length"));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| Error::json(path, e))?;
    if header.version != VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let theta_expected = LearnerParams::zeros(0).len() + header.dim * 2;
    let phi_expected = AuxParams::layout_for(header.dim, header.hidden1, header.hidden2).len;
    if header.theta_len != theta_expected || header.phi_len != phi_expected {
        return Err(bad("parameter lengths disagree with the header dimensions"));
    }
    let theta = read_f64s(&mut r, header.theta_len).map_err(|_| bad("truncated learner parameters"))?;
    let phi = read_f64s(&mut r, header.phi_len).map_err(|_| bad("truncated auxiliary parameters"))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok(Checkpoint {
        config: header.config,
        theta: LearnerParams {
            dim: header.dim,
            values: theta,
        },
        phi: AuxParams {
            dim: header.dim,
            h1: header.hidden1,
            h2: header.hidden2,
            values: phi,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let dim = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = AuxParams::init(dim, 4, 3, &mut rng);
        let mut theta = LearnerParams::zeros(dim);
        theta.values[3] = -1.0 / 3.0;
        theta.values[7] = f64::MIN_POSITIVE;
        let ckpt = Checkpoint {
            config: TrainConfig {
                dim,
                hidden1: 4,
                hidden2: 3,
                seed: 5,
                ..TrainConfig::default()
            },
            theta,
            phi,
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        write_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ckpt);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"garbage!garbage!").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
