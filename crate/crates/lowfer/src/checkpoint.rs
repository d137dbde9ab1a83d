//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `LFER`, format version (`u32`), then a fixed header
//! (`n_entities`, `n_relations`, `entity_dim`, `relation_dim`, `rank` as
//! `u64`, feature flags as `u32`, batch-norm momentum and eps as `f64`),
//! then the tensors as raw `f64` runs in declared order: entity table,
//! relation table (`2 * n_relations` rows), factor_u, factor_v, and for each
//! batch norm (entity, then pooled) its gamma, beta, running mean, running
//! variance. Round-trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{BatchNorm, Hyperparams, ModelParams};

const MAGIC: &[u8; 4] = b"LFER";
const VERSION: u32 = 1;
const FLAG_POWER_L2: u32 = 1;
const FLAG_TANH: u32 = 1 << 1;

/// Writes a trained model (whose relation table must hold an even number of
/// rows: raw relations plus reciprocals) and the flags needed to score with
/// it. Dropout and smoothing settings are training-time concerns and are not
/// stored; load yields evaluation-ready hyperparameters.
pub fn save_checkpoint(path: &Path, params: &ModelParams, hyper: &Hyperparams) -> Result<()> {
    params.check_shapes(hyper);
    if params.relation.rows() % 2 != 0 {
        return Err(Error::Checkpoint {
            reason: format!(
                "relation table has {} rows; expected raw + reciprocal rows",
                params.relation.rows()
            ),
        });
    }
    if params.bn_entity.momentum != params.bn_pooled.momentum
        || params.bn_entity.eps != params.bn_pooled.eps
    {
        return Err(Error::Checkpoint {
            reason: "batch norms disagree on momentum/eps".into(),
        });
    }
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_owned(),
        source,
    };

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    for dim in [
        params.entity.rows() as u64,
        (params.relation.rows() / 2) as u64,
        hyper.entity_dim as u64,
        hyper.relation_dim as u64,
        hyper.rank as u64,
    ] {
        w.write_all(&dim.to_le_bytes()).map_err(io_err)?;
    }
    let mut flags = 0u32;
    if hyper.power_l2_normalize {
        flags |= FLAG_POWER_L2;
    }
    if hyper.tanh_output {
        flags |= FLAG_TANH;
    }
    w.write_all(&flags.to_le_bytes()).map_err(io_err)?;
    w.write_all(&params.bn_entity.momentum.to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&params.bn_entity.eps.to_le_bytes())
        .map_err(io_err)?;

    let mut write_run = |values: &[f64]| -> Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(|source| Error::Io {
                path: path.to_owned(),
                source,
            })?;
        }
        Ok(())
    };
    write_run(params.entity.data())?;
    write_run(params.relation.data())?;
    write_run(params.factor_u.data())?;
    write_run(params.factor_v.data())?;
    for bn in [&params.bn_entity, &params.bn_pooled] {
        write_run(&bn.gamma)?;
        write_run(&bn.beta)?;
        write_run(&bn.running_mean)?;
        write_run(&bn.running_var)?;
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes, reporting EOF as a truncation error.
fn read_bytes(r: &mut impl Read, path: &Path, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|source| {
        if source.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint {
                reason: "file is truncated".into(),
            }
        } else {
            Error::Io {
                path: path.to_owned(),
                source,
            }
        }
    })
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_bytes(r, path, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_bytes(r, path, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_bytes(r, path, &mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_run(r: &mut impl Read, path: &Path, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r, path)?);
    }
    Ok(out)
}

/// Reads a checkpoint back. Returns the parameters, evaluation-ready
/// hyperparameters (dropouts and smoothing zeroed), and the raw relation
/// count. Rejects wrong magic, unknown versions, truncated files, and
/// trailing bytes.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Hyperparams, usize)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_bytes(&mut r, path, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint {
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            reason: format!("unsupported version {version} (expected {VERSION})"),
        });
    }
    let n_entities = read_u64(&mut r, path)? as usize;
    let n_relations = read_u64(&mut r, path)? as usize;
    let entity_dim = read_u64(&mut r, path)? as usize;
    let relation_dim = read_u64(&mut r, path)? as usize;
    let rank = read_u64(&mut r, path)? as usize;
    let flags = read_u32(&mut r, path)?;
    if flags & !(FLAG_POWER_L2 | FLAG_TANH) != 0 {
        return Err(Error::Checkpoint {
            reason: format!("unknown flag bits 0x{flags:x}"),
        });
    }
    let momentum = read_f64(&mut r, path)?;
    let eps = read_f64(&mut r, path)?;

    if n_entities == 0 || n_relations == 0 || entity_dim == 0 || relation_dim == 0 || rank == 0 {
        return Err(Error::Checkpoint {
            reason: "header contains zero dimensions".into(),
        });
    }

    let fused = rank * entity_dim;
    let entity = Matrix::from_vec(
        n_entities,
        entity_dim,
        read_run(&mut r, path, n_entities * entity_dim)?,
    );
    let relation = Matrix::from_vec(
        2 * n_relations,
        relation_dim,
        read_run(&mut r, path, 2 * n_relations * relation_dim)?,
    );
    let factor_u = Matrix::from_vec(entity_dim, fused, read_run(&mut r, path, entity_dim * fused)?);
    let factor_v = Matrix::from_vec(
        relation_dim,
        fused,
        read_run(&mut r, path, relation_dim * fused)?,
    );
    let read_bn = |r: &mut BufReader<File>| -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: read_run(r, path, entity_dim)?,
            beta: read_run(r, path, entity_dim)?,
            running_mean: read_run(r, path, entity_dim)?,
            running_var: read_run(r, path, entity_dim)?,
            momentum,
            eps,
        })
    };
    let bn_entity = read_bn(&mut r)?;
    let bn_pooled = read_bn(&mut r)?;

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Checkpoint {
                reason: "trailing bytes after tensors".into(),
            })
        }
        Err(source) => {
            return Err(Error::Io {
                path: path.to_owned(),
                source,
            })
        }
    }

    let hyper = Hyperparams {
        power_l2_normalize: flags & FLAG_POWER_L2 != 0,
        tanh_output: flags & FLAG_TANH != 0,
        ..Hyperparams::bare(entity_dim, relation_dim, rank)
    };
    let params = ModelParams {
        entity,
        relation,
        factor_u,
        factor_v,
        bn_entity,
        bn_pooled,
    };
    params.check_shapes(&hyper);
    Ok((params, hyper, n_relations))
}
