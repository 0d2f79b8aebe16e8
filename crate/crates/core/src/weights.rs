//! JSON weight files for policy and value networks.
//!
//! Policy format (`polattack-weights-v1`):
//! `{"format", "obs_dim", "act_dim", "activation": "tanh", "W1", "b1", "W2",
//! "b2", "Wmu", "bmu", "log_std"}` with matrices as row-major nested arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{Mlp, HIDDEN};
use crate::policy::{PolicyNet, ValueNet};
use crate::scalar::Scalar;

pub const POLICY_FORMAT: &str = "polattack-weights-v1";
pub const VALUE_FORMAT: &str = "polattack-value-weights-v1";
pub const ACTIVATION: &str = "tanh";

#[allow(non_snake_case)]
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    obs_dim: usize,
    act_dim: usize,
    activation: String,
    W1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    W2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    Wmu: Vec<Vec<f64>>,
    bmu: Vec<f64>,
    log_std: Vec<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Serialize, Deserialize)]
struct ValueFile {
    format: String,
    obs_dim: usize,
    activation: String,
    W1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    W2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    Wout: Vec<Vec<f64>>,
    bout: Vec<f64>,
}

fn to_rows<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    m.to_rows()
        .into_iter()
        .map(|r| r.into_iter().map(Scalar::as_f64).collect())
        .collect()
}

fn to_vec<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn field_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn matrix<T: Scalar>(field: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Matrix<T>> {
    if rows.len() != r {
        return Err(field_err(field, format!("expected {r} rows, found {}", rows.len())));
    }
    if let Some(bad) = rows.iter().position(|row| row.len() != c) {
        return Err(field_err(
            field,
            format!("row {bad}: expected {c} columns, found {}", rows[bad].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field_err(field, "non-finite entry"));
    }
    let cast: Vec<Vec<T>> = rows
        .iter()
        .map(|row| row.iter().map(|v| T::lit(*v)).collect())
        .collect();
    Matrix::from_rows(&cast).ok_or_else(|| field_err(field, "ragged rows"))
}

fn vector<T: Scalar>(field: &str, v: &[f64], n: usize) -> Result<Vec<T>> {
    if v.len() != n {
        return Err(field_err(field, format!("expected length {n}, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(field_err(field, "non-finite entry"));
    }
    Ok(v.iter().map(|x| T::lit(*x)).collect())
}

fn check_header(format: &str, expected: &str, activation: &str) -> Result<()> {
    if format != expected {
        return Err(field_err("format", format!("expected {expected:?}, found {format:?}")));
    }
    if activation != ACTIVATION {
        return Err(field_err(
            "activation",
            format!("only {ACTIVATION:?} is supported, found {activation:?}"),
        ));
    }
    Ok(())
}

pub fn policy_to_json<T: Scalar>(net: &PolicyNet<T>) -> Result<String> {
    let b = &net.body;
    let file = PolicyFile {
        format: POLICY_FORMAT.into(),
        obs_dim: net.obs_dim(),
        act_dim: net.act_dim(),
        activation: ACTIVATION.into(),
        W1: to_rows(&b.w1),
        b1: to_vec(&b.b1),
        W2: to_rows(&b.w2),
        b2: to_vec(&b.b2),
        Wmu: to_rows(&b.w_out),
        bmu: to_vec(&b.b_out),
        log_std: to_vec(&net.log_std),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn policy_from_json<T: Scalar>(text: &str) -> Result<PolicyNet<T>> {
    let f: PolicyFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    check_header(&f.format, POLICY_FORMAT, &f.activation)?;
    if f.obs_dim == 0 || f.act_dim == 0 {
        return Err(field_err("obs_dim", "dimensions must be positive"));
    }
    let body = Mlp {
        w1: matrix("W1", &f.W1, HIDDEN, f.obs_dim)?,
        b1: vector("b1", &f.b1, HIDDEN)?,
        w2: matrix("W2", &f.W2, HIDDEN, HIDDEN)?,
        b2: vector("b2", &f.b2, HIDDEN)?,
        w_out: matrix("Wmu", &f.Wmu, f.act_dim, HIDDEN)?,
        b_out: vector("bmu", &f.bmu, f.act_dim)?,
    };
    let log_std = vector("log_std", &f.log_std, f.act_dim)?;
    PolicyNet::new(body, log_std)
}

pub fn save_weights<T: Scalar>(net: &PolicyNet<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, policy_to_json(net)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<PolicyNet<T>> {
    policy_from_json(&fs::read_to_string(path)?)
}

pub fn save_value_weights<T: Scalar>(net: &ValueNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let b = &net.body;
    let file = ValueFile {
        format: VALUE_FORMAT.into(),
        obs_dim: net.obs_dim(),
        activation: ACTIVATION.into(),
        W1: to_rows(&b.w1),
        b1: to_vec(&b.b1),
        W2: to_rows(&b.w2),
        b2: to_vec(&b.b2),
        Wout: to_rows(&b.w_out),
        bout: to_vec(&b.b_out),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_value_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<ValueNet<T>> {
    let text = fs::read_to_string(path)?;
    let f: ValueFile = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    check_header(&f.format, VALUE_FORMAT, &f.activation)?;
    Ok(ValueNet {
        body: Mlp {
            w1: matrix("W1", &f.W1, HIDDEN, f.obs_dim)?,
            b1: vector("b1", &f.b1, HIDDEN)?,
            w2: matrix("W2", &f.W2, HIDDEN, HIDDEN)?,
            b2: vector("b2", &f.b2, HIDDEN)?,
            w_out: matrix("Wout", &f.Wout, 1, HIDDEN)?,
            b_out: vector("bout", &f.bout, 1)?,
        },
    })
}
