//! Versioned plain-text model files.
//!
//! ```text
//! polk-model v1
//! kernel gaussian <bandwidth_sq>        (or: kernel polynomial <offset> <degree>)
//! dims <p> <M> <C>
//! lambda <lambda>
//! loss <multi_hinge|multi_logistic|binary_logistic>
//! <M lines of p values: dictionary atoms>
//! <M lines of C values: weights>
//! ```
//!
//! Reals are written with 17 significant digits, so a save/load/save cycle
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{PolkError, Result};
use crate::kernel::{Dictionary, KernelExpansion, KernelSpec};
use crate::loss::LossKind;

const MAGIC: &str = "polk-model v1";

/// A trained function together with the loss and regularizer it was fit with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: KernelExpansion,
    pub loss: LossKind,
    pub lambda: f64,
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

impl SavedModel {
    pub fn to_text(&self) -> String {
        let f = &self.model;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        match *f.kernel() {
            KernelSpec::Gaussian { bandwidth_sq } => {
                writeln!(out, "kernel gaussian {}", real(bandwidth_sq)).unwrap()
            }
            KernelSpec::Polynomial { offset, degree } => {
                writeln!(out, "kernel polynomial {} {degree}", real(offset)).unwrap()
            }
        }
        writeln!(out, "dims {} {} {}", f.dim(), f.order(), f.num_classes()).unwrap();
        writeln!(out, "lambda {}", real(self.lambda)).unwrap();
        writeln!(out, "loss {}", self.loss.name()).unwrap();
        for atom in f.dict().atoms().take(f.order()) {
            let row: Vec<String> = atom.iter().map(|&v| real(v)).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        for n in 0..f.order() {
            let row: Vec<String> = f.weights().row(n).iter().map(|&v| real(v)).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| PolkError::parse(path, 0, format!("missing {what}")))
        };
        let err = |line: usize, msg: String| PolkError::parse(path, line, msg);

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(n, format!("expected '{MAGIC}', found '{magic}'")));
        }

        let (n, kline) = next("kernel line")?;
        let toks: Vec<&str> = kline.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| err(n, format!("'{s}' is not a number")))
        };
        let kernel = match toks.as_slice() {
            ["kernel", "gaussian", bw] => KernelSpec::gaussian(num(bw)?),
            ["kernel", "polynomial", b, c] => {
                let deg = c.parse().map_err(|_| err(n, format!("bad degree '{c}'")))?;
                KernelSpec::polynomial(num(b)?, deg)
            }
            _ => return Err(err(n, format!("bad kernel line '{kline}'"))),
        }
        .map_err(|e| err(n, e.to_string()))?;

        let (n, dline) = next("dims line")?;
        let dims: Vec<usize> = match dline.strip_prefix("dims ") {
            Some(rest) => rest
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| err(n, format!("bad dimension '{s}'"))))
                .collect::<Result<_>>()?,
            None => return Err(err(n, format!("bad dims line '{dline}'"))),
        };
        let [p, m, c] = dims[..] else {
            return Err(err(n, "dims needs exactly p M C".into()));
        };

        let (n, lline) = next("lambda line")?;
        let lambda = match lline.strip_prefix("lambda ") {
            Some(v) => v.trim().parse().map_err(|_| err(n, format!("bad lambda '{v}'")))?,
            None => return Err(err(n, format!("bad lambda line '{lline}'"))),
        };

        let (n, loss_line) = next("loss line")?;
        let loss = match loss_line.strip_prefix("loss ") {
            Some(name) => LossKind::from_name(name.trim(), c).map_err(|e| err(n, e.to_string()))?,
            None => return Err(err(n, format!("bad loss line '{loss_line}'"))),
        };
        if loss.num_classes() != c {
            return Err(err(n, format!("loss {} does not match C = {c}", loss.name())));
        }

        let mut read_rows = |rows: usize, width: usize, what: &str| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(rows * width);
            for _ in 0..rows {
                let (n, line) = next(what)?;
                let before = vals.len();
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| err(n, format!("'{tok}' is not a number")))?;
                    vals.push(v);
                }
                if vals.len() - before != width {
                    return Err(err(n, format!("{what} row needs {width} values")));
                }
            }
            Ok(vals)
        };
        let atoms = read_rows(m, p, "dictionary")?;
        let weights = read_rows(m, c, "weight")?;

        let dict = Dictionary::from_flat(p, atoms).map_err(|e| err(0, e.to_string()))?;
        let weights = DMatrix::from_row_slice(m, c, &weights);
        let model = KernelExpansion::new(kernel, dict, weights).map_err(|e| err(0, e.to_string()))?;
        Ok(SavedModel { model, loss, lambda })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| PolkError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PolkError::io(path, e))?;
        Self::from_text(path, &text)
    }
}
