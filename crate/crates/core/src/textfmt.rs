//! Text encoding of floats for logs and checkpoints.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which is enough for any `f64` to survive a write/read cycle bit-exactly.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

pub fn f64_17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn check_finite<'a>(what: &str, xs: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if xs.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains a non-finite value")))
    }
}

/// `[a,b,c]` as a JSON array.
pub struct Floats<'a>(pub &'a [f64]);

impl fmt::Display for Floats<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('[')?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_char(',')?;
            }
            write!(f, "{x:.16e}")?;
        }
        f.write_char(']')
    }
}

/// Nested JSON array of rows.
pub struct Rows<'a, T>(pub &'a [T]);

impl<T: AsRef<[f64]>> fmt::Display for Rows<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('[')?;
        for (i, row) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_char(',')?;
            }
            write!(f, "{}", Floats(row.as_ref()))?;
        }
        f.write_char(']')
    }
}
