//! Plain-text code definition files.
//!
//! Grammar (line oriented, `#` starts a comment, blank lines separate
//! constituent blocks):
//!
//! ```text
//! n k N                  header: block length, overall dimension,
//!                        number of constituents
//! 0/1 rows of length n   parity check matrix of constituent 1
//! perm: i0 i1 ... i(n-1) optional column permutation for that constituent
//!                        (overall position feeding constituent position j)
//! <blank line>
//! ...                    further constituents; the keyword `free` stands
//!                        for an unconstrained constituent (no parity rows)
//! punct: b0 ... b(n-1)   optional global puncture mask, 1 = transmitted
//! ```
//!
//! The declared dimension `k` is validated against the rank of the
//! stacked permuted parity matrices.

use crate::code::{dual_couple, identity_permutation, CoupledCode, LinearCode};
use crate::gf2::BinaryMatrix;
use crate::{Error, Result};

pub fn parse(text: &str) -> Result<CoupledCode> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_string());
    let header = lines
        .by_ref()
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Parse("empty code file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse("header must be `n k N`".into()));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| Error::Parse("bad n in header".into()))?;
    let k: usize = fields[1]
        .parse()
        .map_err(|_| Error::Parse("bad k in header".into()))?;
    let count: usize = fields[2]
        .parse()
        .map_err(|_| Error::Parse("bad N in header".into()))?;
    if count == 0 {
        return Err(Error::Parse("at least one constituent required".into()));
    }

    let mut codes: Vec<LinearCode> = Vec::new();
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut punct: Option<Vec<u8>> = None;
    let mut rows: Vec<String> = Vec::new();
    let mut perm_for_block: Option<Vec<usize>> = None;

    let close_block = |rows: &mut Vec<String>,
                           perm: &mut Option<Vec<usize>>,
                           codes: &mut Vec<LinearCode>,
                           perms: &mut Vec<Vec<usize>>|
     -> Result<()> {
        if rows.is_empty() && perm.is_none() {
            return Ok(());
        }
        let mut h = BinaryMatrix::zeros(rows.len(), n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "parity row `{row}` has length {} != n = {n}",
                    row.len()
                )));
            }
            for (c, ch) in row.bytes().enumerate() {
                match ch {
                    b'0' => {}
                    b'1' => h.set(r, c, true),
                    _ => return Err(Error::Parse(format!("bad character in row `{row}`"))),
                }
            }
        }
        codes.push(LinearCode::from_parity(h));
        perms.push(perm.take().unwrap_or_else(|| identity_permutation(n)));
        rows.clear();
        Ok(())
    };

    for line in lines {
        if line.is_empty() {
            close_block(&mut rows, &mut perm_for_block, &mut codes, &mut perms)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("perm:") {
            let idx: Vec<usize> = rest
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse("bad perm index".into())))
                .collect::<Result<_>>()?;
            if idx.len() != n {
                return Err(Error::Parse("perm must list n indices".into()));
            }
            perm_for_block = Some(idx);
            close_block(&mut rows, &mut perm_for_block, &mut codes, &mut perms)?;
        } else if let Some(rest) = line.strip_prefix("punct:") {
            let bits: Vec<u8> = rest
                .split_whitespace()
                .map(|t| match t {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    _ => Err(Error::Parse("puncture mask entries must be 0/1".into())),
                })
                .collect::<Result<_>>()?;
            if bits.len() != n {
                return Err(Error::Parse("puncture mask must list n bits".into()));
            }
            punct = Some(bits);
        } else if line == "free" {
            if !rows.is_empty() {
                return Err(Error::Parse(
                    "`free` cannot follow parity rows in the same block".into(),
                ));
            }
            codes.push(LinearCode::unconstrained(n));
            perms.push(identity_permutation(n));
        } else if line.chars().all(|c| c == '0' || c == '1') {
            rows.push(line);
        } else {
            return Err(Error::Parse(format!("unrecognized line `{line}`")));
        }
    }
    close_block(&mut rows, &mut perm_for_block, &mut codes, &mut perms)?;

    if codes.len() != count {
        return Err(Error::Parse(format!(
            "header declares {count} constituents, found {}",
            codes.len()
        )));
    }
    let mut coupled = dual_couple(codes, perms)?;
    if let Some(mask) = punct {
        coupled.set_puncture_mask(mask)?;
    }
    let dim = coupled.dimension()?;
    if dim != k {
        return Err(Error::Parse(format!(
            "header declares k = {k}, stacked parity gives k = {dim}"
        )));
    }
    Ok(coupled)
}

pub fn write(code: &CoupledCode) -> Result<String> {
    let n = code.n();
    let k = code.dimension()?;
    let mut out = format!("{} {} {}\n", n, k, code.num_constituents());
    for l in 0..code.num_constituents() {
        let h = code.constituent(l).parity()?;
        if h.rows() == 0 {
            out.push_str("free\n");
        }
        for r in 0..h.rows() {
            for c in 0..n {
                out.push(if h.get(r, c) { '1' } else { '0' });
            }
            out.push('\n');
        }
        let perm = code.permutation(l);
        if perm != identity_permutation(n) {
            out.push_str("perm:");
            for p in perm {
                out.push_str(&format!(" {p}"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    if code.puncture_mask().iter().any(|&b| b == 0) {
        out.push_str("punct:");
        for &b in code.puncture_mask() {
            out.push_str(&format!(" {b}"));
        }
        out.push('\n');
    }
    Ok(out)
}
