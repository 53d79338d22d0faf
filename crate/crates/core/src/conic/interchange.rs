//! Plain-text sparse conic interchange format.
//!
//! ```text
//! CONIC 1
//! DIMS <n_vars> <n_eq> <n_cone_rows>
//! OBJCONST <c0>
//! C <col> <value>
//! A <row> <col> <value>
//! B <row> <value>
//! G <row> <col> <value>
//! H <row> <value>
//! CONE NONNEG <dim>
//! CONE SOC <dim>
//! VAR <col> <label>
//! END
//! ```
//!
//! Indices are 0-based. Entries that are absent are zero; repeated matrix
//! entries are summed. Cones are listed in row order and must cover every
//! cone row. Blank lines and lines starting with `#` are ignored. The
//! writer emits the shortest decimal that round-trips every `f64`.

use std::fmt::Write as _;

use crate::conic::{Cone, ConeKind, ConicProgram, Quantity, RowTag, VarTag};
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

const MAGIC: &str = "CONIC";
const VERSION: &str = "1";
/// Upper bound on any dimension accepted by the reader.
const MAX_DIM: usize = 1 << 22;

pub fn write_program(p: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "DIMS {} {} {}", p.n_vars, p.n_eq(), p.n_cone_rows());
    if p.c0 != 0.0 {
        let _ = writeln!(out, "OBJCONST {}", p.c0);
    }
    for (j, &v) in p.c.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "C {j} {v}");
        }
    }
    for (i, j, v) in p.a.triplets() {
        let _ = writeln!(out, "A {i} {j} {v}");
    }
    for (i, &v) in p.b.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "B {i} {v}");
        }
    }
    for (i, j, v) in p.g.triplets() {
        let _ = writeln!(out, "G {i} {j} {v}");
    }
    for (i, &v) in p.h.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "H {i} {v}");
        }
    }
    for cone in &p.cones {
        let kind = match cone.kind {
            ConeKind::Nonneg => "NONNEG",
            ConeKind::Soc => "SOC",
        };
        let _ = writeln!(out, "CONE {kind} {}", cone.dim);
    }
    for (j, tag) in p.var_tags.iter().enumerate() {
        if let Some(tag) = tag {
            let _ = writeln!(out, "VAR {j} {tag}");
        }
    }
    out.push_str("END\n");
    out
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse::<usize>()
        .map_err(|e| Error::parse(line, format!("bad {what}: {e}")))
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let v = tok
        .ok_or_else(|| Error::parse(line, "missing value"))?
        .parse::<f64>()
        .map_err(|e| Error::parse(line, format!("bad value: {e}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, "non-finite value"));
    }
    Ok(v)
}

fn check_index(i: usize, bound: usize, line: usize, what: &str) -> Result<usize> {
    if i < bound {
        Ok(i)
    } else {
        Err(Error::parse(line, format!("{what} index {i} out of range (< {bound})")))
    }
}

fn parse_tag(label: &str) -> Option<VarTag> {
    // quantity:tank:index@step
    let (head, step) = label.split_once('@')?;
    let mut parts = head.split(':');
    let quantity = match parts.next()? {
        "xi" => Quantity::State,
        "T" => Quantity::Rate,
        "xin" => Quantity::Influent,
        "aux" => Quantity::Aux,
        "epi" => Quantity::Epigraph,
        _ => return None,
    };
    let tank = parts.next()?.parse().ok()?;
    let index = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(VarTag {
        quantity,
        tank,
        index,
        step: step.parse().ok()?,
    })
}

pub fn read_program(text: &str) -> Result<ConicProgram> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| Error::parse(0, "empty input"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) || toks.next() != Some(VERSION) || toks.next().is_some() {
        return Err(Error::parse(ln, format!("expected header `{MAGIC} {VERSION}`")));
    }
    let (ln, dims) = lines.next().ok_or_else(|| Error::parse(ln, "missing DIMS"))?;
    let mut toks = dims.split_whitespace();
    if toks.next() != Some("DIMS") {
        return Err(Error::parse(ln, "expected DIMS"));
    }
    let n = parse_usize(toks.next(), ln, "variable count")?;
    let p = parse_usize(toks.next(), ln, "equality count")?;
    let m = parse_usize(toks.next(), ln, "cone row count")?;
    if toks.next().is_some() {
        return Err(Error::parse(ln, "trailing tokens"));
    }
    if n > MAX_DIM || p > MAX_DIM || m > MAX_DIM {
        return Err(Error::parse(ln, "dimension too large"));
    }

    let mut c = vec![0.0; n];
    let mut c0 = 0.0;
    let mut b = vec![0.0; p];
    let mut h = vec![0.0; m];
    let mut a_trip = Vec::new();
    let mut g_trip = Vec::new();
    let mut cones = Vec::new();
    let mut cone_rows = 0usize;
    let mut var_tags = vec![None; n];
    let mut ended = false;

    for (ln, line) in lines.by_ref() {
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default();
        match key {
            "OBJCONST" => c0 = parse_f64(toks.next(), ln)?,
            "C" => {
                let j = check_index(parse_usize(toks.next(), ln, "column")?, n, ln, "column")?;
                c[j] += parse_f64(toks.next(), ln)?;
            }
            "B" => {
                let i = check_index(parse_usize(toks.next(), ln, "row")?, p, ln, "row")?;
                b[i] += parse_f64(toks.next(), ln)?;
            }
            "H" => {
                let i = check_index(parse_usize(toks.next(), ln, "row")?, m, ln, "row")?;
                h[i] += parse_f64(toks.next(), ln)?;
            }
            "A" | "G" => {
                let rows = if key == "A" { p } else { m };
                let i = check_index(parse_usize(toks.next(), ln, "row")?, rows, ln, "row")?;
                let j = check_index(parse_usize(toks.next(), ln, "column")?, n, ln, "column")?;
                let v = parse_f64(toks.next(), ln)?;
                if key == "A" {
                    a_trip.push((i, j, v));
                } else {
                    g_trip.push((i, j, v));
                }
            }
            "CONE" => {
                let kind = match toks.next() {
                    Some("NONNEG") => ConeKind::Nonneg,
                    Some("SOC") => ConeKind::Soc,
                    other => return Err(Error::parse(ln, format!("unknown cone {other:?}"))),
                };
                let dim = parse_usize(toks.next(), ln, "cone dimension")?;
                if dim == 0 || (kind == ConeKind::Soc && dim < 2) {
                    return Err(Error::parse(ln, "invalid cone dimension"));
                }
                cone_rows = cone_rows
                    .checked_add(dim)
                    .filter(|&r| r <= m)
                    .ok_or_else(|| Error::parse(ln, "cones exceed the cone row count"))?;
                cones.push(Cone { kind, dim });
            }
            "VAR" => {
                let j = check_index(parse_usize(toks.next(), ln, "column")?, n, ln, "column")?;
                let label = toks.next().ok_or_else(|| Error::parse(ln, "missing label"))?;
                var_tags[j] = Some(parse_tag(label).ok_or_else(|| Error::parse(ln, "malformed label"))?);
            }
            "END" => {
                ended = true;
                break;
            }
            other => return Err(Error::parse(ln, format!("unknown record `{other}`"))),
        }
        if key != "VAR" && toks.next().is_some() {
            return Err(Error::parse(ln, "trailing tokens"));
        }
    }
    if !ended {
        return Err(Error::parse(0, "missing END"));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse(ln, "content after END"));
    }
    if cone_rows != m {
        return Err(Error::parse(0, format!("cones cover {cone_rows} of {m} cone rows")));
    }
    let n_cones = cones.len();
    let program = ConicProgram {
        n_vars: n,
        c,
        c0,
        a: CscMatrix::from_triplets(p, n, &a_trip),
        b,
        g: CscMatrix::from_triplets(m, n, &g_trip),
        h,
        cones,
        var_tags,
        eq_tags: vec![RowTag::Other; p],
        cone_tags: vec![RowTag::Other; n_cones],
    };
    program
        .validate()
        .map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{Affine, ConeRow, ProgramBuilder};

    fn sample() -> ConicProgram {
        let mut b = ProgramBuilder::new();
        let t = b.add_var(Some(VarTag {
            quantity: Quantity::Rate,
            tank: 1,
            index: 0,
            step: 3,
        }));
        let x = b.add_var(None);
        b.add_cost(t, 1.0);
        b.add_cost_expr(&Affine::constant(0.25), 1.0);
        b.add_eq(Affine::var(x) - Affine::constant(0.1), RowTag::Other);
        b.add_cone(
            ConeRow::soc(Affine::var(t), vec![Affine::constant(1.0), Affine::term(x, 1.0 / 3.0)]),
            RowTag::Other,
        );
        b.add_cone(ConeRow::nonneg(Affine::var(x)), RowTag::Other);
        b.build()
    }

    #[test]
    fn write_then_read_is_identity_on_data() {
        let p = sample();
        let text = write_program(&p);
        let q = read_program(&text).unwrap();
        assert_eq!(q.c, p.c);
        assert_eq!(q.c0, p.c0);
        assert_eq!(q.a, p.a);
        assert_eq!(q.g, p.g);
        assert_eq!(q.b, p.b);
        assert_eq!(q.h, p.h);
        assert_eq!(q.cones, p.cones);
        assert_eq!(q.var_tags, p.var_tags);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "CONIC 1\nDIMS 1 0 1\nC 3 1.0\nEND\n";
        match read_program(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_uncovered_cone_rows() {
        let text = "CONIC 1\nDIMS 1 0 2\nCONE NONNEG 1\nEND\n";
        assert!(read_program(text).is_err());
        let text = "CONIC 1\nDIMS 1 0 2\nCONE SOC 3\nEND\n";
        assert!(read_program(text).is_err());
    }

    #[test]
    fn rejects_nonfinite_and_garbage() {
        assert!(read_program("CONIC 1\nDIMS 1 0 0\nC 0 NaN\nEND\n").is_err());
        assert!(read_program("CONIC 1\nDIMS 1 0 0\nEND\nC 0 1\n").is_err());
        assert!(read_program("CONIC 2\n").is_err());
        assert!(read_program("").is_err());
    }
}
