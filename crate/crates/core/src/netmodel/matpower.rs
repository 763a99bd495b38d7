//! Reader for the subset of the MATPOWER `.m` case format used here:
//! `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch`. Everything else in
//! the script is skipped.

use std::fmt::Write as _;

use super::raw::{RawBranch, RawBus, RawCase, RawGen};
use crate::error::{Error, Result};

/// One numeric row of a matrix literal, with the line it started on.
#[derive(Debug, Clone)]
struct Row {
    line: usize,
    values: Vec<f64>,
}

#[derive(Debug, Default)]
struct Matrices {
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Finds `mpc.<name> =` at the start of a statement and returns the text
/// after the equals sign.
fn assignment<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let rest = line.trim_start().strip_prefix("mpc.")?;
    let rest = rest.strip_prefix(name)?;
    let rest = rest.trim_start();
    // `mpc.bus_name = ...` must not match `bus`
    let rest = rest.strip_prefix('=')?;
    Some(rest)
}

fn parse_number(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{what}: '{tok}' is not a number")))
}

pub fn parse_matpower(text: &str) -> Result<RawCase> {
    let mut found = Matrices::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, strip_comment(l)));

    while let Some((lineno, line)) = lines.next() {
        if let Some(rest) = assignment(line, "baseMVA") {
            let tok = rest.trim().trim_end_matches(';').trim();
            found.base_mva = Some(parse_number(tok, lineno, "mpc.baseMVA")?);
            continue;
        }
        for name in ["bus", "gen", "branch"] {
            let Some(rest) = assignment(line, name) else {
                continue;
            };
            let Some(open) = rest.find('[') else {
                return Err(Error::parse(lineno, format!("mpc.{name} is not a matrix literal")));
            };
            let rows = read_matrix(&rest[open + 1..], lineno, &mut lines, name)?;
            let slot = match name {
                "bus" => &mut found.bus,
                "gen" => &mut found.gen,
                _ => &mut found.branch,
            };
            *slot = Some(rows);
        }
    }

    let base_mva = found
        .base_mva
        .ok_or_else(|| Error::parse(0, "missing mpc.baseMVA"))?;
    let bus_rows = found.bus.ok_or_else(|| Error::parse(0, "missing mpc.bus"))?;
    let gen_rows = found.gen.ok_or_else(|| Error::parse(0, "missing mpc.gen"))?;
    let branch_rows = found.branch.ok_or_else(|| Error::parse(0, "missing mpc.branch"))?;

    let buses = bus_rows
        .iter()
        .map(|r| {
            need(r, 9, "mpc.bus")?;
            let v = &r.values;
            Ok(RawBus {
                id: as_id(v[0], r.line, "BUS_I")?,
                bus_type: as_small(v[1], r.line, "BUS_TYPE")?,
                pd: v[2],
                qd: v[3],
                gs: v[4],
                bs: v[5],
                vm: v[7],
                va_deg: v[8],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gens = gen_rows
        .iter()
        .map(|r| {
            need(r, 8, "mpc.gen")?;
            let v = &r.values;
            Ok(RawGen {
                bus: as_id(v[0], r.line, "GEN_BUS")?,
                pg: v[1],
                qg: v[2],
                vg: v[5],
                status: u8::from(v[7] > 0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let branches = branch_rows
        .iter()
        .map(|r| {
            need(r, 11, "mpc.branch")?;
            let v = &r.values;
            Ok(RawBranch {
                from: as_id(v[0], r.line, "F_BUS")?,
                to: as_id(v[1], r.line, "T_BUS")?,
                r: v[2],
                x: v[3],
                b: v[4],
                tap: v[8],
                shift_deg: v[9],
                status: u8::from(v[10] != 0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RawCase {
        base_mva,
        buses,
        gens,
        branches,
        participation: None,
    })
}

fn need(row: &Row, cols: usize, what: &str) -> Result<()> {
    if row.values.len() < cols {
        return Err(Error::parse(
            row.line,
            format!("{what} row has {} columns, need at least {cols}", row.values.len()),
        ));
    }
    Ok(())
}

fn as_id(v: f64, line: usize, field: &str) -> Result<u32> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(Error::parse(line, format!("{field} = {v} is not a valid bus id")));
    }
    Ok(v as u32)
}

fn as_small(v: f64, line: usize, field: &str) -> Result<u8> {
    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
        return Err(Error::parse(line, format!("{field} = {v} is not an integer code")));
    }
    Ok(v as u8)
}

fn read_matrix<'a>(
    first: &'a str,
    start_line: usize,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut current: Option<Row> = None;
    let mut pending = Some((start_line, first));
    loop {
        let (lineno, text) = match pending.take() {
            Some(p) => p,
            None => lines
                .next()
                .ok_or_else(|| Error::parse(start_line, format!("unterminated mpc.{name} matrix")))?,
        };
        let (body, closed) = match text.find(']') {
            Some(i) => (&text[..i], true),
            None => (text, false),
        };
        // ';' ends a row, so does the end of a line
        for (seg_idx, segment) in body.split(';').enumerate() {
            if seg_idx > 0 {
                if let Some(row) = current.take() {
                    rows.push(row);
                }
            }
            for tok in segment.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() || tok == "..." {
                    continue;
                }
                let value = parse_number(tok, lineno, &format!("mpc.{name}"))?;
                current
                    .get_or_insert_with(|| Row {
                        line: lineno,
                        values: Vec::new(),
                    })
                    .values
                    .push(value);
            }
        }
        if !body.trim_end().ends_with("...") {
            if let Some(row) = current.take() {
                rows.push(row);
            }
        }
        if closed {
            return Ok(rows);
        }
    }
}

/// Writes a case back out as a MATPOWER script.
pub fn write_matpower(raw: &RawCase, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", fmt(raw.base_mva));
    let _ = writeln!(out, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &raw.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t0\t1\t1.1\t0.9;",
            b.id,
            b.bus_type,
            fmt(b.pd),
            fmt(b.qd),
            fmt(b.gs),
            fmt(b.bs),
            fmt(b.vm),
            fmt(b.va_deg)
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &raw.gens {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t9999\t-9999\t{}\t{}\t{};",
            g.bus,
            fmt(g.pg),
            fmt(g.qg),
            fmt(g.vg),
            fmt(raw.base_mva),
            g.status
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &raw.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};",
            br.from,
            br.to,
            fmt(br.r),
            fmt(br.x),
            fmt(br.b),
            fmt(br.tap),
            fmt(br.shift_deg),
            br.status
        );
    }
    let _ = writeln!(out, "];");
    out
}

/// Shortest representation that round-trips exactly.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}
