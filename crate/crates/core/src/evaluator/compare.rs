use std::cmp::Ordering;

use super::{Cell, EvalError, ExecutionOutcome, Row};
use crate::partitioner::lexer::{lex, TokenKind};

/// Absolute tolerance for REAL cells.
pub const REAL_TOLERANCE: f64 = 1e-6;

fn numeric(c: &Cell) -> Option<f64> {
    match c {
        Cell::Integer(i) => Some(*i as f64),
        Cell::Real(r) => Some(*r),
        _ => None,
    }
}

/// Integers, text, blobs and NULL compare exactly; a REAL on either side
/// compares numerically within [`REAL_TOLERANCE`].
pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Integer(x), Cell::Integer(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        (Cell::Blob(x), Cell::Blob(y)) => x == y,
        (Cell::Real(_), _) | (_, Cell::Real(_)) => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => x == y || (x - y).abs() <= REAL_TOLERANCE,
            _ => false,
        },
        _ => false,
    }
}

fn rows_equal(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

fn type_rank(c: &Cell) -> u8 {
    match c {
        Cell::Null => 0,
        Cell::Integer(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
        Cell::Blob(_) => 3,
    }
}

fn cell_order(a: &Cell, b: &Cell) -> Ordering {
    type_rank(a).cmp(&type_rank(b)).then_with(|| match (a, b) {
        (Cell::Integer(x), Cell::Integer(y)) => x.cmp(y),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Blob(x), Cell::Blob(y)) => x.cmp(y),
        _ => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &Row, b: &Row) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cell_order(x, y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn has_real(rows: &[Row]) -> bool {
    rows.iter().flatten().any(|c| matches!(c, Cell::Real(_)))
}

/// Multiset equality. Sorted rows are compared pairwise first; when REAL
/// cells are present and that fails, rows are matched greedily so values
/// within tolerance that sort differently still pair up.
fn multiset_equal(a: &[Row], b: &[Row]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut sa: Vec<&Row> = a.iter().collect();
    let mut sb: Vec<&Row> = b.iter().collect();
    sa.sort_by(|x, y| row_order(x, y));
    sb.sort_by(|x, y| row_order(x, y));
    if sa.iter().zip(&sb).all(|(x, y)| rows_equal(x, y)) {
        return true;
    }
    if !has_real(a) && !has_real(b) {
        return false;
    }
    let mut used = vec![false; sb.len()];
    sa.iter().all(|row| {
        match sb
            .iter()
            .enumerate()
            .position(|(j, cand)| !used[j] && rows_equal(row, cand))
        {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

/// Compares two `Rows` outcomes as sequences (`ordered`) or multisets.
/// Column order inside a row is significant either way.
pub fn results_equal(
    a: &ExecutionOutcome,
    b: &ExecutionOutcome,
    ordered: bool,
) -> Result<bool, EvalError> {
    let (Some(ra), Some(rb)) = (&a.rows, &b.rows) else {
        return Err(EvalError::NotComparable);
    };
    if !a.is_rows() || !b.is_rows() {
        return Err(EvalError::NotComparable);
    }
    Ok(if ordered {
        ra.len() == rb.len() && ra.iter().zip(rb).all(|(x, y)| rows_equal(x, y))
    } else {
        multiset_equal(ra, rb)
    })
}

/// True when the statement's outermost level carries an `ORDER BY`. One
/// nested inside parentheses (a subquery or a parenthesized branch of a set
/// operation) does not order the final result.
pub fn needs_ordered_comparison(sql: &str) -> bool {
    let Ok(tokens) = lex(sql) else {
        return false;
    };
    let mut depth = 0i32;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.kind == TokenKind::Punct {
            match tok.text {
                "(" => depth += 1,
                ")" => depth -= 1,
                _ => {}
            }
        } else if depth == 0
            && tok.is_keyword("ORDER")
            && tokens.get(i + 1).is_some_and(|t| t.is_keyword("BY"))
        {
            return true;
        }
    }
    false
}
