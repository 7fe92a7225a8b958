use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use fairscope_core::{AggregateInputs, ConfusionMatrix, ConfusionSet, Error as CoreError, GroupStats};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Rows of a confusions file may miss 1 by this much; they are renormalized.
pub const ROW_SUM_TOL: f64 = 1e-6;

struct Records {
    name: String,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_records<R: Read>(reader: R, name: &str) -> Result<Records, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::parse(name, line, 0, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(CliError::parse(name, 1, 0, "empty file"));
    }
    Ok(Records {
        name: name.to_string(),
        rows,
    })
}

impl Records {
    fn expect_header(&self, expected: &[String]) -> Result<(), CliError> {
        let (line, header) = &self.rows[0];
        for (j, want) in expected.iter().enumerate() {
            match header.get(j) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(CliError::parse(
                        &self.name,
                        *line,
                        j + 1,
                        format!("expected column `{want}`, found `{got}`"),
                    ))
                }
                None => return Err(CliError::parse(&self.name, *line, j + 1, format!("missing column `{want}`"))),
            }
        }
        if header.len() > expected.len() {
            return Err(CliError::parse(
                &self.name,
                *line,
                expected.len() + 1,
                format!("unexpected column `{}`", header[expected.len()]),
            ));
        }
        Ok(())
    }

    fn body(&self) -> impl Iterator<Item = &(u64, Vec<String>)> {
        self.rows.iter().skip(1)
    }

    fn check_len(&self, line: u64, fields: &[String], n: usize) -> Result<(), CliError> {
        if fields.len() != n {
            let col = fields.len().min(n) + 1;
            return Err(CliError::parse(
                &self.name,
                line,
                col,
                format!("expected {n} fields, found {}", fields.len()),
            ));
        }
        Ok(())
    }

    fn number(&self, line: u64, fields: &[String], j: usize) -> Result<f64, CliError> {
        let raw = &fields[j];
        let v: f64 = raw
            .parse()
            .map_err(|_| CliError::parse(&self.name, line, j + 1, format!("`{raw}` is not a number")))?;
        if !v.is_finite() {
            return Err(CliError::parse(&self.name, line, j + 1, format!("`{raw}` is not finite")));
        }
        Ok(v)
    }
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|e| CliError::io(path, e))
}

/// Reads a wide inputs file: `group,weight,true_0..true_{k-1},pred_0..pred_{k-1}`.
pub fn parse_inputs_csv(path: &Path) -> Result<AggregateInputs, CliError> {
    parse_inputs_reader(open(path)?, &path.display().to_string())
}

pub fn parse_inputs_reader<R: Read>(reader: R, name: &str) -> Result<AggregateInputs, CliError> {
    let recs = read_records(reader, name)?;
    let (hline, header) = &recs.rows[0];
    let n = header.len();
    if n < 6 || n % 2 != 0 {
        // Report the first column that breaks the expected layout.
        let k = (n.saturating_sub(2) / 2).max(2);
        recs.expect_header(&inputs_header(k))?;
        return Err(CliError::parse(name, *hline, n + 1, "header must have 2 + 2k columns with k >= 2"));
    }
    let k = (n - 2) / 2;
    recs.expect_header(&inputs_header(k))?;
    let mut groups = Vec::new();
    for (line, f) in recs.body() {
        recs.check_len(*line, f, n)?;
        if f[0].is_empty() {
            return Err(CliError::parse(name, *line, 1, "empty group id"));
        }
        let weight = recs.number(*line, f, 1)?;
        let true_props = (0..k).map(|y| recs.number(*line, f, 2 + y)).collect::<Result<Vec<_>, _>>()?;
        let pred_props = (0..k).map(|z| recs.number(*line, f, 2 + k + z)).collect::<Result<Vec<_>, _>>()?;
        groups.push(GroupStats::new(f[0].clone(), weight, true_props, pred_props));
    }
    Ok(AggregateInputs::new(groups)?)
}

fn inputs_header(k: usize) -> Vec<String> {
    let mut h = vec!["group".to_string(), "weight".to_string()];
    h.extend((0..k).map(|y| format!("true_{y}")));
    h.extend((0..k).map(|z| format!("pred_{z}")));
    h
}

fn confusions_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["group", "weight", "pi_y", "true_label"].iter().map(|s| s.to_string()).collect();
    h.extend((0..k).map(|z| format!("p_{z}")));
    h
}

/// True when the header row looks like a confusions file.
pub fn is_confusions_header(first_line: &str) -> bool {
    first_line
        .trim_start_matches('\u{feff}')
        .split(',')
        .map(str::trim)
        .take(4)
        .eq(["group", "weight", "pi_y", "true_label"])
}

/// Reads a long confusions file: one row per (group, true label) with header
/// `group,weight,pi_y,true_label,p_0..p_{k-1}`.
pub fn parse_confusions_csv(path: &Path) -> Result<ConfusionSet, CliError> {
    parse_confusions_reader(open(path)?, &path.display().to_string())
}

struct PendingGroup {
    weight: f64,
    weight_line: u64,
    pi: Vec<Option<f64>>,
    rows: Vec<Option<Vec<f64>>>,
}

pub fn parse_confusions_reader<R: Read>(reader: R, name: &str) -> Result<ConfusionSet, CliError> {
    let recs = read_records(reader, name)?;
    let (hline, header) = &recs.rows[0];
    let n = header.len();
    if n < 6 {
        recs.expect_header(&confusions_header(2))?;
        return Err(CliError::parse(name, *hline, n + 1, "header must have 4 + k columns with k >= 2"));
    }
    let k = n - 4;
    recs.expect_header(&confusions_header(k))?;

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, PendingGroup> = HashMap::new();
    for (line, f) in recs.body() {
        recs.check_len(*line, f, n)?;
        let id = f[0].clone();
        if id.is_empty() {
            return Err(CliError::parse(name, *line, 1, "empty group id"));
        }
        let weight = recs.number(*line, f, 1)?;
        let pi = recs.number(*line, f, 2)?;
        let y: usize = f[3]
            .parse()
            .map_err(|_| CliError::parse(name, *line, 4, format!("`{}` is not a label index", f[3])))?;
        if y >= k {
            return Err(CliError::parse(name, *line, 4, format!("label {y} out of range for k = {k}")));
        }
        let row = (0..k).map(|z| recs.number(*line, f, 4 + z)).collect::<Result<Vec<_>, _>>()?;
        let g = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            PendingGroup {
                weight,
                weight_line: *line,
                pi: vec![None; k],
                rows: vec![None; k],
            }
        });
        if (g.weight - weight).abs() > 1e-12 {
            return Err(CliError::parse(
                name,
                *line,
                2,
                format!(
                    "weight {weight} of `{id}` differs from {} given on line {}",
                    g.weight, g.weight_line
                ),
            ));
        }
        if g.rows[y].is_some() {
            return Err(CliError::parse(name, *line, 4, format!("label {y} repeated for `{id}`")));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < -ROW_SUM_TOL) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(CoreError::RowStochasticViolation { group: id, row: y, sum }.into());
        }
        g.pi[y] = Some(pi);
        g.rows[y] = Some(row.iter().map(|v| v.max(0.0) / sum).collect());
    }

    let mut per_group = Vec::with_capacity(order.len());
    for id in order {
        let g = pending.remove(&id).expect("group recorded in order");
        let missing: Vec<usize> = (0..k).filter(|&y| g.rows[y].is_none()).collect();
        if !missing.is_empty() {
            return Err(CliError::parse(
                name,
                g.weight_line,
                4,
                format!("group `{id}` lacks rows for labels {missing:?}"),
            ));
        }
        let pi: Vec<f64> = g.pi.into_iter().map(Option::unwrap).collect();
        let rows: Vec<Vec<f64>> = g.rows.into_iter().map(Option::unwrap).collect();
        per_group.push((GroupStats::new(id, g.weight, pi, Vec::new()), ConfusionMatrix::from_rows(rows)?));
    }
    Ok(ConfusionSet::new(per_group)?)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical wide CSV for `inputs`: fixed column order, 17 significant digits.
pub fn emit_inputs(inputs: &AggregateInputs) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(inputs_header(inputs.k())).expect("in-memory write");
    for g in &inputs.groups {
        let mut rec = vec![g.group_id.clone(), fmt17(g.weight)];
        rec.extend(g.true_props.iter().map(|&v| fmt17(v)));
        rec.extend(g.pred_props.iter().map(|&v| fmt17(v)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_GROUPS: &str = "group,weight,true_0,true_1,pred_0,pred_1\nL,0.5,0.7,0.3,0.5,0.5\nR,0.5,0.3,0.7,0.3,0.7\n";

    #[test]
    fn parses_two_groups() {
        let inp = parse_inputs_reader(TWO_GROUPS.as_bytes(), "two_group").unwrap();
        assert_eq!(inp.k(), 2);
        assert_eq!(inp.groups[1].group_id, "R");
        assert_eq!(inp.groups[1].pred_props, vec![0.3, 0.7]);
    }

    #[test]
    fn missing_pred_column_is_a_parse_error() {
        let s = "group,weight,true_0,true_1,pred_0\nL,0.5,0.7,0.3,0.5\n";
        match parse_inputs_reader(s.as_bytes(), "x") {
            Err(CliError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_position() {
        let s = "group,weight,true_0,true_1,pred_0,pred_1\nL,0.5,0.7,0.3,abc,0.5\n";
        match parse_inputs_reader(s.as_bytes(), "x") {
            Err(CliError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_row_reports_position() {
        let s = "group,weight,true_0,true_1,pred_0,pred_1\nL,0.5,0.7,0.3,0.5\n";
        assert!(matches!(
            parse_inputs_reader(s.as_bytes(), "x"),
            Err(CliError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn weights_near_one_are_renormalized() {
        let s = "group,weight,true_0,true_1,pred_0,pred_1\nL,0.5,0.7,0.3,0.5,0.5\nR,0.499999,0.3,0.7,0.3,0.7\n";
        let inp = parse_inputs_reader(s.as_bytes(), "x").unwrap();
        let sum: f64 = inp.groups.iter().map(|g| g.weight).sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn emit_round_trips() {
        let inp = parse_inputs_reader(TWO_GROUPS.as_bytes(), "two_group").unwrap();
        let canon = emit_inputs(&inp);
        let again = emit_inputs(&parse_inputs_reader(canon.as_bytes(), "c").unwrap());
        assert_eq!(canon, again);
        assert!(canon.starts_with("group,weight,true_0,true_1,pred_0,pred_1\nL,5.0000000000000000e-1,"));
    }

    #[test]
    fn confusions_identity_is_fair() {
        let s = "group,weight,pi_y,true_label,p_0,p_1\na,0.4,0.6,0,1,0\na,0.4,0.4,1,0,1\nb,0.6,0.2,0,1,0\nb,0.6,0.8,1,0,1\n";
        let set = parse_confusions_reader(s.as_bytes(), "x").unwrap();
        assert!(fairscope_core::is_fair(&set, 1e-12));
        assert_eq!(set.per_group[1].0.pred_props, vec![0.2, 0.8]);
    }

    #[test]
    fn confusions_row_sum_violation() {
        let s = "group,weight,pi_y,true_label,p_0,p_1\na,1,0.6,0,0.502,0.5\na,1,0.4,1,0,1\n";
        match parse_confusions_reader(s.as_bytes(), "x") {
            Err(CliError::Core(CoreError::RowStochasticViolation { group, row, sum })) => {
                assert_eq!((group.as_str(), row), ("a", 0));
                assert!((sum - 1.002).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn confusions_weight_must_be_consistent() {
        let s = "group,weight,pi_y,true_label,p_0,p_1\na,0.5,0.6,0,1,0\na,0.4,0.4,1,0,1\n";
        assert!(matches!(
            parse_confusions_reader(s.as_bytes(), "x"),
            Err(CliError::Parse { line: 3, column: 2, .. })
        ));
    }

    #[test]
    fn confusions_two_group_error() {
        let s = "group,weight,pi_y,true_label,p_0,p_1\nL,0.5,0.7,0,0.65,0.35\nL,0.5,0.3,1,0.15,0.85\nR,0.5,0.3,0,0.65,0.35\nR,0.5,0.7,1,0.15,0.85\n";
        let set = parse_confusions_reader(s.as_bytes(), "x").unwrap();
        assert!((fairscope_core::error_of(&set) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn header_detection() {
        assert!(is_confusions_header("group,weight,pi_y,true_label,p_0,p_1"));
        assert!(!is_confusions_header("group,weight,true_0,true_1,pred_0,pred_1"));
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
