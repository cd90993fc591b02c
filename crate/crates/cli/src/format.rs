//! Number formatting for human-readable tables.

/// Rounds to four significant digits and drops trailing zeros, e.g.
/// `0.3640 → "0.364"`, `361.04 → "361"`, `2285.4 → "2285"`.
pub fn sig4(x: f64) -> String {
    if x.is_nan() {
        return "-".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    let factor = 10f64.powi(3 - magnitude);
    let rounded = (x * factor).round() / factor;
    // rounding can carry into the next power of ten
    let decimals = if rounded.abs() >= 10f64.powi(magnitude + 1) {
        decimals.saturating_sub(1)
    } else {
        decimals
    };
    let mut s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Left-aligned first column, right-aligned rest, two spaces between.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width = vec![0; ncol];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (j, cell) in row.iter().enumerate().take(ncol) {
            width[j] = width[j].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate().take(ncol) {
            let pad = width[j] - cell.chars().count();
            if j == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        let cases = [
            (0.47871, "0.4787"),
            (330.34, "330.3"),
            (0.36401, "0.364"),
            (361.04, "361"),
            (2285.4, "2285"),
            (123456.0, "123500"),
            (-1.0186, "-1.019"),
            (0.0001234567, "0.0001235"),
            (9.99996, "10"),
            (0.0, "0"),
            (-0.00001, "-0.00001"),
        ];
        for (x, want) in cases {
            assert_eq!(sig4(x), want, "{x}");
        }
        assert_eq!(sig4(f64::NAN), "-");
    }

    #[test]
    fn table_alignment() {
        let t = render_table(
            &["name".into(), "v".into()],
            &[vec!["a".into(), "10".into()], vec!["bb".into(), "1".into()]],
        );
        assert_eq!(t, "name   v\na     10\nbb     1\n");
    }
}
