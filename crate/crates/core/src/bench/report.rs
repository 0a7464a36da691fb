//! CSV and JSON output for benchmark rows. Both are deterministic: field
//! order follows the row struct and floats print in shortest round-trip form.

use serde::Serialize;

pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("rows serialise");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        ms: f64,
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = to_csv(&[Row { name: "a", ms: 0.5 }, Row { name: "b", ms: 2.0 }]);
        assert_eq!(s, "name,ms\na,0.5\nb,2.0\n");
    }
}
