//! Plain-text reports. Every number is written with a tag naming its error
//! bound or the method that produced it.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::problem::Quantity;

#[derive(Debug, Default, Clone)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(title: &str) -> Report {
        let mut r = Report::default();
        let _ = writeln!(r.text, "# {title}");
        r
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.text, "\n[{name}]");
        self
    }

    pub fn value(&mut self, name: &str, v: f64, tag: &str) -> &mut Self {
        let _ = writeln!(self.text, "{name} = {}  [{tag}]", num(v));
        self
    }

    pub fn bounded(&mut self, name: &str, v: f64, err: f64, method: &str) -> &mut Self {
        let _ = writeln!(self.text, "{name} = {}  [± {:.1e}; {method}]", num(v), err);
        self
    }

    pub fn quantity(&mut self, name: &str, q: &Quantity) -> &mut Self {
        self.bounded(name, q.value, q.error, q.method)
    }

    pub fn text(&mut self, name: &str, s: &str) -> &mut Self {
        let _ = writeln!(self.text, "{name} = {s}");
        self
    }

    pub fn line(&mut self, s: &str) -> &mut Self {
        let _ = writeln!(self.text, "{s}");
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// 17 significant digits; integers and infinities kept readable.
pub fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:.16e}")
    }
}

/// CSV float formatting (17 significant digits).
pub fn csv_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    io::Write::write_all(&mut tmp, contents.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_every_number() {
        let mut r = Report::new("t");
        r.section("s").value("a", 0.25, "exact").bounded("b", 1.0 / 3.0, 1e-12, "quadrature");
        let s = r.into_string();
        assert!(s.contains("a = 2.5000000000000000e-1  [exact]"));
        assert!(s.contains("b = 3.3333333333333331e-1  [± 1.0e-12; quadrature]"));
        assert_eq!(num(8.0), "8.0");
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
