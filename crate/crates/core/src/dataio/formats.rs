use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::geometry::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One whitespace-separated `x y z` triple per line; `#` starts a comment line.
    XyzText,
    /// ASCII OFF; faces are ignored.
    Off,
    /// ASCII PLY; only the `x`, `y`, `z` properties of the `vertex` element are read.
    PlyAscii,
}

impl CloudFormat {
    /// Guesses from the extension (`.off`, `.ply`, anything else is xyz-text).
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("off") => CloudFormat::Off,
            Some("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::XyzText,
        }
    }
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next line that is neither blank nor a `#` comment, with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Some((i + 1, l));
            }
        }
        None
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.next_content() {
            Some(found) => Ok(found),
            None => Err(self.error(
                self.last,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }
}

fn parse_xyz(lines: &Lines, line: usize, text: &str, exact: bool) -> Result<Point> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 3 || (exact && fields.len() != 3) {
        return Err(lines.error(
            line,
            format!("expected 3 coordinates, found {}", fields.len()),
        ));
    }
    let mut xyz = [0.0; 3];
    for (slot, f) in xyz.iter_mut().zip(&fields) {
        *slot = f
            .parse::<f64>()
            .map_err(|_| lines.error(line, format!("invalid number {f:?}")))?;
        if !slot.is_finite() {
            return Err(lines.error(line, format!("non-finite coordinate {f:?}")));
        }
    }
    Ok(Point::new(xyz[0], xyz[1], xyz[2]))
}

fn parse_count(lines: &Lines, line: usize, token: Option<&str>, what: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.error(line, format!("missing or invalid {what}")))
}

fn finish(path: &Path, points: Vec<Point>) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "{}: no vertices",
            path.display()
        )));
    }
    PointCloud::new(points)
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(path, &text, format)
}

pub(crate) fn parse_cloud(path: &Path, text: &str, format: CloudFormat) -> Result<PointCloud> {
    let mut lines = Lines::new(path, text);
    let points = match format {
        CloudFormat::XyzText => {
            let mut pts = Vec::new();
            while let Some((n, l)) = lines.next_content() {
                pts.push(parse_xyz(&lines, n, l, true)?);
            }
            pts
        }
        CloudFormat::Off => parse_off(&mut lines)?,
        CloudFormat::PlyAscii => parse_ply(&mut lines)?,
    };
    finish(path, points)
}

fn parse_off(lines: &mut Lines) -> Result<Vec<Point>> {
    let (n, header) = lines.expect("OFF header")?;
    let mut tokens = header.split_whitespace();
    let magic = tokens.next().unwrap_or("");
    if !matches!(magic, "OFF" | "COFF" | "NOFF" | "CNOFF") {
        return Err(lines.error(n, format!("expected OFF header, found {magic:?}")));
    }
    let rest: Vec<&str> = tokens.collect();
    let (count_line, counts) = if rest.is_empty() {
        let (n, l) = lines.expect("vertex/face counts")?;
        (n, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (n, rest)
    };
    let vertices = parse_count(lines, count_line, counts.first().copied(), "vertex count")?;
    let mut pts = Vec::with_capacity(vertices);
    for _ in 0..vertices {
        let (n, l) = lines.expect("vertex line")?;
        pts.push(parse_xyz(lines, n, l, false)?);
    }
    Ok(pts)
}

fn parse_ply(lines: &mut Lines) -> Result<Vec<Point>> {
    let (n, magic) = lines.expect("ply header")?;
    if magic != "ply" {
        return Err(lines.error(n, "missing 'ply' magic"));
    }
    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let (n, l) = lines.expect("end_header")?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(lines.error(
                    n,
                    format!("unsupported PLY format {other:?}, only ascii is read"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = parse_count(lines, n, Some(count), "element count")?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", .., name] => match elements.last_mut() {
                Some(e) => e.2.push(name.to_string()),
                None => return Err(lines.error(n, "property before any element")),
            },
            _ => return Err(lines.error(n, format!("unrecognized header line {l:?}"))),
        }
    }
    let mut pts = Vec::new();
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                lines.expect("element line")?;
            }
            continue;
        }
        let index_of = |axis: &str| props.iter().position(|p| p == axis);
        let (Some(ix), Some(iy), Some(iz)) = (index_of("x"), index_of("y"), index_of("z")) else {
            return Err(lines.error(0, "vertex element lacks x/y/z properties"));
        };
        for _ in 0..*count {
            let (n, l) = lines.expect("vertex line")?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != props.len() {
                return Err(lines.error(
                    n,
                    format!(
                        "expected {} vertex properties, found {}",
                        props.len(),
                        fields.len()
                    ),
                ));
            }
            let picked = format!("{} {} {}", fields[ix], fields[iy], fields[iz]);
            pts.push(parse_xyz(lines, n, &picked, true)?);
        }
        break;
    }
    Ok(pts)
}

/// Writes xyz-text with shortest round-trip float formatting. `comments` are
/// emitted first as `# ...` lines.
pub fn write_xyz(path: &Path, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    write_atomic(path, |w| {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        for p in cloud.points() {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    })
}
