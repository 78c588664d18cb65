//! Closed racing-track geometry in curvilinear coordinates.
//!
//! A track is a closed polyline of centerline waypoints with a constant
//! half-width. Progress `s` is arclength along the centerline, `e_y` is the
//! signed lateral offset (positive to the left of the driving direction) and
//! curvature is positive for left-hand turns.

use std::f64::consts::PI;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `half_width,<value>` header")]
    MissingHalfWidth,
    #[error("invalid track geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    waypoints: Vec<[f64; 2]>,
    cum_arclength: Vec<f64>,
    curvature: Vec<f64>,
    half_width: f64,
    total_length: f64,
}

impl Track {
    /// Builds a track from centerline points. The loop is closed implicitly;
    /// a trailing point that repeats the first one is dropped.
    pub fn from_waypoints(mut waypoints: Vec<[f64; 2]>, half_width: f64) -> Result<Self, TrackError> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(TrackError::Geometry(format!("half_width must be positive, got {half_width}")));
        }
        if waypoints.iter().flatten().any(|c| !c.is_finite()) {
            return Err(TrackError::Geometry("non-finite waypoint coordinate".into()));
        }
        let perimeter = |pts: &[[f64; 2]]| -> f64 {
            (0..pts.len()).map(|i| dist(pts[i], pts[(i + 1) % pts.len()])).sum()
        };
        if waypoints.len() >= 2 {
            let first = waypoints[0];
            let last = waypoints[waypoints.len() - 1];
            if dist(first, last) <= 1e-6 * perimeter(&waypoints) {
                waypoints.pop();
            }
        }
        let n = waypoints.len();
        if n < 4 {
            return Err(TrackError::Geometry(format!("need at least 4 waypoints, got {n}")));
        }

        let mut cum_arclength = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            cum_arclength.push(acc);
            let seg = dist(waypoints[i], waypoints[(i + 1) % n]);
            if seg <= 0.0 {
                return Err(TrackError::Geometry(format!("zero-length segment after waypoint {i}")));
            }
            acc += seg;
        }
        let total_length = acc;

        let curvature = (0..n)
            .map(|i| three_point_curvature(waypoints[(i + n - 1) % n], waypoints[i], waypoints[(i + 1) % n]))
            .collect();

        Ok(Self { waypoints, cum_arclength, curvature, half_width, total_length })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn cum_arclength(&self) -> &[f64] {
        &self.cum_arclength
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvature
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// `s` modulo the track length, in `[0, L)`.
    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.total_length);
        // rem_euclid can round up to exactly L for tiny negative inputs
        if w >= self.total_length {
            0.0
        } else {
            w
        }
    }

    /// Index of the segment containing wrapped `s` and the fraction along it.
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = self.wrap_s(s);
        let i = match self.cum_arclength.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let end = if i + 1 < self.cum_arclength.len() { self.cum_arclength[i + 1] } else { self.total_length };
        let t = (s - self.cum_arclength[i]) / (end - self.cum_arclength[i]);
        (i, t)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let j = (i + 1) % self.curvature.len();
        if t == 0.0 {
            return self.curvature[i];
        }
        self.curvature[i] + t * (self.curvature[j] - self.curvature[i])
    }

    /// True iff `|e_y| <= w_T`; the boundary itself counts as inside.
    pub fn inside_track(&self, e_y: f64) -> bool {
        e_y.abs() <= self.half_width
    }

    /// Centerline point, unit tangent and left normal at `s`.
    pub fn frame_at(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let (i, t) = self.locate(s);
        let a = self.waypoints[i];
        let b = self.waypoints[(i + 1) % self.waypoints.len()];
        let len = dist(a, b);
        let tangent = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let normal = [-tangent[1], tangent[0]];
        let point = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        (point, tangent, normal)
    }

    /// Cartesian position of the curvilinear point `(s, e_y)`.
    pub fn lift(&self, s: f64, e_y: f64) -> [f64; 2] {
        let (p, _, n) = self.frame_at(s);
        [p[0] + e_y * n[0], p[1] + e_y * n[1]]
    }

    /// Left and right boundary polylines, one point per waypoint.
    pub fn boundaries(&self) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        self.cum_arclength
            .iter()
            .map(|&s| (self.lift(s, self.half_width), self.lift(s, -self.half_width)))
            .unzip()
    }

    /// Writes the track in its text format.
    pub fn write<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "half_width,{}", self.half_width)?;
        for p in &self.waypoints {
            writeln!(out, "{},{}", p[0], p[1])?;
        }
        Ok(())
    }
}

/// Parses a track file: a `half_width,<value>` header followed by one `x,y`
/// row per waypoint. Blank lines and `#` comments are ignored.
pub fn load_track<R: BufRead>(source: R) -> Result<Track, TrackError> {
    let mut half_width = None;
    let mut waypoints = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if half_width.is_none() {
            match fields.as_slice() {
                ["half_width", v] => {
                    let w = parse_num(v, lineno)?;
                    half_width = Some(w);
                    continue;
                }
                _ => return Err(TrackError::MissingHalfWidth),
            }
        }
        match fields.as_slice() {
            [x, y] => waypoints.push([parse_num(x, lineno)?, parse_num(y, lineno)?]),
            _ => {
                return Err(TrackError::Parse {
                    line: lineno,
                    message: format!("expected `x,y`, got `{line}`"),
                })
            }
        }
    }
    let half_width = half_width.ok_or(TrackError::MissingHalfWidth)?;
    Track::from_waypoints(waypoints, half_width)
}

pub fn load_track_file(path: impl AsRef<std::path::Path>) -> Result<Track, TrackError> {
    let file = std::fs::File::open(path)?;
    load_track(std::io::BufReader::new(file))
}

fn parse_num(field: &str, line: usize) -> Result<f64, TrackError> {
    let v: f64 = field.parse().map_err(|_| TrackError::Parse {
        line,
        message: format!("`{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TrackError::Parse { line, message: format!("`{field}` is not finite") });
    }
    Ok(v)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Signed inverse radius of the circle through three points.
fn three_point_curvature(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> f64 {
    let cross = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0]);
    let denom = dist(p0, p1) * dist(p1, p2) * dist(p0, p2);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// Counter-clockwise circle of `n` points.
pub fn circle_waypoints(radius: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            [radius * th.cos(), radius * th.sin()]
        })
        .collect()
}

/// Counter-clockwise stadium: two straights of length `straight` joined by
/// semicircles of `radius`, sampled roughly every `spacing` metres.
pub fn stadium_waypoints(straight: f64, radius: f64, spacing: f64) -> Vec<[f64; 2]> {
    let n_straight = (straight / spacing).ceil().max(1.0) as usize;
    let n_arc = (PI * radius / spacing).ceil().max(2.0) as usize;
    let mut pts = Vec::new();
    let half = straight / 2.0;
    // bottom straight, heading +x
    for i in 0..n_straight {
        pts.push([-half + straight * i as f64 / n_straight as f64, -radius]);
    }
    for i in 0..n_arc {
        let th = -PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push([half + radius * th.cos(), radius * th.sin()]);
    }
    for i in 0..n_straight {
        pts.push([half - straight * i as f64 / n_straight as f64, radius]);
    }
    for i in 0..n_arc {
        let th = PI / 2.0 + PI * i as f64 / n_arc as f64;
        pts.push([-half + radius * th.cos(), radius * th.sin()]);
    }
    pts
}
